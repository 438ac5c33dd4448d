#pragma once

// End-to-end synthesis: plant files, validation, the n sweep, controller recovery and
// certification, plus the JSON/CSV artifacts the CLI writes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "passyn/certeq.hpp"
#include "passyn/sdp.hpp"

namespace passyn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------------------------
// JSON <-> matrices

namespace detail {

inline Mat matrix_from_json(const json& j, const std::string& key, const char* stage) {
  if (!j.is_array()) throw Error(Errc::validation, stage, "field \"" + key + "\" is not an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Mat(0, 0);
  if (!j[0].is_array()) throw Error(Errc::validation, stage, "field \"" + key + "\" is not an array of rows");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw Error(Errc::validation, stage,
                  "ragged rows in \"" + key + "\": row " + std::to_string(r) + " has " +
                      std::to_string(row.is_array() ? row.size() : 0) + " entries, expected " + std::to_string(cols));
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!row[c].is_number())
        throw Error(Errc::validation, stage,
                    "non-numeric entry in \"" + key + "\" at (" + std::to_string(r) + "," + std::to_string(c) + ")");
      M(r, c) = row[c].get<double>();
    }
  }
  return M;
}

inline json matrix_to_json(const Mat& M) {
  json a = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

// Restores shapes lost by an empty row list (e.g. a 0 x m input matrix).
inline Mat shaped(Mat M, Eigen::Index rows, Eigen::Index cols) {
  if (M.size() == 0 && (M.rows() != rows || M.cols() != cols)) return Mat(rows, cols);
  return M;
}

inline std::string read_text(const std::string& path, const char* stage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, stage, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(Errc::io, stage, "read failed for " + path);
  return ss.str();
}

inline json read_json(const std::string& path, const char* stage) {
  const std::string text = read_text(path, stage);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::validation, stage, "malformed JSON in " + path + ": " + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text, const char* stage) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, stage, "cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw Error(Errc::io, stage, "write failed for " + path);
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Plant files

struct PlantFile {
  PartitionedPlant plant;
  std::string name, notes;
  std::optional<double> epsilon;
  FictitiousNoise noise;
};

inline PlantFile parse_plant_json(const json& j) {
  constexpr const char* stage = "parse_plant";
  if (!j.is_object()) throw Error(Errc::validation, stage, "plant document is not a JSON object");
  PlantFile f;
  auto req = [&](const char* key) {
    if (!j.contains(key)) throw Error(Errc::validation, stage, std::string("missing field \"") + key + "\"");
    return detail::matrix_from_json(j.at(key), key, stage);
  };
  PartitionedPlant& P = f.plant;
  P.A = req("A");
  P.Bw = req("Bw");
  P.Bu = req("Bu");
  P.Cz = req("Cz");
  P.Cy = req("Cy");
  P.Duz = req("Duz");
  P.Duy = req("Duy");
  const Eigen::Index n = P.A.rows();
  P.Bw = detail::shaped(P.Bw, n, P.Bw.cols());
  P.Bu = detail::shaped(P.Bu, n, P.Bu.cols());
  P.Cz = detail::shaped(P.Cz, P.Cz.rows(), n);
  P.Cy = detail::shaped(P.Cy, P.Cy.rows(), n);
  P.Dwz = Mat::Zero(P.Cz.rows(), P.Bw.cols());
  P.Dwy = Mat::Zero(P.Cy.rows(), P.Bw.cols());
  try {
    P.validate(stage);
  } catch (const Error& e) {
    throw Error(Errc::validation, stage, std::string("dimension mismatch: ") + e.what());
  }
  if (P.ny() != P.nu())
    throw Error(Errc::validation, stage,
                "dimension mismatch: Cy has " + std::to_string(P.ny()) + " rows but Bu has " + std::to_string(P.nu()) +
                    " columns; the u -> y channel must be square");
  if (j.contains("name")) f.name = j.at("name").get<std::string>();
  if (j.contains("notes")) f.notes = j.at("notes").get<std::string>();
  if (j.contains("epsilon")) f.epsilon = j.at("epsilon").get<double>();
  if (j.contains("fictitious_noise")) {
    const json& fn = j.at("fictitious_noise");
    f.noise.intensity = fn.value("intensity", 0.0);
    const std::string dir = fn.value("direction", std::string("input"));
    if (dir == "input")
      f.noise.direction = FictitiousNoise::Direction::input;
    else if (dir == "state")
      f.noise.direction = FictitiousNoise::Direction::state;
    else
      throw Error(Errc::validation, stage, "fictitious_noise.direction must be \"input\" or \"state\"");
    if (!(f.noise.intensity >= 0.0)) throw Error(Errc::validation, stage, "fictitious_noise.intensity must be >= 0");
  }
  return f;
}

inline PlantFile parse_plant(const std::string& path) {
  return parse_plant_json(detail::read_json(path, "parse_plant"));
}

inline json plant_to_json(const PlantFile& f) {
  json j;
  if (!f.name.empty()) j["name"] = f.name;
  if (!f.notes.empty()) j["notes"] = f.notes;
  const PartitionedPlant& P = f.plant;
  j["A"] = detail::matrix_to_json(P.A);
  j["Bw"] = detail::matrix_to_json(P.Bw);
  j["Bu"] = detail::matrix_to_json(P.Bu);
  j["Cz"] = detail::matrix_to_json(P.Cz);
  j["Cy"] = detail::matrix_to_json(P.Cy);
  j["Duz"] = detail::matrix_to_json(P.Duz);
  j["Duy"] = detail::matrix_to_json(P.Duy);
  if (f.epsilon) j["epsilon"] = *f.epsilon;
  if (f.noise.intensity > 0.0)
    j["fictitious_noise"] = {{"intensity", f.noise.intensity},
                             {"direction", f.noise.direction == FictitiousNoise::Direction::state ? "state" : "input"}};
  return j;
}

// ---------------------------------------------------------------------------------------------
// State-space files (controllers, or any system handed to `respond`)

inline json system_to_json(const StateSpace& s, const std::string& name = {}) {
  json j;
  if (!name.empty()) j["name"] = name;
  j["domain"] = s.domain == Domain::continuous ? "continuous" : "discrete";
  j["states"] = s.states();
  j["inputs"] = s.inputs();
  j["outputs"] = s.outputs();
  j["A"] = detail::matrix_to_json(s.A);
  j["B"] = detail::matrix_to_json(s.B);
  j["C"] = detail::matrix_to_json(s.C);
  j["D"] = detail::matrix_to_json(s.D);
  if (s.inputs() == 1 && s.outputs() == 1) {
    const TransferFunction tf = siso_tf(s);
    j["tf"] = {{"num", tf.num}, {"den", tf.den}};
  }
  return j;
}

// Accepts a system file (A, B, C, D) or a plant file, whose w -> z channel is used.
inline StateSpace system_from_json(const json& j) {
  constexpr const char* stage = "parse_system";
  if (!j.is_object()) throw Error(Errc::validation, stage, "system document is not a JSON object");
  if (j.contains("Bw") && !j.contains("B")) return parse_plant_json(j).plant.channel_wz();
  for (const char* k : {"A", "B", "C", "D"})
    if (!j.contains(k)) throw Error(Errc::validation, stage, std::string("missing field \"") + k + "\"");
  StateSpace s;
  s.A = detail::matrix_from_json(j.at("A"), "A", stage);
  s.B = detail::matrix_from_json(j.at("B"), "B", stage);
  s.C = detail::matrix_from_json(j.at("C"), "C", stage);
  s.D = detail::matrix_from_json(j.at("D"), "D", stage);
  const Eigen::Index n = j.value("states", static_cast<Eigen::Index>(s.A.rows()));
  const Eigen::Index m = j.value("inputs", static_cast<Eigen::Index>(s.D.cols()));
  const Eigen::Index p = j.value("outputs", static_cast<Eigen::Index>(s.D.rows()));
  s.A = detail::shaped(s.A, n, n);
  s.B = detail::shaped(s.B, n, m);
  s.C = detail::shaped(s.C, p, n);
  s.D = detail::shaped(s.D, p, m);
  const std::string dom = j.value("domain", std::string("continuous"));
  if (dom != "continuous" && dom != "discrete")
    throw Error(Errc::validation, stage, "domain must be \"continuous\" or \"discrete\"");
  s.domain = dom == "continuous" ? Domain::continuous : Domain::discrete;
  try {
    s.validate(stage);
  } catch (const Error& e) {
    throw Error(Errc::validation, stage, std::string("dimension mismatch: ") + e.what());
  }
  return s;
}

inline StateSpace parse_system(const std::string& path) {
  return system_from_json(detail::read_json(path, "parse_system"));
}

// ---------------------------------------------------------------------------------------------
// Frequency-response CSV

// `omega` column, then ||T(j omega)||_2 per labeled system. Discrete systems are evaluated at
// the angle omega (rad/sample).
inline std::string frequency_csv(const std::vector<std::pair<std::string, StateSpace>>& systems,
                                 const FrequencyGrid& grid) {
  std::vector<FrequencyEvaluator> ev;
  ev.reserve(systems.size());
  for (const auto& [label, s] : systems) ev.emplace_back(s);
  std::string out = "omega";
  for (const auto& [label, s] : systems) out += "," + label;
  out += "\n";
  char buf[64];
  for (double w : grid.points) {
    std::snprintf(buf, sizeof buf, "%.12e", w);
    out += buf;
    for (const auto& e : ev) {
      double mag = std::numeric_limits<double>::infinity();  // grid point on a pole
      try {
        const CMat G = e.at(w);
        mag = G.size() ? Eigen::JacobiSVD<CMat>(G).singularValues()(0) : 0.0;
      } catch (const Error&) {
      }
      std::snprintf(buf, sizeof buf, ",%.12e", mag);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

inline void emit_frequency_csv(const std::vector<std::pair<std::string, StateSpace>>& systems,
                               const FrequencyGrid& grid, const std::string& path) {
  detail::write_text(path, frequency_csv(systems, grid), "emit_frequency_csv");
}

// "default" (grid from the given dynamics), or "log:lo:hi:count" / "lin:lo:hi:count".
inline FrequencyGrid parse_grid_spec(const std::string& spec, const Mat& A, int default_count = 4096) {
  constexpr const char* stage = "parse_grid";
  if (spec.empty() || spec == "default") return default_grid(A, default_count);
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() != 4 || (parts[0] != "log" && parts[0] != "lin"))
    throw Error(Errc::validation, stage, "grid spec must be default, log:lo:hi:count or lin:lo:hi:count");
  double lo = 0.0, hi = 0.0;
  long count = 0;
  try {
    lo = std::stod(parts[1]);
    hi = std::stod(parts[2]);
    count = std::stol(parts[3]);
  } catch (const std::exception&) {
    throw Error(Errc::validation, stage, "grid spec has non-numeric fields");
  }
  if (count < 2 || !(hi > lo) || (parts[0] == "log" && !(lo > 0.0)))
    throw Error(Errc::validation, stage, "grid spec needs count >= 2, hi > lo, and lo > 0 for log spacing");
  FrequencyGrid g;
  for (long i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / (count - 1);
    g.points.push_back(parts[0] == "log" ? std::pow(10.0, std::log10(lo) + t * (std::log10(hi) - std::log10(lo)))
                                         : lo + t * (hi - lo));
  }
  return g;
}

// ---------------------------------------------------------------------------------------------
// Plant validation

struct PlantValidation {
  bool minimal = true;
  bool hurwitz = true;
  bool passive = true;
  double abscissa = 0.0;
  double pr_margin = 0.0;
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};

inline PlantValidation validate_plant(const PartitionedPlant& P, int grid_points = 4096) {
  PlantValidation v;
  P.validate("validate");
  const StateSpace full{P.A, hstack(P.Bw, P.Bu), vstack(P.Cz, P.Cy), Mat::Zero(P.nz() + P.ny(), P.nw() + P.nu()),
                        Domain::continuous};
  const MinrealReport mr = minreal_check(full);
  if (!mr.controllable || !mr.observable) {
    v.minimal = false;
    std::string msg = "realization is not minimal:";
    if (!mr.controllable) msg += " " + std::to_string(mr.uncontrollable_modes.size()) + " uncontrollable mode(s)";
    if (!mr.observable) msg += " " + std::to_string(mr.unobservable_modes.size()) + " unobservable mode(s)";
    v.failures.push_back(msg);
  }
  v.abscissa = P.n() ? spectral_abscissa(P.A) : -std::numeric_limits<double>::infinity();
  if (!(v.abscissa < 0.0)) {
    v.hurwitz = false;
    char buf[128];
    std::snprintf(buf, sizeof buf, "A is not Hurwitz (spectral abscissa %.6g); the plant gain is unbounded", v.abscissa);
    v.failures.push_back(buf);
    v.passive = false;
    return v;
  }
  const StateSpace Puy = P.channel_uy();
  const FrequencyGrid grid = default_grid(P.A, grid_points);
  v.pr_margin = pr_margin(Puy, grid);
  const double scale = std::max(1.0, hinf_norm_grid(Puy, grid));
  if (v.pr_margin < -1e-9 * scale) {
    v.passive = false;
    char buf[128];
    std::snprintf(buf, sizeof buf, "u -> y channel is not passive (PR margin %.6g on the frequency grid)", v.pr_margin);
    v.failures.push_back(buf);
  }
  return v;
}

// ---------------------------------------------------------------------------------------------
// Synthesis

inline std::vector<int> default_n_schedule() {
  std::vector<int> s;
  for (int n = 0; n <= 24; n += 2) s.push_back(n);
  for (int n : {32, 48, 64, 100}) s.push_back(n);
  return s;
}

struct SynthesisConfig {
  double epsilon = 0.1;
  std::optional<double> tau;  // empty: chosen by select_tau
  std::vector<int> n_schedule = default_n_schedule();
  int grid_points = 4096;
  int truncation_digits = 4;
  double time_budget_s = 0.0;  // stop the sweep once exceeded; 0 disables
  bool reduce_each_n = true;   // report the reduced Q order for every n, not only the final one
  std::optional<FictitiousNoise> noise;  // overrides the plant file
  SdpOptions sdp;
  Op7Options op7;

  void validate() const {
    if (!(epsilon > 0.0)) throw Error(Errc::validation, "config", "epsilon must be positive");
    if (tau && !(*tau > 0.0)) throw Error(Errc::validation, "config", "tau must be positive");
    if (n_schedule.empty()) throw Error(Errc::validation, "config", "n schedule is empty");
    for (std::size_t i = 0; i < n_schedule.size(); ++i) {
      if (n_schedule[i] < 0) throw Error(Errc::validation, "config", "n schedule entries must be >= 0");
      if (i && n_schedule[i] <= n_schedule[i - 1])
        throw Error(Errc::validation, "config", "n schedule must be strictly increasing");
    }
    if (grid_points < 16) throw Error(Errc::validation, "config", "grid needs at least 16 points");
    if (truncation_digits < 1) throw Error(Errc::validation, "config", "truncation digits must be >= 1");
  }
};

struct SweepRecord {
  int n = 0;
  double J = 0.0;    // primal value at the recovered Markov parameters
  double Jd = 0.0;   // dual bound
  double time_s = 0.0;
  Eigen::Index U_order = 0;
  Eigen::Index q_order_full = 0;
  Eigen::Index q_order = -1;  // after balanced truncation; -1 when not computed
  bool converged = false;
  Vec x;
};

struct StageFailure {
  std::string stage;
  Errc code = Errc::invariant;
  std::string message;
};

struct SynthesisReport {
  std::string plant_name;
  double epsilon = 0.0;
  double tau = 0.0;
  bool tau_auto = false;
  double tau_rho = 0.0;
  FictitiousNoise noise;

  PlantValidation validation;
  double J0_star = 0.0;
  double warm_start_osp = 0.0;
  StateSpace K0;
  std::optional<double> J_unconstrained;
  std::string unconstrained_note;

  std::vector<SweepRecord> sweep;
  std::vector<int> skipped_n;
  std::vector<int> monotone_violations;

  std::optional<int> final_n;
  double final_J = 0.0;
  double final_J_reduced = 0.0;    // discrete objective of the truncated Q
  double final_J_continuous = 0.0; // closed-loop H2 cost of the continuous controller
  Eigen::Index final_q_order_full = 0, final_q_order = 0;
  double pullback = 0.0;           // x scaled by (1 - pullback) to restore strict feasibility
  StateSpace K;
  double osp = -std::numeric_limits<double>::infinity();
  bool closed_loop_stable = false;

  std::optional<StageFailure> failure;
  double total_time_s = 0.0;

  bool passed() const { return !failure && final_n && closed_loop_stable && osp >= -1e-6; }
  bool monotone() const { return monotone_violations.empty(); }

  json to_json(bool include_timing = true) const {
    json j;
    j["plant"] = plant_name;
    j["epsilon"] = epsilon;
    j["tau"] = tau;
    j["tau_auto"] = tau_auto;
    if (tau_auto) j["tau_spectral_radius"] = tau_rho;
    j["fictitious_noise"] = {{"intensity", noise.intensity},
                             {"direction", noise.direction == FictitiousNoise::Direction::state ? "state" : "input"}};
    j["validation"] = {{"minimal", validation.minimal},
                       {"hurwitz", validation.hurwitz},
                       {"passive", validation.passive},
                       {"pr_margin", validation.pr_margin},
                       {"failures", validation.failures}};
    j["warm_start"] = {{"J0_star", J0_star}, {"osp_margin", warm_start_osp}, {"order", K0.states()}};
    if (J_unconstrained)
      j["unconstrained"] = {{"J", *J_unconstrained}};
    else
      j["unconstrained"] = {{"J", nullptr}, {"note", unconstrained_note}};
    json rows = json::array();
    for (const SweepRecord& r : sweep) {
      json row = {{"n", r.n},
                  {"J", r.J},
                  {"J_dual", r.Jd},
                  {"converged", r.converged},
                  {"U_order", r.U_order},
                  {"q_order_full", r.q_order_full}};
      row["q_order"] = r.q_order >= 0 ? json(r.q_order) : json(nullptr);
      if (include_timing) row["time_s"] = r.time_s;
      rows.push_back(std::move(row));
    }
    j["table"] = rows;
    j["skipped_n"] = skipped_n;
    j["monotone"] = monotone();
    j["monotone_violations"] = monotone_violations;
    json norm;
    if (J_unconstrained && *J_unconstrained > 0.0) {
      json a = json::array();
      for (const SweepRecord& r : sweep) a.push_back({{"n", r.n}, {"ratio", r.J / *J_unconstrained}});
      norm["by_unconstrained"] = a;
    }
    if (!sweep.empty() && sweep.back().J > 0.0) {
      json a = json::array();
      for (const SweepRecord& r : sweep) a.push_back({{"n", r.n}, {"ratio", r.J / sweep.back().J}});
      norm["by_largest_n"] = {{"reference_n", sweep.back().n}, {"values", a}};
    }
    j["normalized"] = norm;
    if (final_n) {
      j["final"] = {{"n", *final_n},
                    {"J", final_J},
                    {"J_reduced", final_J_reduced},
                    {"J_continuous", final_J_continuous},
                    {"q_order_full", final_q_order_full},
                    {"q_order", final_q_order},
                    {"feasibility_pullback", pullback},
                    {"controller_order", K.states()},
                    {"osp_margin", osp},
                    {"closed_loop_stable", closed_loop_stable},
                    {"improvement_over_warm_start", final_J > 0.0 ? J0_star / final_J : 0.0}};
    }
    j["certification"] = passed() ? "PASS" : "FAIL";
    if (failure)
      j["failure"] = {{"stage", failure->stage}, {"code", errc_name(failure->code)}, {"message", failure->message}};
    if (include_timing) j["total_time_s"] = total_time_s;
    return j;
  }
};

namespace detail {

template <class F>
auto run_stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.stage() == name) throw;
    throw Error(e.code(), name, e.what());
  } catch (const std::bad_alloc&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(Errc::invariant, name, e.what());
  }
}

// Discrete objective of a complete Youla parameter: ||P_fz - P_uz Q P_fy||^2 / tau.
inline double total_q_objective(const FChannel& f, const StateSpace& Puz, const StateSpace& Q, double tau) {
  return h2_norm_dt_squared(parallel(f.fz, series(series(f.fy, Q), Puz), -1.0)) / tau;
}

}  // namespace detail

// Recovers the continuous controller from a discrete Youla parameter and certifies it.
struct Certification {
  StateSpace K;
  double osp = -std::numeric_limits<double>::infinity();
  bool stable = false;
};

inline Certification certify_q(const PartitionedPlant& P, const DiscretePlant& d, const StateSpace& Q, double eps,
                               int grid_points) {
  auto check = [&](const StateSpace& Kd) {
    Certification c;
    c.K = map_controller_d2c(Kd, d.tau);
    c.stable = internally_stable(P, c.K);
    if (c.stable) c.osp = osp_margin(c.K, eps, default_grid(blkdiag(P.A, c.K.A), grid_points));
    return c;
  };
  // A slow plant pole makes K(0) hypersensitive to Q(1), and minimal-realization cleanup can push a
  // near-cancelled pole across the unit circle. Certify the full realization and keep the reduced
  // one only when it is no worse.
  const StateSpace Kd = k_from_q(Q, d.channel_uy(), false);
  const Certification full = check(Kd);
  if (!full.stable) return full;
  try {
    const Certification reduced = check(cleanup(Kd));
    if (reduced.stable && reduced.osp >= full.osp - 1e-9 * (1.0 + std::abs(full.osp))) return reduced;
  } catch (const Error&) {
  }
  return full;
}

inline SynthesisReport run_synthesis(const PlantFile& file, const SynthesisConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  auto seconds = [](clock::time_point a) { return std::chrono::duration<double>(clock::now() - a).count(); };

  SynthesisReport rep;
  rep.plant_name = file.name;
  rep.epsilon = cfg.epsilon;
  rep.noise = cfg.noise ? *cfg.noise : file.noise;
  const PartitionedPlant& P = file.plant;
  try {
    detail::run_stage("config", [&] { cfg.validate(); return 0; });

    rep.validation = detail::run_stage("validate", [&] { return validate_plant(P, cfg.grid_points); });
    if (!rep.validation.ok()) {
      std::string msg;
      for (const auto& m : rep.validation.failures) msg += (msg.empty() ? "" : "; ") + m;
      throw Error(Errc::validation, "validate", msg);
    }

    const SuboptimalDesign design = detail::run_stage(
        "warm_start", [&] { return certainty_equivalent_design(P, cfg.epsilon, rep.noise, cfg.sdp); });
    rep.K0 = design.K0;
    rep.J0_star = design.J0_star;
    rep.warm_start_osp = osp_margin(design.K0, cfg.epsilon, default_grid(blkdiag(P.A, design.K0.A), cfg.grid_points));
    try {
      rep.J_unconstrained = closed_loop_cost(P, unconstrained_h2(P, design.filter));
    } catch (const Error& e) {
      rep.unconstrained_note = e.what();
    }

    if (cfg.tau) {
      rep.tau = *cfg.tau;
    } else {
      const TauSelection ts = detail::run_stage("select_tau", [&] { return select_tau(P, design.K0); });
      rep.tau = ts.tau;
      rep.tau_rho = ts.rho;
      rep.tau_auto = true;
    }
    const double tau = rep.tau;

    const DiscretePlant d = detail::run_stage("bilinear", [&] { return discretize_plant(P, tau); });
    const FChannel f = detail::run_stage("f_channel", [&] { return f_channel(d); });
    const SpectralFactorF F =
        detail::run_stage("spectral", [&] { return factor_F(factor_S(d, cfg.epsilon)); });
    const IncrementalPlant V = detail::run_stage(
        "incremental_plant", [&] { return build_incremental_plant(d, map_controller_c2d(design.K0, tau)); });
    const StateSpace Puz = d.channel_uz();
    const Eigen::Index nu = P.nu();
    TruncationOptions trunc;
    trunc.rel_tol = 0.5 * std::pow(10.0, -cfg.truncation_digits);
    auto probe = [&](const StateSpace& Q) { return detail::total_q_objective(f, Puz, Q, tau); };
    auto full_q = [&](const Vec& x, bool reduce = true) {
      return total_q(V.K0, V.N0, fir_realization(markov_from_x(x, nu)), reduce);
    };

    for (int n : cfg.n_schedule) {
      if (cfg.time_budget_s > 0.0 && seconds(t_start) > cfg.time_budget_s) {
        rep.skipped_n.push_back(n);
        continue;
      }
      const std::string tag = "solve n=" + std::to_string(n);
      const auto t0 = clock::now();
      SweepRecord rec = detail::run_stage(tag.c_str(), [&] {
        SweepRecord r;
        r.n = n;
        const QuadraticObjective q = objective_quadratic(assemble_partitioned(V, n), tau);
        const ConstraintU U = build_constraint_U_affine(V, F, n);
        const Op7Result o = solve_op7(q, U, cfg.op7);
        r.J = o.J;
        r.Jd = o.Jd;
        r.converged = o.converged;
        r.U_order = U.states();
        r.x = o.x;
        return r;
      });
      rec.time_s = seconds(t0);
      if (cfg.reduce_each_n) {
        detail::run_stage(tag.c_str(), [&] {
          const StateSpace Q = full_q(rec.x);
          rec.q_order_full = Q.states();
          rec.q_order = balanced_truncate(Q, probe, trunc).sys.states();
          return 0;
        });
      }
      if (!rep.sweep.empty()) {
        const double prev = rep.sweep.back().J;
        if (rec.J - prev > 1e-8 * std::abs(prev)) rep.monotone_violations.push_back(n);
      }
      rep.sweep.push_back(std::move(rec));
    }
    if (rep.sweep.empty()) throw Error(Errc::not_converged, "sweep", "time budget exhausted before any n was solved");

    const SweepRecord& last = rep.sweep.back();
    rep.final_n = last.n;
    rep.final_J = last.J;
    detail::run_stage("controller", [&] {
      auto certified = [&](const StateSpace& Qr) {
        try {
          const Certification c = certify_q(P, d, Qr, cfg.epsilon, cfg.grid_points);
          return c.stable && c.osp >= -1e-6;
        } catch (const Error&) {
          return false;
        }
      };
      // Near the constraint boundary a tiny realization error in Q becomes a large OSP violation in
      // K, so Q stays unreduced here and only the guarded truncation removes states. The recovered x
      // can still land just outside; x = 0 is the feasible warm start, so shrink toward it.
      StateSpace Q = full_q(last.x, false);
      if (!certified(Q)) {
        double lo = 0.0;
        for (double delta = 1e-6; delta <= 0.5; delta *= 10.0) {
          const StateSpace Qs = full_q((1.0 - delta) * last.x, false);
          if (certified(Qs)) {
            Q = Qs;
            rep.pullback = delta;
            break;
          }
          lo = delta;
        }
        // Every pulled-back step costs objective, so narrow the decade down to a few percent.
        for (int it = 0; rep.pullback > 0.0 && it < 6; ++it) {
          const double mid = 0.5 * (lo + rep.pullback);
          const StateSpace Qs = full_q((1.0 - mid) * last.x, false);
          if (certified(Qs)) {
            Q = Qs;
            rep.pullback = mid;
          } else {
            lo = mid;
          }
        }
      }
      TruncationOptions topt = trunc;
      topt.guard = certified;
      const TruncationResult tr = balanced_truncate(Q, probe, topt);
      rep.final_q_order_full = tr.order_full;
      rep.final_q_order = tr.sys.states();
      rep.final_J_reduced = tr.probe_reduced;
      const Certification c = certify_q(P, d, tr.sys, cfg.epsilon, cfg.grid_points);
      rep.K = c.K;
      rep.osp = c.osp;
      rep.closed_loop_stable = c.stable;
      if (c.stable) rep.final_J_continuous = closed_loop_cost(P, c.K);
      return 0;
    });
  } catch (const Error& e) {
    rep.failure = StageFailure{e.stage(), e.code(), e.what()};
  }
  rep.total_time_s = seconds(t_start);
  return rep;
}

// Writes report.json, the controller files and the response CSVs into dir. Partial results are
// written as well when the run failed.
inline void write_artifacts(const SynthesisReport& rep, const PlantFile& file, const std::string& dir,
                            int grid_points = 4096) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "write_artifacts", "cannot create " + dir + ": " + ec.message());
  const fs::path base(dir);
  detail::write_text((base / "report.json").string(), rep.to_json().dump(2) + "\n", "write_artifacts");
  const PartitionedPlant& P = file.plant;
  std::vector<std::pair<std::string, StateSpace>> loops{{"open_loop", P.channel_wz()}};
  std::vector<std::pair<std::string, StateSpace>> ctrls;
  Mat dyn = P.A;
  if (rep.K0.D.size()) {
    detail::write_text((base / "controller_K0.json").string(), system_to_json(rep.K0, "K0").dump(2) + "\n",
                       "write_artifacts");
    loops.emplace_back("K0", feedback(P, rep.K0));
    ctrls.emplace_back("K0", rep.K0);
  }
  if (rep.final_n && rep.K.D.size()) {
    const std::string label = "K" + std::to_string(*rep.final_n);
    detail::write_text((base / "controller.json").string(), system_to_json(rep.K, label).dump(2) + "\n",
                       "write_artifacts");
    if (rep.closed_loop_stable) loops.emplace_back(label, feedback(P, rep.K));
    ctrls.emplace_back(label, rep.K);
  }
  for (const auto& [l, s] : loops) dyn = blkdiag(dyn, s.A);
  const FrequencyGrid grid = default_grid(dyn, grid_points);
  emit_frequency_csv(loops, grid, (base / "response_wz.csv").string());
  if (!ctrls.empty()) emit_frequency_csv(ctrls, grid, (base / "response_controllers.csv").string());
}

}  // namespace passyn
