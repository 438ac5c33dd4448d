// passyn: passivity-constrained H2 synthesis from the command line.
//
//   passyn synthesize --plant P.json [--epsilon e] [--tau v|auto] [--n list|max] --out DIR
//   passyn validate --plant P.json
//   passyn respond --system S.json [--grid spec] --out F.csv
//
// Exit codes: 0 success, 2 validation failure, 3 solver failure, 4 I/O failure.

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "passyn/passyn.hpp"

namespace {

enum Exit { ok = 0, validation = 2, solver = 3, io = 4 };

int exit_for(passyn::Errc c) {
  switch (c) {
    case passyn::Errc::validation: return validation;
    case passyn::Errc::io: return io;
    default: return solver;
  }
}

std::vector<int> parse_schedule(const std::string& spec) {
  using passyn::Error;
  using passyn::Errc;
  std::vector<int> out;
  if (spec.empty()) return passyn::default_n_schedule();
  try {
    if (spec.find(',') == std::string::npos) {
      // A single value is the largest n; the default schedule is cut there.
      const int nmax = std::stoi(spec);
      for (int n : passyn::default_n_schedule())
        if (n <= nmax) out.push_back(n);
      if (out.empty() || out.back() != nmax) out.push_back(nmax);
      return out;
    }
    std::stringstream ss(spec);
    for (std::string tok; std::getline(ss, tok, ',');) out.push_back(std::stoi(tok));
  } catch (const std::exception&) {
    throw Error(Errc::validation, "cli", "--n must be an integer or a comma-separated list of integers");
  }
  return out;
}

void print_table(const passyn::SynthesisReport& r) {
  std::printf("J0_star = %.8g   tau = %.6g%s\n", r.J0_star, r.tau, r.tau_auto ? " (auto)" : "");
  if (r.J_unconstrained) std::printf("J_unconstrained = %.8g\n", *r.J_unconstrained);
  std::printf("%6s %16s %16s %10s %8s\n", "n", "J", "J_dual", "time_s", "q_order");
  for (const auto& s : r.sweep)
    std::printf("%6d %16.10g %16.10g %10.3f %8lld\n", s.n, s.J, s.Jd, s.time_s, static_cast<long long>(s.q_order));
  if (r.final_n)
    std::printf("final n = %d, Q order %lld -> %lld, osp margin %.3e, closed loop %s\n", *r.final_n,
                static_cast<long long>(r.final_q_order_full), static_cast<long long>(r.final_q_order), r.osp,
                r.closed_loop_stable ? "stable" : "UNSTABLE");
  if (r.pullback > 0.0) std::printf("recovered coefficients scaled by 1 - %.2g to restore feasibility\n", r.pullback);
  if (!r.monotone()) std::printf("warning: J increased with n at %zu point(s)\n", r.monotone_violations.size());
  std::printf("certification: %s\n", r.passed() ? "PASS" : "FAIL");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Passivity-constrained H2 controller synthesis"};
  app.require_subcommand(1);

  std::string plant_path, out_dir, tau_spec = "auto", n_spec, system_path, grid_spec = "default", csv_path;
  std::optional<double> epsilon;
  double budget = 0.0;
  int digits = 4, grid_points = 4096;

  auto* syn = app.add_subcommand("synthesize", "design a passivity-constrained controller");
  syn->add_option("--plant", plant_path, "plant JSON file")->required();
  syn->add_option("--epsilon", epsilon, "OSP parameter (defaults to the plant file's value, else 0.1)");
  syn->add_option("--tau", tau_spec, "bilinear transform parameter or 'auto'");
  syn->add_option("--n", n_spec, "comma-separated FIR orders, or a single largest order");
  syn->add_option("--out", out_dir, "output directory")->required();
  syn->add_option("--budget", budget, "wall-clock budget in seconds for the n sweep (0 = none)");
  syn->add_option("--digits", digits, "balanced truncation stop rule, significant figures");
  syn->add_option("--grid-points", grid_points, "frequency grid density");

  auto* val = app.add_subcommand("validate", "check the plant assumptions");
  val->add_option("--plant", plant_path, "plant JSON file")->required();

  auto* rsp = app.add_subcommand("respond", "tabulate frequency-response magnitudes");
  rsp->add_option("--system", system_path, "system or plant JSON file")->required();
  rsp->add_option("--grid", grid_spec, "default | log:lo:hi:count | lin:lo:hi:count");
  rsp->add_option("--out", csv_path, "CSV output path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*val) {
      const passyn::PlantFile f = passyn::parse_plant(plant_path);
      const passyn::PlantValidation v = passyn::validate_plant(f.plant);
      std::printf("minimal: %s\nhurwitz: %s\npassive: %s (PR margin %.3e)\n", v.minimal ? "yes" : "no",
                  v.hurwitz ? "yes" : "no", v.passive ? "yes" : "no", v.pr_margin);
      for (const auto& m : v.failures) std::fprintf(stderr, "validate: %s\n", m.c_str());
      return v.ok() ? ok : validation;
    }
    if (*rsp) {
      const passyn::StateSpace s = passyn::parse_system(system_path);
      passyn::FrequencyGrid g = s.domain == passyn::Domain::discrete && grid_spec == "default"
                                    ? passyn::uniform_disc_grid(4096)
                                    : passyn::parse_grid_spec(grid_spec, s.A);
      g.domain = s.domain;
      passyn::emit_frequency_csv({{"response", s}}, g, csv_path);
      return ok;
    }
    const passyn::PlantFile f = passyn::parse_plant(plant_path);
    passyn::SynthesisConfig cfg;
    cfg.epsilon = epsilon ? *epsilon : f.epsilon.value_or(0.1);
    if (tau_spec != "auto") {
      try {
        cfg.tau = std::stod(tau_spec);
      } catch (const std::exception&) {
        throw passyn::Error(passyn::Errc::validation, "cli", "--tau must be a number or 'auto'");
      }
    }
    cfg.n_schedule = parse_schedule(n_spec);
    cfg.time_budget_s = budget;
    cfg.truncation_digits = digits;
    cfg.grid_points = grid_points;
    const passyn::SynthesisReport rep = passyn::run_synthesis(f, cfg);
    passyn::write_artifacts(rep, f, out_dir, cfg.grid_points);
    print_table(rep);
    if (rep.failure) {
      std::fprintf(stderr, "%s\n", rep.failure->message.c_str());
      return exit_for(rep.failure->code);
    }
    return rep.passed() ? ok : solver;
  } catch (const passyn::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return exit_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return solver;
  }
}
