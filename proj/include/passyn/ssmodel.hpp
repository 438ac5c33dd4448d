#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "passyn/matkit.hpp"

namespace passyn {

enum class Domain { continuous, discrete };

// (A, B, C, D). For discrete systems the blocks play the role of (Phi, Gamma, Pi, Delta).
struct StateSpace {
  Mat A, B, C, D;
  Domain domain = Domain::continuous;

  Eigen::Index states() const { return A.rows(); }
  Eigen::Index inputs() const { return D.cols(); }
  Eigen::Index outputs() const { return D.rows(); }

  void validate(const char* stage = "ssmodel") const {
    const auto n = A.rows();
    if (A.cols() != n || B.rows() != n || C.cols() != n || C.rows() != D.rows() || B.cols() != D.cols())
      throw Error(Errc::validation, stage, "state-space dimensions are inconsistent");
    if (!A.allFinite() || !B.allFinite() || !C.allFinite() || !D.allFinite())
      throw Error(Errc::validation, stage, "state-space data has non-finite entries");
  }

  bool is_stable() const {
    if (states() == 0) return true;
    return domain == Domain::continuous ? spectral_abscissa(A) < 0.0 : spectral_radius(A) < 1.0;
  }

  static StateSpace gain(const Mat& D, Domain dom) {
    return {Mat(0, 0), Mat(0, D.cols()), Mat(D.rows(), 0), D, dom};
  }
};

inline StateSpace similarity(const StateSpace& s, const Mat& T) {
  // x_new = T x
  const Mat Ti = inv(T);
  return {T * s.A * Ti, T * s.B, s.C * Ti, s.D, s.domain};
}

// G2 * G1: the signal passes through g1 first.
inline StateSpace series(const StateSpace& g1, const StateSpace& g2) {
  if (g1.domain != g2.domain) throw Error(Errc::validation, "series", "domain mismatch");
  if (g1.outputs() != g2.inputs()) throw Error(Errc::validation, "series", "dimension mismatch");
  const auto n1 = g1.states(), n2 = g2.states();
  StateSpace s;
  s.domain = g1.domain;
  s.A = Mat::Zero(n1 + n2, n1 + n2);
  s.A.topLeftCorner(n1, n1) = g1.A;
  s.A.bottomLeftCorner(n2, n1) = g2.B * g1.C;
  s.A.bottomRightCorner(n2, n2) = g2.A;
  s.B = vstack(g1.B, g2.B * g1.D);
  s.C = hstack(g2.D * g1.C, g2.C);
  s.D = g2.D * g1.D;
  return s;
}

inline StateSpace parallel(const StateSpace& g1, const StateSpace& g2, double sign2 = 1.0) {
  if (g1.domain != g2.domain) throw Error(Errc::validation, "parallel", "domain mismatch");
  if (g1.outputs() != g2.outputs() || g1.inputs() != g2.inputs())
    throw Error(Errc::validation, "parallel", "dimension mismatch");
  return {blkdiag(g1.A, g2.A), vstack(g1.B, g2.B), hstack(g1.C, sign2 * g2.C), g1.D + sign2 * g2.D, g1.domain};
}

inline StateSpace scaled(const StateSpace& g, double k) { return {g.A, g.B, k * g.C, k * g.D, g.domain}; }

// Point evaluation through a cached complex Schur form: G(p) = C Q (pI - T)^{-1} Q^H B + D.
class FrequencyEvaluator {
 public:
  explicit FrequencyEvaluator(const StateSpace& sys) : sys_(sys) {
    sys.validate("freq_response");
    if (sys.states() > 0) {
      const ComplexSchur s = schur_decompose(sys.A);
      T_ = s.T;
      Bt_ = s.Q.adjoint() * sys.B.cast<cplx>();
      Ct_ = sys.C.cast<cplx>() * s.Q;
      poles_ = T_.diagonal();
    }
  }

  CMat at_point(cplx p) const {
    CMat G = sys_.D.cast<cplx>();
    if (sys_.states() == 0) return G;
    for (Eigen::Index i = 0; i < poles_.size(); ++i)
      if (std::abs(p - poles_(i)) <= 1e-12 * std::max(1.0, std::abs(poles_(i))))
        throw Error(Errc::singular, "freq_response", "evaluation point coincides with a pole");
    CMat M = -T_;
    M.diagonal().array() += p;
    G += Ct_ * M.triangularView<Eigen::Upper>().solve(Bt_);
    return G;
  }

  // omega is a continuous frequency (rad/s) or a discrete angle (rad) depending on the domain.
  CMat at(double omega) const {
    const cplx p = sys_.domain == Domain::continuous ? cplx(0.0, omega) : std::polar(1.0, omega);
    return at_point(p);
  }

 private:
  StateSpace sys_;
  CMat T_, Bt_, Ct_;
  CVec poles_;
};

struct FrequencyGrid {
  std::vector<double> points;  // strictly increasing
  Domain domain = Domain::continuous;

  // Real-coefficient systems satisfy G(-jw) = conj(G(jw)), so the nonnegative half carries every
  // PR/OSP margin; mirrored() gives the two-sided grid when one is wanted explicitly.
  FrequencyGrid mirrored() const {
    FrequencyGrid g;
    g.domain = domain;
    for (auto it = points.rbegin(); it != points.rend(); ++it)
      if (*it > 0.0) g.points.push_back(-*it);
    for (double w : points) g.points.push_back(w);
    return g;
  }
};

// Log + linear hybrid grid over [0, hi] spanning two decades either side of the
// eigenfrequency range of A.
inline FrequencyGrid default_grid(const Mat& A, int count = 4096) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  if (A.rows() > 0) {
    const CVec ev = eig(A);
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      const double m = std::abs(ev(i));
      if (m > 1e-12) { lo = std::min(lo, m); hi = std::max(hi, m); }
    }
  }
  if (!(hi > 0.0)) { lo = 1.0; hi = 1.0; }
  lo *= 1e-2;
  hi *= 1e2;
  const int nlin = count / 4;
  const int nlog = count - nlin - 1;
  std::vector<double> pts;
  pts.reserve(count);
  pts.push_back(0.0);
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < nlog; ++i) pts.push_back(std::pow(10.0, a + (b - a) * i / (nlog - 1)));
  for (int i = 1; i <= nlin; ++i) pts.push_back(hi * 1e-2 * i / nlin);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return {pts, Domain::continuous};
}

// Image of a continuous grid under Omega = 2 atan(2 tau omega), plus the Nyquist point.
inline FrequencyGrid to_discrete_grid(const FrequencyGrid& g, double tau) {
  FrequencyGrid d;
  d.domain = Domain::discrete;
  for (double w : g.points)
    if (w >= 0.0) d.points.push_back(2.0 * std::atan(2.0 * tau * w));
  d.points.push_back(M_PI);
  std::sort(d.points.begin(), d.points.end());
  d.points.erase(std::unique(d.points.begin(), d.points.end()), d.points.end());
  return d;
}

inline FrequencyGrid uniform_disc_grid(int count) {
  FrequencyGrid d;
  d.domain = Domain::discrete;
  for (int i = 0; i < count; ++i) d.points.push_back(M_PI * i / (count - 1));
  return d;
}

inline std::vector<CMat> freq_response(const StateSpace& sys, const FrequencyGrid& grid) {
  if (sys.domain != grid.domain) throw Error(Errc::validation, "freq_response", "grid domain mismatch");
  FrequencyEvaluator ev(sys);
  std::vector<CMat> out;
  out.reserve(grid.points.size());
  for (double w : grid.points) out.push_back(ev.at(w));
  return out;
}

inline double h2_norm_dt_squared(const StateSpace& sys) {
  if (sys.domain != Domain::discrete) throw Error(Errc::validation, "h2_norm_dt", "system is not discrete");
  sys.validate("h2_norm_dt");
  double v = sys.D.squaredNorm();
  if (sys.states() == 0) return v;
  if (spectral_radius(sys.A) >= 1.0) throw Error(Errc::unstable, "h2_norm_dt", "system is not stable");
  const Mat X = SteinSolver(sys.A.transpose()).solve(sys.C.transpose() * sys.C);
  v += (sys.B.transpose() * X * sys.B).trace();
  return std::max(v, 0.0);
}

inline double h2_norm_dt(const StateSpace& sys) { return std::sqrt(h2_norm_dt_squared(sys)); }

// Continuous H2 norm squared; requires D = 0.
inline double h2_norm_ct_squared(const StateSpace& sys) {
  if (sys.domain != Domain::continuous) throw Error(Errc::validation, "h2_norm_ct", "system is not continuous");
  if (sys.D.norm() > 0.0) throw Error(Errc::validation, "h2_norm_ct", "nonzero feedthrough gives infinite H2 norm");
  if (sys.states() == 0) return 0.0;
  if (spectral_abscissa(sys.A) >= 0.0) throw Error(Errc::unstable, "h2_norm_ct", "system is not stable");
  const Mat X = solve_lyap_ct(sys.A, sys.B * sys.B.transpose());
  return std::max((sys.C * X * sys.C.transpose()).trace(), 0.0);
}

inline double min_herm_eig(const CMat& M) {
  Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (M + M.adjoint()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// min over the grid of lambda_min(G + G^H).
inline double pr_margin(const StateSpace& sys, const FrequencyGrid& grid) {
  if (sys.inputs() != sys.outputs()) throw Error(Errc::validation, "pr_margin", "channel is not square");
  FrequencyEvaluator ev(sys);
  double m = std::numeric_limits<double>::infinity();
  for (double w : grid.points) {
    const CMat G = ev.at(w);
    m = std::min(m, min_herm_eig(G + G.adjoint()));
  }
  return m;
}

// min over the grid of lambda_min(K^H + K - eps K^H K).
inline double osp_margin(const StateSpace& K, double eps, const FrequencyGrid& grid) {
  if (K.inputs() != K.outputs()) throw Error(Errc::validation, "osp_margin", "controller is not square");
  FrequencyEvaluator ev(K);
  double m = std::numeric_limits<double>::infinity();
  for (double w : grid.points) {
    const CMat G = ev.at(w);
    m = std::min(m, min_herm_eig(G + G.adjoint() - eps * G.adjoint() * G));
  }
  return m;
}

inline double hinf_norm_grid(const StateSpace& sys, const FrequencyGrid& grid) {
  FrequencyEvaluator ev(sys);
  double m = 0.0;
  for (double w : grid.points) {
    Eigen::JacobiSVD<CMat> sv(ev.at(w));
    m = std::max(m, sv.singularValues()(0));
  }
  return m;
}

// Plant with exogenous input w, control u, performance z, measurement y.
struct PartitionedPlant {
  Mat A, Bw, Bu, Cz, Cy, Dwz, Dwy, Duz, Duy;
  Domain domain = Domain::continuous;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index nw() const { return Bw.cols(); }
  Eigen::Index nu() const { return Bu.cols(); }
  Eigen::Index nz() const { return Cz.rows(); }
  Eigen::Index ny() const { return Cy.rows(); }

  void validate(const char* stage = "plant") const {
    const auto n_ = n();
    auto chk = [&](const Mat& M, Eigen::Index r, Eigen::Index c, const char* name) {
      if (M.rows() != r || M.cols() != c)
        throw Error(Errc::validation, stage,
                    std::string(name) + " has shape " + std::to_string(M.rows()) + "x" + std::to_string(M.cols()) +
                        ", expected " + std::to_string(r) + "x" + std::to_string(c));
      if (!M.allFinite()) throw Error(Errc::validation, stage, std::string(name) + " has non-finite entries");
    };
    chk(A, n_, n_, "A");
    chk(Bw, n_, nw(), "Bw");
    chk(Bu, n_, nu(), "Bu");
    chk(Cz, nz(), n_, "Cz");
    chk(Cy, ny(), n_, "Cy");
    chk(Dwz, nz(), nw(), "Dwz");
    chk(Dwy, ny(), nw(), "Dwy");
    chk(Duz, nz(), nu(), "Duz");
    chk(Duy, ny(), nu(), "Duy");
  }

  StateSpace channel_wz() const { return {A, Bw, Cz, Dwz, domain}; }
  StateSpace channel_wy() const { return {A, Bw, Cy, Dwy, domain}; }
  StateSpace channel_uz() const { return {A, Bu, Cz, Duz, domain}; }
  StateSpace channel_uy() const { return {A, Bu, Cy, Duy, domain}; }
};

// Closed loop of P under u = -K y: T = P_wz - P_uz K (I + P_uy K)^{-1} P_wy.
inline StateSpace feedback(const PartitionedPlant& P, const StateSpace& K) {
  if (P.domain != K.domain) throw Error(Errc::validation, "feedback", "domain mismatch");
  if (K.inputs() != P.ny() || K.outputs() != P.nu()) throw Error(Errc::validation, "feedback", "controller shape");
  const auto n = P.n(), nk = K.states();
  const Mat Mi = Mat::Identity(P.nu(), P.nu()) + K.D * P.Duy;
  double rc = 0.0;
  Mat M;
  try {
    M = inv(Mi, &rc);
  } catch (const Error&) {
    throw Error(Errc::ill_posed, "feedback", "I + D_K D_uy is singular (algebraic loop)");
  }
  const Mat Ux = -M * K.D * P.Cy, Uk = -M * K.C, Uw = -M * K.D * P.Dwy;
  const Mat Yx = P.Cy + P.Duy * Ux, Yk = P.Duy * Uk, Yw = P.Dwy + P.Duy * Uw;
  StateSpace T;
  T.domain = P.domain;
  T.A.resize(n + nk, n + nk);
  T.A << P.A + P.Bu * Ux, P.Bu * Uk, K.B * Yx, K.A + K.B * Yk;
  T.B = vstack(P.Bw + P.Bu * Uw, K.B * Yw);
  T.C = hstack(P.Cz + P.Duz * Ux, P.Duz * Uk);
  T.D = P.Dwz + P.Duz * Uw;
  return T;
}

inline bool internally_stable(const PartitionedPlant& P, const StateSpace& K) { return feedback(P, K).is_stable(); }

struct Gramians {
  Mat P, Q;  // controllability, observability
};

inline Gramians gramians(const StateSpace& s) {
  if (!s.is_stable()) throw Error(Errc::unstable, "gramians", "system is not stable");
  if (s.domain == Domain::discrete) {
    return {SteinSolver(s.A).solve(s.B * s.B.transpose()),
            SteinSolver(s.A.transpose()).solve(s.C.transpose() * s.C)};
  }
  return {solve_lyap_ct(s.A, s.B * s.B.transpose()), solve_lyap_ct(s.A.transpose(), s.C.transpose() * s.C)};
}

struct BalancedRealization {
  StateSpace sys;    // balanced, states ordered by decreasing Hankel singular value
  Vec hsv;           // Hankel singular values of retained states
  Eigen::Index dropped_zero = 0;
};

// Square-root balancing; directions with Hankel singular value <= zero_tol*hsv_max are removed.
inline BalancedRealization balance(const StateSpace& s, double zero_tol = 1e-12) {
  BalancedRealization out;
  if (s.states() == 0) { out.sys = s; return out; }
  const Gramians g = gramians(s);
  const Mat Lc = psd_sqrt_factor(g.P).transpose();  // P = Lc Lc^T
  const Mat Lo = psd_sqrt_factor(g.Q).transpose();  // Q = Lo Lo^T
  Eigen::JacobiSVD<Mat> sv(Lo.transpose() * Lc, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& h = sv.singularValues();
  const double hmax = h.size() ? h(0) : 0.0;
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < h.size(); ++i)
    if (h(i) > zero_tol * hmax && h(i) > 1e-300) ++r;
  const Vec isq = h.head(r).cwiseSqrt().cwiseInverse();
  const Mat Tr = Lc * sv.matrixV().leftCols(r) * isq.asDiagonal();                // n x r
  const Mat Tl = isq.asDiagonal() * sv.matrixU().leftCols(r).transpose() * Lo.transpose();  // r x n
  out.sys = {Tl * s.A * Tr, Tl * s.B, s.C * Tr, s.D, s.domain};
  out.hsv = h.head(r);
  out.dropped_zero = s.states() - r;
  return out;
}

inline StateSpace truncate_balanced(const StateSpace& b, Eigen::Index r) {
  return {b.A.topLeftCorner(r, r), b.B.topRows(r), b.C.leftCols(r), b.D, b.domain};
}

// Removes numerically non-minimal directions (Hankel singular values below tol relative).
inline StateSpace minreal_balanced(const StateSpace& s, double tol = 1e-10) {
  if (s.states() == 0) return s;
  return balance(s, tol).sys;
}

struct TruncationOptions {
  double rel_tol = 5e-5;  // four significant figures
  // Optional extra admissibility test on a candidate reduced system.
  std::function<bool(const StateSpace&)> guard;
};

struct TruncationResult {
  StateSpace sys;
  double probe_full = 0.0;
  double probe_reduced = 0.0;
  Eigen::Index order_full = 0;
};

// State-by-state balanced truncation. Stops before the probe departs from its full-order value by
// more than rel_tol (relative). The guard is usually expensive, so it is only consulted on the
// smallest probe-admissible order, stepping back up until it accepts.
inline TruncationResult balanced_truncate(const StateSpace& s, const std::function<double(const StateSpace&)>& probe,
                                          const TruncationOptions& opt = {}) {
  if (!s.is_stable()) throw Error(Errc::unstable, "balanced_truncate", "system is not stable");
  TruncationResult res;
  res.order_full = s.states();
  res.probe_full = probe(s);
  const BalancedRealization b = balance(s);
  const double tol = opt.rel_tol * std::abs(res.probe_full);
  const Eigen::Index nb = b.sys.states();
  std::vector<double> values(nb + 1, 0.0);
  Eigen::Index r = nb + 1;
  for (Eigen::Index k = nb; k >= 0; --k) {
    const StateSpace cand = truncate_balanced(b.sys, k);
    if (!cand.is_stable()) break;
    const double v = probe(cand);
    if (std::abs(v - res.probe_full) > tol) break;
    values[k] = v;
    r = k;
  }
  for (; r <= nb; ++r) {
    StateSpace cand = truncate_balanced(b.sys, r);
    if (opt.guard && !opt.guard(cand)) continue;
    res.sys = std::move(cand);
    res.probe_reduced = values[r];
    return res;
  }
  res.sys = s;
  res.probe_reduced = res.probe_full;
  return res;
}

struct MinrealReport {
  bool controllable = true;
  bool observable = true;
  std::vector<cplx> uncontrollable_modes;
  std::vector<cplx> unobservable_modes;
};

// PBH rank tests at the eigenvalues of A.
inline MinrealReport minreal_check(const StateSpace& s, double tol = 1e-8) {
  MinrealReport r;
  const auto n = s.states();
  if (n == 0) return r;
  const CVec ev = eig(s.A);
  const double scale = std::max({s.A.norm(), s.B.norm(), s.C.norm(), 1e-300});
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    CMat Al = s.A.cast<cplx>();
    Al.diagonal().array() -= ev(i);
    CMat Mc(n, n + s.B.cols());
    Mc << Al, s.B.cast<cplx>();
    CMat Mo(n + s.C.rows(), n);
    Mo << Al, s.C.cast<cplx>();
    Eigen::JacobiSVD<CMat> sc(Mc), so(Mo);
    if (sc.singularValues()(n - 1) <= tol * scale) {
      r.controllable = false;
      r.uncontrollable_modes.push_back(ev(i));
    }
    if (so.singularValues()(n - 1) <= tol * scale) {
      r.observable = false;
      r.unobservable_modes.push_back(ev(i));
    }
  }
  return r;
}

// Monic polynomial with the given roots, descending powers.
inline std::vector<double> poly_from_roots(const CVec& roots) {
  std::vector<cplx> c{1.0};
  for (Eigen::Index i = 0; i < roots.size(); ++i) {
    c.push_back(0.0);
    for (std::size_t k = c.size() - 1; k > 0; --k) c[k] -= roots(i) * c[k - 1];
  }
  std::vector<double> out(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) out[k] = c[k].real();
  return out;
}

struct TransferFunction {
  std::vector<double> num, den;  // descending powers; den monic
};

// SISO transfer function via det(sI - A + BC) = det(sI - A) (1 + C (sI - A)^{-1} B).
inline TransferFunction siso_tf(const StateSpace& s) {
  if (s.inputs() != 1 || s.outputs() != 1) throw Error(Errc::validation, "siso_tf", "system is not SISO");
  TransferFunction tf;
  tf.den = poly_from_roots(s.states() ? eig(s.A) : CVec());
  const std::vector<double> closed = poly_from_roots(s.states() ? eig(Mat(s.A - s.B * s.C)) : CVec());
  const double d = s.D(0, 0);
  tf.num.resize(tf.den.size());
  for (std::size_t k = 0; k < tf.den.size(); ++k) tf.num[k] = closed[k] - tf.den[k] + d * tf.den[k];
  double mx = 0.0;
  for (double v : tf.num) mx = std::max(mx, std::abs(v));
  while (tf.num.size() > 1 && std::abs(tf.num.front()) <= 1e-12 * mx) tf.num.erase(tf.num.begin());
  return tf;
}

}  // namespace passyn
