#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "passyn/ssmodel.hpp"

namespace passyn {

// Discrete image of a partitioned plant under s = (1/2tau)(q-1)/(q+1), plus the f channel.
struct DiscretePlant {
  Mat Phi, Gw, Gu, Gf, Pz, Py, Dwz, Dwy, Duz, Duy;
  double tau = 0.0;

  Eigen::Index n() const { return Phi.rows(); }
  Eigen::Index nu() const { return Gu.cols(); }
  Eigen::Index nz() const { return Pz.rows(); }
  Eigen::Index nw() const { return Gw.cols(); }

  StateSpace channel_wz() const { return {Phi, Gw, Pz, Dwz, Domain::discrete}; }
  StateSpace channel_wy() const { return {Phi, Gw, Py, Dwy, Domain::discrete}; }
  StateSpace channel_uz() const { return {Phi, Gu, Pz, Duz, Domain::discrete}; }
  StateSpace channel_uy() const { return {Phi, Gu, Py, Duy, Domain::discrete}; }

  PartitionedPlant as_partitioned() const {
    return {Phi, Gw, Gu, Pz, Py, Dwz, Dwy, Duz, Duy, Domain::discrete};
  }
};

struct FChannel {
  StateSpace fz, fy;
};

inline Mat bilinear_resolvent(const Mat& A, double tau, const char* stage) {
  const Eigen::Index n = A.rows();
  try {
    return inv(Mat::Identity(n, n) - 2.0 * tau * A);
  } catch (const Error&) {
    throw Error(Errc::singular, stage, "1/(2 tau) is an eigenvalue of A; choose a different tau");
  }
}

inline DiscretePlant discretize_plant(const PartitionedPlant& P, double tau) {
  if (!(tau > 0.0)) throw Error(Errc::validation, "discretize_plant", "tau must be positive");
  P.validate("discretize_plant");
  const Eigen::Index n = P.n();
  const Mat M = bilinear_resolvent(P.A, tau, "discretize_plant");
  DiscretePlant d;
  d.tau = tau;
  d.Phi = (Mat::Identity(n, n) + 2.0 * tau * P.A) * M;
  d.Gw = 2.0 * tau * M * P.Bw;
  d.Gu = 2.0 * tau * M * P.Bu;
  d.Gf = tau * P.Bw;
  d.Pz = 2.0 * P.Cz * M;
  d.Py = 2.0 * P.Cy * M;
  d.Dwz = P.Dwz + 2.0 * tau * P.Cz * M * P.Bw;
  d.Dwy = P.Dwy + 2.0 * tau * P.Cy * M * P.Bw;
  d.Duz = P.Duz + 2.0 * tau * P.Cz * M * P.Bu;
  d.Duy = P.Duy + 2.0 * tau * P.Cy * M * P.Bu;
  return d;
}

// P_f. = P_w. / (1 + q), realized with zero feedthrough.
inline FChannel f_channel(const DiscretePlant& d) {
  return {{d.Phi, d.Gf, d.Pz, Mat::Zero(d.Pz.rows(), d.Gf.cols()), Domain::discrete},
          {d.Phi, d.Gf, d.Py, Mat::Zero(d.Py.rows(), d.Gf.cols()), Domain::discrete}};
}

inline StateSpace map_controller_c2d(const StateSpace& K, double tau) {
  if (K.domain != Domain::continuous) throw Error(Errc::validation, "c2d", "system is not continuous");
  if (!(tau > 0.0)) throw Error(Errc::validation, "c2d", "tau must be positive");
  const Eigen::Index n = K.states();
  if (n == 0) return StateSpace::gain(K.D, Domain::discrete);
  const Mat M = bilinear_resolvent(K.A, tau, "c2d");
  return {(Mat::Identity(n, n) + 2.0 * tau * K.A) * M, 2.0 * tau * M * K.B, 2.0 * K.C * M,
          K.D + 2.0 * tau * K.C * M * K.B, Domain::discrete};
}

inline StateSpace map_controller_d2c(const StateSpace& K, double tau) {
  if (K.domain != Domain::discrete) throw Error(Errc::validation, "d2c", "system is not discrete");
  if (!(tau > 0.0)) throw Error(Errc::validation, "d2c", "tau must be positive");
  const Eigen::Index n = K.states();
  if (n == 0) return StateSpace::gain(K.D, Domain::continuous);
  Mat N;
  try {
    N = inv(Mat::Identity(n, n) + K.A);
  } catch (const Error&) {
    throw Error(Errc::singular, "d2c", "pole at q = -1 has no continuous image");
  }
  return {(0.5 / tau) * N * (K.A - Mat::Identity(n, n)), (1.0 / tau) * N * K.B, K.C * N, K.D - K.C * N * K.B,
          Domain::continuous};
}

inline StateSpace discretize_system(const StateSpace& s, double tau) { return map_controller_c2d(s, tau); }

// omega(Omega) = (1/2tau) tan(Omega/2).
inline double continuous_frequency(double Omega, double tau) { return std::tan(0.5 * Omega) / (2.0 * tau); }
inline double discrete_frequency(double omega, double tau) { return 2.0 * std::atan(2.0 * tau * omega); }

struct TauSelection {
  double tau = 0.0;
  double rho = 0.0;
  std::vector<std::pair<double, double>> curve;  // (tau, rho) seed evaluations
};

// Spectral radius of the bilinear image of the continuous eigenvalues lam at tau.
inline double bilinear_spectral_radius(const CVec& lam, double tau) {
  double r = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    const cplx den = 1.0 - 2.0 * tau * lam(i);
    if (std::abs(den) < 1e-14) return std::numeric_limits<double>::infinity();
    r = std::max(r, std::abs((1.0 + 2.0 * tau * lam(i)) / den));
  }
  return r;
}

// Minimizes rho(Phi_V(tau)) over [lo, hi] where Phi_V is the discrete closed-loop (plant + K0)
// dynamics: 200-point log seed, then golden-section refinement on log(tau).
inline TauSelection select_tau_eigs(const CVec& lam, double lo, double hi) {
  if (!(lo > 0.0) || !(hi > lo)) throw Error(Errc::validation, "select_tau", "invalid tau range");
  TauSelection out;
  if (lam.size() == 0) {
    out.tau = 0.5 * (lo + hi);
    return out;
  }
  const int nseed = 200;
  const double a = std::log(lo), b = std::log(hi);
  int best = -1;
  double bestv = std::numeric_limits<double>::infinity();
  for (int i = 0; i < nseed; ++i) {
    const double t = std::exp(a + (b - a) * i / (nseed - 1));
    const double v = bilinear_spectral_radius(lam, t);
    out.curve.emplace_back(t, v);
    if (std::isfinite(v) && v < bestv - 1e-15) { bestv = v; best = i; }
  }
  if (best < 0) throw Error(Errc::singular, "select_tau", "transform singular across the whole range");
  double l = std::log(out.curve[std::max(best - 1, 0)].first);
  double r = std::log(out.curve[std::min(best + 1, nseed - 1)].first);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  auto f = [&](double lt) {
    const double v = bilinear_spectral_radius(lam, std::exp(lt));
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  double x1 = r - g * (r - l), x2 = l + g * (r - l);
  double f1 = f(x1), f2 = f(x2);
  while (r - l > 1e-10) {
    if (f1 <= f2) {  // ties move toward smaller tau
      r = x2; x2 = x1; f2 = f1; x1 = r - g * (r - l); f1 = f(x1);
    } else {
      l = x1; x1 = x2; f1 = f2; x2 = l + g * (r - l); f2 = f(x2);
    }
  }
  out.tau = std::exp(0.5 * (l + r));
  out.rho = bilinear_spectral_radius(lam, out.tau);
  if (bestv < out.rho) {
    out.tau = out.curve[best].first;
    out.rho = bestv;
  }
  return out;
}

inline TauSelection select_tau(const PartitionedPlant& P, const StateSpace& K0, double lo = 0.0, double hi = 0.0) {
  const StateSpace cl = feedback(P, K0);
  if (!cl.is_stable()) throw Error(Errc::unstable, "select_tau", "warm-start controller does not stabilize the plant");
  if (lo <= 0.0 || hi <= 0.0) {
    const double nA = cl.states() ? Eigen::JacobiSVD<Mat>(cl.A).singularValues()(0) : 1.0;
    lo = 1e-3 / std::max(nA, 1e-300);
    hi = 1e3 / std::max(nA, 1e-300);
  }
  return select_tau_eigs(eig(cl.A), lo, hi);
}

}  // namespace passyn
