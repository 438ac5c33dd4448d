#pragma once

// Certainty-equivalence warm start: reduced-order Kalman-Bucy filter, KYP storage,
// regenerative optimum, passivity projection, controller assembly.

#include <string>

#include "passyn/lmi.hpp"
#include "passyn/ssmodel.hpp"

namespace passyn {

// Supplemental process noise used when C_y B_w lacks full row rank.
struct FictitiousNoise {
  enum class Direction { input, state };
  double intensity = 0.0;  // standard deviation scale sigma
  Direction direction = Direction::input;
};

inline Mat process_noise(const PartitionedPlant& P, const FictitiousNoise& f) {
  Mat W = P.Bw * P.Bw.transpose();
  if (f.intensity > 0.0) {
    const double s2 = f.intensity * f.intensity;
    if (f.direction == FictitiousNoise::Direction::input)
      W += s2 * P.Bu * P.Bu.transpose();
    else
      W += s2 * Mat::Identity(P.n(), P.n());
  }
  return W;
}

// Noise input matrix whose outer product is process_noise(); used for closed-loop checks.
inline Mat process_noise_input(const PartitionedPlant& P, const FictitiousNoise& f) {
  if (f.intensity <= 0.0) return P.Bw;
  const Mat extra = f.direction == FictitiousNoise::Direction::input ? Mat(f.intensity * P.Bu)
                                                                     : Mat(f.intensity * Mat::Identity(P.n(), P.n()));
  return hstack(P.Bw, extra);
}

struct RokfResult {
  Mat Sigma;   // error covariance, C_y Sigma = 0
  Mat L;       // filter gain, C_y L = -I
  Mat E;       // annihilator rows
  Mat Lperp;   // Lperp * Cyperp = I, Lperp * L = 0
  Mat Cyperp;  // orthonormal basis of null(C_y)
  Mat W;       // process-noise intensity used
  Mat Phi_e;   // innovations intensity C_y W C_y^T
};

// Completion pair: Cyperp orthonormal with C_y Cyperp = 0 and Lperp annihilating L.
inline void complete_basis(const Mat& Cy, const Mat& L, Mat& Lperp, Mat& Cyperp) {
  const Eigen::Index n = Cy.cols();
  Cyperp = null_space(Cy);
  const Mat Pr = Mat::Identity(n, n) - L * pinv(L);
  const Mat M = Cyperp.transpose() * Pr * Cyperp;
  Lperp = solve_linear(M, Cyperp.transpose() * Pr);
}

inline RokfResult rokf(const PartitionedPlant& P, const FictitiousNoise& noise = {}) {
  P.validate("rokf");
  const Eigen::Index n = P.n(), ny = P.ny();
  if (ny != P.nu()) throw Error(Errc::validation, "rokf", "measurement and control dimensions differ");
  RokfResult r;
  r.W = process_noise(P, noise);
  r.Phi_e = symmetrize(P.Cy * r.W * P.Cy.transpose());
  {
    Eigen::JacobiSVD<Mat> sv(r.Phi_e);
    const Vec& s = sv.singularValues();
    if (s.size() && !(s(s.size() - 1) > 1e-12 * std::max(s(0), 1e-300)))
      throw Error(Errc::validation, "rokf",
                  "C_y B_w is rank deficient; supply fictitious process noise so the innovations intensity is invertible");
  }
  // E: orthonormal rows annihilating W C_y^T.
  const Mat WCt = r.W * P.Cy.transpose();
  const Svd s = svd(WCt);
  r.E = s.U.rightCols(n - ny).transpose();
  Mat T(n, n);
  T << P.Cy, r.E;
  const Mat Ti = inv(T);
  const Mat At = T * P.A * Ti;
  const Mat Pt = symmetrize(T * r.W * T.transpose());
  const Eigen::Index m = n - ny;
  Mat S22 = Mat::Zero(m, m);
  if (m > 0) {
    const Mat A12 = At.block(0, ny, ny, m);
    const Mat A22 = At.block(ny, ny, m, m);
    try {
      S22 = solve_care(A22.transpose(), A12.transpose(), Pt.block(ny, ny, m, m), Pt.block(0, 0, ny, ny),
                       Mat::Zero(m, ny));
    } catch (const Error& e) {
      throw Error(e.code(), "rokf", std::string("reduced filter Riccati: ") + e.what());
    }
  }
  Mat St = Mat::Zero(n, n);
  St.bottomRightCorner(m, m) = S22;
  r.Sigma = symmetrize(Ti * St * Ti.transpose());
  r.L = -(r.Sigma * P.A.transpose() + r.W) * P.Cy.transpose() * inv(r.Phi_e);
  complete_basis(P.Cy, r.L, r.Lperp, r.Cyperp);
  return r;
}

inline Mat kyp_R(const PartitionedPlant& P, double eps) {
  return eps * Mat::Identity(P.nu(), P.nu()) + P.Duy + P.Duy.transpose();
}

namespace detail {
inline Mat kyp_storage_raw(const PartitionedPlant& P, double eps) {
  const Mat R = kyp_R(P, eps);
  // A^T W + W A + (W B_u - C_y^T) R^{-1} (W B_u - C_y^T)^T = 0 as a CARE with R -> -R, S -> -C_y^T.
  const Mat W = solve_care(P.A, P.Bu, Mat::Zero(P.n(), P.n()), -R, -P.Cy.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(W, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().size() && es.eigenvalues()(0) < -1e-10 * std::max(1.0, W.norm()))
    throw Error(Errc::validation, "kyp_storage", "storage matrix is not positive semidefinite");
  return W;
}
}  // namespace detail

inline Mat kyp_storage(const PartitionedPlant& P, double eps) {
  if (!(eps > 0.0)) throw Error(Errc::validation, "kyp_storage", "epsilon must be positive");
  try {
    return detail::kyp_storage_raw(P, eps);
  } catch (const Error& first) {
    double lo = 0.0, hi = eps;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      try {
        detail::kyp_storage_raw(P, mid);
        lo = mid;
      } catch (const Error&) {
        hi = mid;
      }
    }
    throw Error(Errc::validation, "kyp_storage",
                std::string("no PSD storage for this epsilon (") + first.what() +
                    "); largest feasible epsilon estimate " + std::to_string(lo));
  }
}

inline Mat kyp_Cp(const PartitionedPlant& P, const Mat& W) { return P.Cy - P.Bu.transpose() * W; }

namespace detail {

// Packs symmetric k x k unknowns as their upper triangle.
inline Mat unpack_sym(const Vec& y, int offset, int k) {
  Mat S(k, k);
  int idx = offset;
  for (int j = 0; j < k; ++j)
    for (int i = 0; i <= j; ++i) {
      S(i, j) = y(idx);
      S(j, i) = y(idx);
      ++idx;
    }
  return S;
}

inline Mat unpack_full(const Vec& y, int offset, int r, int c) {
  Mat M(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) M(i, j) = y(offset + j * r + i);
  return M;
}

inline int sym_count(int k) { return k * (k + 1) / 2; }

}  // namespace detail

struct Op2Result {
  Mat Fr;
  double trQ = 0.0;
  double gamma = 0.0;  // tr Q + tr(C_z Sigma C_z^T)
  SdpSolution sdp;
};

inline Op2Result solve_op2(const PartitionedPlant& P, double eps, const RokfResult& rk, const Mat& W,
                           const SdpOptions& opt = {}) {
  const int n = static_cast<int>(P.n()), nu = static_cast<int>(P.nu()), nz = static_cast<int>(P.nz());
  const Mat R = kyp_R(P, eps);
  const Mat Ri = inv(R);
  const Mat Cp = kyp_Cp(P, W);
  const Mat LPL = rk.L * rk.Phi_e * rk.L.transpose();
  const double budget = (rk.Phi_e * rk.L.transpose() * W * rk.L).trace();
  const double delta = 1e-9 * std::max(P.A.norm(), 1e-300);
  const int oS = 0, oG = detail::sym_count(n), oQ = oG + nu * n, oV = oQ + detail::sym_count(nz);
  const int nvar = oV + detail::sym_count(nu);
  auto S_ = [&](const Vec& y) { return detail::unpack_sym(y, oS, n); };
  auto G_ = [&](const Vec& y) { return detail::unpack_full(y, oG, nu, n); };
  auto Q_ = [&](const Vec& y) { return detail::unpack_sym(y, oQ, nz); };
  auto V_ = [&](const Vec& y) { return detail::unpack_sym(y, oV, nu); };

  SdpProblem p;
  p.nvar = nvar;
  p.c = Vec::Zero(nvar);
  for (int i = 0; i < nz; ++i) p.c(oQ + detail::sym_count(i + 1) - 1) = 1.0;
  p.blocks.push_back(probe_affine(nvar, [&](const Vec& y) {
    const Mat S = S_(y), G = G_(y);
    const Mat AS = P.A * S + P.Bu * G;
    return Mat(-(AS + AS.transpose() + LPL) - delta * Mat::Identity(n, n));
  }));
  p.blocks.push_back(probe_affine(nvar, [&](const Vec& y) {
    const Mat S = S_(y), X = P.Cz * S + P.Duz * G_(y);
    Mat M(nz + n, nz + n);
    M << Q_(y), X, X.transpose(), S;
    return M;
  }));
  p.blocks.push_back(probe_affine(nvar, [&](const Vec& y) {
    const Mat S = S_(y), X = Cp * S - R * G_(y);
    Mat M(nu + n, nu + n);
    M << V_(y), X, X.transpose(), S;
    return M;
  }));
  p.blocks.push_back(probe_affine(nvar, [&](const Vec& y) {
    Mat M(1, 1);
    M(0, 0) = budget - (Ri * V_(y)).trace();
    return M;
  }));
  Op2Result out;
  out.sdp = solve_sdp(p, opt);
  if (out.sdp.status == SdpStatus::infeasible) throw Error(Errc::infeasible, "op2", "regenerative LMI is infeasible");
  if (out.sdp.status != SdpStatus::optimal) throw Error(Errc::not_converged, "op2", "SDP did not converge");
  const Mat S = S_(out.sdp.y);
  if (condition_number(S) > 1e12) throw Error(Errc::not_converged, "op2", "covariance variable is near singular");
  out.Fr = solve_linear(S.transpose(), G_(out.sdp.y).transpose()).transpose();
  out.trQ = out.sdp.objective;
  out.gamma = out.trQ + (P.Cz * rk.Sigma * P.Cz.transpose()).trace();
  return out;
}

struct Op3Result {
  Mat F;
  double objective = 0.0;
  SdpSolution sdp;
};

inline Op3Result solve_op3(const PartitionedPlant& P, double eps, const Mat& W, const RokfResult& rk, const Mat& Fr,
                           const SdpOptions& opt = {}) {
  const int n = static_cast<int>(P.n()), nu = static_cast<int>(P.nu());
  const Mat R = kyp_R(P, eps);
  const Mat Cp = kyp_Cp(P, W);
  const int oY = 0, oG = detail::sym_count(n), oZ = oG + nu * n;
  const int nvar = oZ + detail::sym_count(nu);
  auto Y_ = [&](const Vec& y) { return detail::unpack_sym(y, oY, n); };
  auto G_ = [&](const Vec& y) { return detail::unpack_full(y, oG, nu, n); };
  auto Z_ = [&](const Vec& y) { return detail::unpack_sym(y, oZ, nu); };

  SdpProblem p;
  p.nvar = nvar;
  p.c = Vec::Zero(nvar);
  for (int i = 0; i < nu; ++i) p.c(oZ + detail::sym_count(i + 1) - 1) = 1.0;
  p.blocks.push_back(probe_affine(nvar, [&](const Vec& y) {
    const Mat Y = Y_(y), G = G_(y);
    const Mat AY = P.A * Y + P.Bu * G;
    const Mat X = Cp * Y + R * G;
    Mat M(n + nu, n + nu);
    M << AY + AY.transpose(), X.transpose(), X, -R;
    return Mat(-M);
  }));
  p.blocks.push_back(probe_affine(nvar, [&](const Vec& y) {
    const Mat Y = Y_(y), X = G_(y) - Fr * Y;
    Mat M(nu + n, nu + n);
    M << Z_(y), X, X.transpose(), Y;
    return M;
  }));
  // (Y W - I) L = 0, affine in y.
  const int neq = n * nu;
  p.Aeq.resize(neq, nvar);
  p.beq.resize(neq);
  {
    const Vec y0 = Vec::Zero(nvar);
    auto res = [&](const Vec& y) {
      const Mat E = (Y_(y) * W - Mat::Identity(n, n)) * rk.L;
      return Vec(Eigen::Map<const Vec>(E.data(), E.size()));
    };
    const Vec r0 = res(y0);
    p.beq = -r0;
    Vec e = Vec::Zero(nvar);
    for (int i = 0; i < nvar; ++i) {
      e.setZero();
      e(i) = 1.0;
      p.Aeq.col(i) = res(e) - r0;
    }
  }
  Op3Result out;
  out.sdp = solve_sdp(p, opt);
  if (out.sdp.status == SdpStatus::infeasible) throw Error(Errc::infeasible, "op3", "projection LMI is infeasible");
  if (out.sdp.status != SdpStatus::optimal) throw Error(Errc::not_converged, "op3", "SDP did not converge");
  const Mat Y = Y_(out.sdp.y);
  out.F = solve_linear(Y.transpose(), G_(out.sdp.y).transpose()).transpose();
  out.objective = out.sdp.objective;
  return out;
}

// Reduced-order controller for u = -K y from the filter and a state-feedback gain F.
inline StateSpace assemble_controller(const PartitionedPlant& P, const RokfResult& rk, const Mat& F) {
  const Eigen::Index nu = P.nu();
  Mat M;
  try {
    M = inv(Mat::Identity(nu, nu) - F * rk.L * P.Duy);
  } catch (const Error&) {
    throw Error(Errc::ill_posed, "assemble_controller", "I - F L D_uy is singular");
  }
  const Mat Ap = P.A + (P.A * rk.L * P.Duy + P.Bu) * M * F;
  StateSpace K;
  K.domain = Domain::continuous;
  K.A = rk.Lperp * Ap * rk.Cyperp;
  K.B = -rk.Lperp * Ap * rk.L;
  K.C = -(M * F * rk.Cyperp);
  K.D = M * F * rk.L;
  return K;
}

// Continuous closed-loop H2 cost tr(C X C^T) under u = -K y.
inline double closed_loop_cost(const PartitionedPlant& P, const StateSpace& K) {
  const StateSpace T = feedback(P, K);
  if (!T.is_stable()) throw Error(Errc::unstable, "closed_loop_cost", "closed loop is not stable");
  return h2_norm_ct_squared(T);
}

inline Mat lqr_gain(const PartitionedPlant& P) {
  const Mat R = P.Duz.transpose() * P.Duz;
  const Mat S = P.Cz.transpose() * P.Duz;
  const Mat X = solve_care(P.A, P.Bu, P.Cz.transpose() * P.Cz, R, S);
  return -solve_linear(R, P.Bu.transpose() * X + S.transpose());
}

inline StateSpace unconstrained_h2(const PartitionedPlant& P, const RokfResult& rk) {
  Mat F;
  try {
    F = lqr_gain(P);
  } catch (const Error& e) {
    if (e.code() == Errc::no_stabilizing)
      throw Error(Errc::no_stabilizing, "unconstrained_h2",
                  std::string("not well-posed: the LQR Hamiltonian has imaginary-axis eigenvalues, so no "
                              "stabilizing Riccati solution exists (") + e.what() + ")");
    throw;
  }
  return assemble_controller(P, rk, F);
}

struct SuboptimalDesign {
  RokfResult filter;
  Mat W;
  Mat Fr;
  Mat F;
  StateSpace K0;
  double J0_star = 0.0;
  double op2_gamma = 0.0;
};

inline SuboptimalDesign certainty_equivalent_design(const PartitionedPlant& P, double eps,
                                                    const FictitiousNoise& noise, const SdpOptions& opt = {}) {
  SuboptimalDesign d;
  d.filter = rokf(P, noise);
  d.W = kyp_storage(P, eps);
  const Op2Result r2 = solve_op2(P, eps, d.filter, d.W, opt);
  d.Fr = r2.Fr;
  d.op2_gamma = r2.gamma;
  d.F = solve_op3(P, eps, d.W, d.filter, d.Fr, opt).F;
  d.K0 = assemble_controller(P, d.filter, d.F);
  d.J0_star = closed_loop_cost(P, d.K0);
  return d;
}

}  // namespace passyn
