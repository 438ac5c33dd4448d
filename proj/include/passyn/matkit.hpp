#pragma once

// Dense kernels and the matrix-equation solvers (Lyapunov, Stein,
// Sylvester-Stein, CARE, DARE). Schur forms come from LAPACK (zgees/zgges)
// because Eigen has no ordered Schur or QZ for complex matrices.

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#ifndef lapack_complex_double
#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

#include "passyn/errors.hpp"

namespace passyn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using cplx = std::complex<double>;

// Which eigenvalues the ordered Schur form moves to the leading block.
enum class SchurOrder { none, open_left_half_plane, open_unit_disc };

struct ComplexSchur {
  CMat Q;  // unitary
  CMat T;  // upper triangular, A = Q T Q^H
  int n_selected = 0;
};

struct GeneralizedSchur {
  CMat Q, Z;  // A = Q S Z^H, B = Q T Z^H
  CMat S, T;
  CVec alpha, beta;
  int n_selected = 0;
};

namespace detail {

inline lapack_logical select_lhp(const lapack_complex_double* z) { return z->real() < 0.0; }
inline lapack_logical select_disc(const lapack_complex_double* z) { return std::abs(*z) < 1.0; }
inline lapack_logical select_disc_pencil(const lapack_complex_double* a, const lapack_complex_double* b) {
  return std::abs(*a) < std::abs(*b);
}
inline lapack_logical select_lhp_pencil(const lapack_complex_double* a, const lapack_complex_double* b) {
  if (std::abs(*b) == 0.0) return 0;
  return ((*a) / (*b)).real() < 0.0;
}

inline double rel_scale(std::initializer_list<double> norms) {
  double s = 0.0;
  for (double v : norms) s += v;
  return s > 0.0 ? s : 1.0;
}

}  // namespace detail

inline bool all_finite(const Mat& A) { return A.allFinite(); }

inline Mat symmetrize(const Mat& M) { return 0.5 * (M + M.transpose()); }

// Symmetrize a Hermitian-tagged input; reject asymmetry beyond 1e-8 relative.
inline Mat checked_symmetric(const Mat& M, const std::string& what) {
  if (M.rows() != M.cols()) throw Error(Errc::validation, "matkit", what + " must be square");
  const double scale = std::max(M.cwiseAbs().maxCoeff(), 1e-300);
  const double asym = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale) throw Error(Errc::validation, "matkit", what + " is not symmetric");
  return symmetrize(M);
}

inline ComplexSchur schur_decompose(const CMat& A, SchurOrder order = SchurOrder::none) {
  if (A.rows() != A.cols()) throw Error(Errc::validation, "schur", "matrix must be square");
  if (!A.allFinite()) throw Error(Errc::validation, "schur", "non-finite entries");
  const lapack_int n = static_cast<lapack_int>(A.rows());
  ComplexSchur out;
  out.T = A;
  out.Q.resize(n, n);
  if (n == 0) return out;
  CVec w(n);
  lapack_int sdim = 0;
  LAPACK_Z_SELECT1 sel = nullptr;
  char sort = 'N';
  if (order == SchurOrder::open_left_half_plane) { sel = detail::select_lhp; sort = 'S'; }
  if (order == SchurOrder::open_unit_disc) { sel = detail::select_disc; sort = 'S'; }
  const lapack_int info = LAPACKE_zgees(LAPACK_COL_MAJOR, 'V', sort, sel, n, out.T.data(), n, &sdim,
                                        w.data(), out.Q.data(), n);
  if (info > 0 && info <= n)
    throw Error(Errc::not_converged, "schur", "QR iteration failed to converge (info=" + std::to_string(info) + ")");
  if (info != 0 && info <= n) throw Error(Errc::invariant, "schur", "zgees error " + std::to_string(info));
  // info == n+1 / n+2: reordering ill-conditioned; the ordering is still usable but flag it via sdim check upstream
  out.n_selected = static_cast<int>(sdim);
  return out;
}

inline ComplexSchur schur_decompose(const Mat& A, SchurOrder order = SchurOrder::none) {
  return schur_decompose(CMat(A.cast<cplx>()), order);
}

inline GeneralizedSchur qz_decompose(const CMat& A, const CMat& B, SchurOrder order) {
  const lapack_int n = static_cast<lapack_int>(A.rows());
  GeneralizedSchur g;
  g.S = A;
  g.T = B;
  g.Q.resize(n, n);
  g.Z.resize(n, n);
  g.alpha.resize(n);
  g.beta.resize(n);
  lapack_int sdim = 0;
  LAPACK_Z_SELECT2 sel = nullptr;
  char sort = 'N';
  if (order == SchurOrder::open_unit_disc) { sel = detail::select_disc_pencil; sort = 'S'; }
  if (order == SchurOrder::open_left_half_plane) { sel = detail::select_lhp_pencil; sort = 'S'; }
  const lapack_int info = LAPACKE_zgges(LAPACK_COL_MAJOR, 'V', 'V', sort, sel, n, g.S.data(), n, g.T.data(), n,
                                        &sdim, g.alpha.data(), g.beta.data(), g.Q.data(), n, g.Z.data(), n);
  if (info > 0 && info <= n) throw Error(Errc::not_converged, "qz", "QZ iteration failed (info=" + std::to_string(info) + ")");
  g.n_selected = static_cast<int>(sdim);
  return g;
}

inline CVec eig(const Mat& A) {
  if (A.rows() == 0) return CVec();
  Eigen::EigenSolver<Mat> es(A, false);
  if (es.info() != Eigen::Success) throw Error(Errc::not_converged, "eig", "eigenvalue iteration failed");
  return es.eigenvalues();
}

inline double spectral_radius(const Mat& A) {
  if (A.rows() == 0) return 0.0;
  return eig(A).cwiseAbs().maxCoeff();
}

inline double spectral_abscissa(const Mat& A) {
  if (A.rows() == 0) return -std::numeric_limits<double>::infinity();
  return eig(A).real().maxCoeff();
}

struct Svd {
  Mat U;
  Vec s;
  Mat V;
};

inline Svd svd(const Mat& M) {
  Eigen::BDCSVD<Mat> sv(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {sv.matrixU(), sv.singularValues(), sv.matrixV()};
}

inline double condition_number(const Mat& A) {
  if (A.size() == 0) return 1.0;
  Eigen::JacobiSVD<Mat> sv(A);
  const Vec& s = sv.singularValues();
  if (s(s.size() - 1) == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

// Solves A X = B. Throws on exact or numerical singularity (rcond below 1e-15);
// `rcond_out` lets callers flag ill-conditioning without failing.
inline Mat solve_linear(const Mat& A, const Mat& B, double* rcond_out = nullptr) {
  if (A.rows() != A.cols() || A.rows() != B.rows())
    throw Error(Errc::validation, "solve_linear", "dimension mismatch");
  if (A.rows() == 0) return Mat(0, B.cols());
  Eigen::PartialPivLU<Mat> lu(A);
  const double rc = lu.rcond();
  if (rcond_out) *rcond_out = rc;
  if (!(rc > 1e-15)) throw Error(Errc::singular, "solve_linear", "matrix is singular to working precision");
  return lu.solve(B);
}

inline Mat inv(const Mat& A, double* rcond_out = nullptr) {
  return solve_linear(A, Mat::Identity(A.rows(), A.cols()), rcond_out);
}

// Orthonormal basis of null(M) (columns), rank decided at tol*sigma_max.
inline Mat null_space(const Mat& M, double tol = 1e-12) {
  const Svd s = svd(M);
  const double smax = s.s.size() ? s.s(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < s.s.size(); ++i)
    if (s.s(i) > tol * std::max(smax, 1e-300)) ++rank;
  return s.V.rightCols(M.cols() - rank);
}

inline Mat pinv(const Mat& M, double tol = 1e-12) {
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(M);
  cod.setThreshold(tol);
  return cod.pseudoInverse();
}

// Lambda - A Lambda B = C with Schur forms of A and B cached, for repeated
// right-hand sides. Requires 1 - a_i b_j != 0 for all eigenvalue pairs.
class SylvesterSteinSolver {
 public:
  SylvesterSteinSolver() = default;
  SylvesterSteinSolver(const Mat& A, const Mat& B) { init(A, B); }

  void init(const Mat& A, const Mat& B) {
    if (A.rows() != A.cols() || B.rows() != B.cols())
      throw Error(Errc::validation, "sylvester_stein", "coefficients must be square");
    sa_ = schur_decompose(A);
    sb_ = schur_decompose(B);
    const auto da = sa_.T.diagonal();
    const auto db = sb_.T.diagonal();
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i < da.size(); ++i)
      for (int j = 0; j < db.size(); ++j) worst = std::min(worst, std::abs(1.0 - da(i) * db(j)));
    if (worst < 1e-13) throw Error(Errc::singular, "sylvester_stein", "1 - a_i b_j vanishes; operator singular");
    ready_ = true;
  }

  CMat solve(const CMat& C) const {
    const CMat& T = sa_.T;
    const CMat& S = sb_.T;
    const Eigen::Index na = T.rows(), nb = S.rows();
    if (C.rows() != na || C.cols() != nb) throw Error(Errc::validation, "sylvester_stein", "rhs dimension mismatch");
    CMat F = sa_.Q.adjoint() * C * sb_.Q;
    CMat Y(na, nb);
    CMat M(na, na);
    for (Eigen::Index j = 0; j < nb; ++j) {
      CVec rhs = F.col(j);
      if (j > 0) rhs += T * (Y.leftCols(j) * S.col(j).head(j));
      M = -S(j, j) * T;
      M.diagonal().array() += 1.0;
      Y.col(j) = M.triangularView<Eigen::Upper>().solve(rhs);
    }
    return sa_.Q * Y * sb_.Q.adjoint();
  }

  Mat solve(const Mat& C) const { return solve(CMat(C.cast<cplx>())).real(); }

  bool ready() const { return ready_; }

 private:
  ComplexSchur sa_, sb_;
  bool ready_ = false;
};

inline Mat solve_sylvester_stein(const Mat& A, const Mat& B, const Mat& C) {
  if (A.rows() == 0 || B.rows() == 0) return C;
  return SylvesterSteinSolver(A, B).solve(C);
}

// Sigma = Phi Sigma Phi^T + Q for a cached Phi.
class SteinSolver {
 public:
  SteinSolver() = default;
  explicit SteinSolver(const Mat& Phi) { init(Phi); }

  void init(const Mat& Phi) {
    if (Phi.rows() > 0 && spectral_radius(Phi) >= 1.0 - 1e-12)
      throw Error(Errc::unstable, "stein", "spectral radius of Phi is not below one");
    n_ = Phi.rows();
    if (n_ > 0) ss_.init(Phi, Phi.transpose());
  }

  Mat solve(const Mat& Q) const {
    if (n_ == 0) return Q;
    return symmetrize(ss_.solve(Q));
  }

  // General (non-symmetric) right-hand side.
  Mat solve_general(const Mat& C) const {
    if (n_ == 0) return C;
    return ss_.solve(C);
  }

 private:
  SylvesterSteinSolver ss_;
  Eigen::Index n_ = 0;
};

inline Mat solve_stein(const Mat& Phi, const Mat& Q) {
  const Mat Qs = checked_symmetric(Q, "Q");
  return SteinSolver(Phi).solve(Qs);
}

// A X + X A^T + Q = 0 by complex Bartels-Stewart.
inline Mat solve_lyap_ct(const Mat& A, const Mat& Q) {
  const Mat Qs = checked_symmetric(Q, "Q");
  const Eigen::Index n = A.rows();
  if (n == 0) return Qs;
  const ComplexSchur s = schur_decompose(A);
  const CMat& T = s.T;
  const auto d = T.diagonal();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (std::abs(d(i) + std::conj(d(j))) < 1e-13 * std::max(1.0, T.norm()))
        throw Error(Errc::singular, "lyap_ct", "A and -A^T share an eigenvalue");
  const CMat C = s.Q.adjoint() * Qs.cast<cplx>() * s.Q;
  CMat Y = CMat::Zero(n, n);
  CMat M(n, n);
  for (Eigen::Index j = n - 1; j >= 0; --j) {
    CVec rhs = -C.col(j);
    for (Eigen::Index k = j + 1; k < n; ++k) rhs -= std::conj(T(j, k)) * Y.col(k);
    M = T;
    M.diagonal().array() += std::conj(T(j, j));
    Y.col(j) = M.triangularView<Eigen::Upper>().solve(rhs);
  }
  return symmetrize((s.Q * Y * s.Q.adjoint()).real());
}

struct RiccatiOptions {
  // Hamiltonian eigenvalues with |Re| below this (relative to ||H||_F) count as imaginary-axis.
  double imag_axis_tol = 1e-7;
  double residual_tol = 1e-8;
};

// Stabilizing solution of A^T X + X A - (X B + S) R^{-1} (X B + S)^T + Q = 0.
inline Mat solve_care(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& S,
                      const RiccatiOptions& opt = {}) {
  const Eigen::Index n = A.rows(), m = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || R.rows() != m || S.rows() != n || S.cols() != m)
    throw Error(Errc::validation, "care", "dimension mismatch");
  const Mat Qs = checked_symmetric(Q, "Q");
  const Mat Rs = checked_symmetric(R, "R");
  const Mat Ri = inv(Rs);
  const Mat Ai = A - B * Ri * S.transpose();
  Mat H(2 * n, 2 * n);
  H << Ai, -B * Ri * B.transpose(), -(Qs - S * Ri * S.transpose()), -Ai.transpose();
  const double hn = std::max(H.norm(), 1e-300);
  const CVec ev = eig(H);
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i) closest = std::min(closest, std::abs(ev(i).real()));
  if (closest <= opt.imag_axis_tol * hn)
    throw Error(Errc::no_stabilizing, "care",
                "Hamiltonian has eigenvalues on the imaginary axis (min |Re| = " + std::to_string(closest) +
                    "); no stabilizing solution exists");
  const ComplexSchur sc = schur_decompose(H, SchurOrder::open_left_half_plane);
  if (sc.n_selected != n)
    throw Error(Errc::no_stabilizing, "care", "stable invariant subspace has wrong dimension");
  const CMat U11 = sc.Q.topLeftCorner(n, n);
  const CMat U21 = sc.Q.bottomLeftCorner(n, n);
  Eigen::PartialPivLU<CMat> lu(U11.transpose());
  if (!(lu.rcond() > 1e-14)) throw Error(Errc::no_stabilizing, "care", "stable subspace is not a graph");
  const CMat Xc = lu.solve(U21.transpose()).transpose();
  Mat X = symmetrize(Xc.real());
  const Mat K = Ri * (X * B + S).transpose();
  const Mat res = A.transpose() * X + X * A - (X * B + S) * K + Qs;
  const double scale = detail::rel_scale({(A.transpose() * X).norm() * 2.0, ((X * B + S) * K).norm(), Qs.norm()});
  if (res.norm() > opt.residual_tol * scale)
    throw Error(Errc::no_stabilizing, "care", "residual " + std::to_string(res.norm() / scale) + " exceeds tolerance");
  if (spectral_abscissa(A - B * K) >= 0.0)
    throw Error(Errc::no_stabilizing, "care", "closed loop is not Hurwitz");
  return X;
}

// Stabilizing solution of
//   X = Phi^T X Phi - (Phi^T X G + S)(R + G^T X G)^{-1}(G^T X Phi + S^T) + Q.
inline Mat solve_dare(const Mat& Phi, const Mat& G, const Mat& Q, const Mat& R, const Mat& S,
                      const RiccatiOptions& opt = {}) {
  const Eigen::Index n = Phi.rows(), m = G.cols();
  if (Phi.cols() != n || G.rows() != n || Q.rows() != n || R.rows() != m || S.rows() != n || S.cols() != m)
    throw Error(Errc::validation, "dare", "dimension mismatch");
  const Mat Qs = checked_symmetric(Q, "Q");
  const Mat Rs = checked_symmetric(R, "R");
  // Extended symplectic pencil, compressed to 2n x 2n by eliminating the input block.
  Mat M = Mat::Zero(2 * n + m, 2 * n + m), N = Mat::Zero(2 * n + m, 2 * n + m);
  M.block(0, 0, n, n) = Phi;
  M.block(0, 2 * n, n, m) = G;
  M.block(n, 0, n, n) = -Qs;
  M.block(n, n, n, n) = Mat::Identity(n, n);
  M.block(n, 2 * n, n, m) = -S;
  M.block(2 * n, 0, m, n) = S.transpose();
  M.block(2 * n, 2 * n, m, m) = Rs;
  N.block(0, 0, n, n) = Mat::Identity(n, n);
  N.block(n, n, n, n) = Phi.transpose();
  N.block(2 * n, n, m, n) = -G.transpose();
  Eigen::HouseholderQR<Mat> qr(M.rightCols(m));
  const Mat Qfull = qr.householderQ();
  const Mat P = Qfull.rightCols(2 * n).transpose();
  const Mat Mc = P * M.leftCols(2 * n);
  const Mat Nc = P * N.leftCols(2 * n);
  GeneralizedSchur gs = qz_decompose(Mc.cast<cplx>(), Nc.cast<cplx>(), SchurOrder::open_unit_disc);
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < gs.alpha.size(); ++i) {
    if (std::abs(gs.beta(i)) == 0.0) continue;
    closest = std::min(closest, std::abs(std::abs(gs.alpha(i) / gs.beta(i)) - 1.0));
  }
  if (closest <= opt.imag_axis_tol)
    throw Error(Errc::no_stabilizing, "dare", "symplectic pencil has unit-circle eigenvalues; no stabilizing solution");
  if (gs.n_selected != n) throw Error(Errc::no_stabilizing, "dare", "stable deflating subspace has wrong dimension");
  const CMat Z11 = gs.Z.topLeftCorner(n, n);
  const CMat Z21 = gs.Z.block(n, 0, n, n);
  Eigen::PartialPivLU<CMat> lu(Z11.transpose());
  if (!(lu.rcond() > 1e-14)) throw Error(Errc::no_stabilizing, "dare", "stable subspace is not a graph");
  Mat X = symmetrize(lu.solve(Z21.transpose()).transpose().real());
  const Mat Rb = Rs + G.transpose() * X * G;
  const Mat Kg = solve_linear(Rb, G.transpose() * X * Phi + S.transpose());
  const Mat res = Phi.transpose() * X * Phi - (Phi.transpose() * X * G + S) * Kg + Qs - X;
  const double scale = detail::rel_scale({X.norm(), (Phi.transpose() * X * Phi).norm(), Qs.norm()});
  if (res.norm() > opt.residual_tol * scale)
    throw Error(Errc::no_stabilizing, "dare", "residual " + std::to_string(res.norm() / scale) + " exceeds tolerance");
  if (spectral_radius(Phi - G * Kg) >= 1.0)
    throw Error(Errc::no_stabilizing, "dare", "closed loop is not Schur stable");
  return X;
}

// Symmetric PSD square root factor R with M = R^T R (eigenvalue clipping at 0).
inline Mat psd_sqrt_factor(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(M));
  const Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return d.asDiagonal() * es.eigenvectors().transpose();
}

inline Mat blkdiag(const Mat& A, const Mat& B) {
  Mat out = Mat::Zero(A.rows() + B.rows(), A.cols() + B.cols());
  out.topLeftCorner(A.rows(), A.cols()) = A;
  out.bottomRightCorner(B.rows(), B.cols()) = B;
  return out;
}

inline Mat vstack(const Mat& A, const Mat& B) {
  if (A.rows() == 0) return B;
  if (B.rows() == 0) return A;
  Mat out(A.rows() + B.rows(), A.cols());
  out << A, B;
  return out;
}

inline Mat hstack(const Mat& A, const Mat& B) {
  if (A.cols() == 0) return B;
  if (B.cols() == 0) return A;
  Mat out(A.rows(), A.cols() + B.cols());
  out << A, B;
  return out;
}

}  // namespace passyn
