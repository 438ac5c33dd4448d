#pragma once

// Small dense SDP solver: minimize c0 + c^T y + 1/2 y^T P y subject to affine LMIs
// F_j(y) = F_j0 + sum_i y_i F_ji >= 0 and A y = b. Equalities are eliminated
// through a null-space basis; the rest is an infeasible-start primal-dual
// interior-point method with Nesterov-Todd scaling and Mehrotra correction.

#include <cstdio>
#include <functional>
#include <vector>

#include "passyn/matkit.hpp"

namespace passyn {

struct LmiBlock {
  Mat F0;
  std::vector<Mat> Fi;
};

struct SdpProblem {
  int nvar = 0;
  double c0 = 0.0;
  Vec c;
  Mat P;  // optional PSD quadratic term (empty for a linear objective)
  std::vector<LmiBlock> blocks;
  Mat Aeq;
  Vec beq;
};

struct SdpOptions {
  double tol = 1e-8;      // relative duality gap
  double feastol = 1e-8;  // relative primal and dual residuals
  double dual_floor = 1e-5;  // stalled dual residual still accepted
  int max_iter = 120;
};

enum class SdpStatus { optimal, infeasible, unbounded, max_iterations };

struct SdpSolution {
  Vec y;
  double objective = 0.0;
  double gap = 0.0;           // <S, Z> at exit
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double min_eig = 0.0;       // smallest eigenvalue over all blocks at y
  std::vector<Mat> Z;         // dual multipliers
  int iterations = 0;
  bool reduced_accuracy = false;  // dual residual stalled between feastol and dual_floor
  SdpStatus status = SdpStatus::max_iterations;
};

// Affine block from a matrix-valued map, probed at 0 and the unit vectors (exact for affine maps).
inline LmiBlock probe_affine(int nvar, const std::function<Mat(const Vec&)>& f) {
  LmiBlock b;
  Vec y = Vec::Zero(nvar);
  b.F0 = symmetrize(f(y));
  b.Fi.resize(nvar);
  for (int i = 0; i < nvar; ++i) {
    y.setZero();
    y(i) = 1.0;
    b.Fi[i] = symmetrize(f(y)) - b.F0;
  }
  return b;
}

namespace detail {

inline double block_dot(const std::vector<Mat>& A, const std::vector<Mat>& B) {
  double v = 0.0;
  for (std::size_t j = 0; j < A.size(); ++j) v += A[j].cwiseProduct(B[j]).sum();
  return v;
}

inline double block_norm(const std::vector<Mat>& A) { return std::sqrt(block_dot(A, A)); }

// Largest alpha with lam + alpha*D >= 0 (lam diagonal, positive).
inline double max_step(const Vec& lam, const Mat& D) {
  if (D.rows() == 0) return std::numeric_limits<double>::infinity();
  const Vec is = lam.cwiseSqrt().cwiseInverse();
  const Mat X = is.asDiagonal() * D * is.asDiagonal();
  const double t = -Eigen::SelfAdjointEigenSolver<Mat>(symmetrize(X), Eigen::EigenvaluesOnly).eigenvalues()(0);
  return t > 0.0 ? 1.0 / t : std::numeric_limits<double>::infinity();
}

inline Mat sym_prod(const Mat& A, const Mat& B) { return 0.5 * (A * B + B * A); }

// Shift a symmetric matrix into the interior as in the standard cone initialization.
inline void shift_interior(Mat& X) {
  if (X.rows() == 0) return;
  const double t = -Eigen::SelfAdjointEigenSolver<Mat>(X, Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (t >= -1e-8 * std::max(1.0, X.norm())) X.diagonal().array() += 1.0 + t;
}

struct NtScaling {
  Mat r, rinv;
  Vec lam;
};

inline bool nt_scaling(const Mat& S, const Mat& Z, NtScaling& w) {
  Eigen::LLT<Mat> ls(S), lz(Z);
  if (ls.info() != Eigen::Success || lz.info() != Eigen::Success) return false;
  const Mat Ls = ls.matrixL(), Lz = lz.matrixL();
  Eigen::JacobiSVD<Mat> sv(Lz.transpose() * Ls, Eigen::ComputeFullU | Eigen::ComputeFullV);
  w.lam = sv.singularValues();
  if (!(w.lam.minCoeff() > 0.0) || !w.lam.allFinite()) return false;
  const Vec sq = w.lam.cwiseSqrt();
  w.r = Ls * sv.matrixV() * sq.cwiseInverse().asDiagonal();
  w.rinv = sq.asDiagonal() * sv.matrixV().transpose() * Ls.triangularView<Eigen::Lower>().solve(Mat::Identity(S.rows(), S.rows()));
  return true;
}

}  // namespace detail

inline SdpSolution solve_sdp(const SdpProblem& p, const SdpOptions& opt = {}) {
  const int n = p.nvar;
  const Vec c = p.c.size() ? p.c : Vec::Zero(n);
  for (const auto& b : p.blocks)
    if (static_cast<int>(b.Fi.size()) != n) throw Error(Errc::validation, "solve_sdp", "block coefficient count");

  // Eliminate equalities: y = y0 + N z.
  Vec y0 = Vec::Zero(n);
  Mat Nb = Mat::Identity(n, n);
  if (p.Aeq.rows() > 0) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(p.Aeq);
    y0 = cod.solve(p.beq);
    if ((p.Aeq * y0 - p.beq).norm() > 1e-9 * (1.0 + p.beq.norm()))
      throw Error(Errc::infeasible, "solve_sdp", "equality constraints are inconsistent");
    Nb = null_space(p.Aeq, 1e-12);
  }
  const int m = static_cast<int>(Nb.cols());
  double c0 = p.c0 + c.dot(y0);
  Vec cz = Nb.transpose() * c;
  Mat Pz = Mat::Zero(m, m);
  if (p.P.size()) {
    c0 += 0.5 * y0.dot(p.P * y0);
    cz += Nb.transpose() * (p.P * y0);
    Pz = symmetrize(Nb.transpose() * p.P * Nb);
  }
  std::vector<LmiBlock> blocks;
  int mdim = 0;
  for (const auto& b : p.blocks) {
    if (b.F0.rows() == 0) continue;
    LmiBlock r;
    r.F0 = b.F0;
    for (int i = 0; i < n; ++i)
      if (y0(i) != 0.0) r.F0 += y0(i) * b.Fi[i];
    r.Fi.assign(m, Mat::Zero(b.F0.rows(), b.F0.cols()));
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < n; ++i)
        if (Nb(i, k) != 0.0) r.Fi[k] += Nb(i, k) * b.Fi[i];
    mdim += static_cast<int>(r.F0.rows());
    blocks.push_back(std::move(r));
  }
  const std::size_t nb = blocks.size();

  auto F_at = [&](std::size_t j, const Vec& z) {
    Mat F = blocks[j].F0;
    for (int i = 0; i < m; ++i)
      if (z(i) != 0.0) F += z(i) * blocks[j].Fi[i];
    return F;
  };
  auto adjoint = [&](const std::vector<Mat>& X) {  // [sum_j <F_ji, X_j>]_i
    Vec v = Vec::Zero(m);
    for (std::size_t j = 0; j < nb; ++j)
      for (int i = 0; i < m; ++i) v(i) += blocks[j].Fi[i].cwiseProduct(X[j]).sum();
    return v;
  };
  auto gram = [&](const std::vector<std::vector<Mat>>& T) {
    Mat M = Pz;
    for (std::size_t j = 0; j < nb; ++j) {
      const Eigen::Index N = blocks[j].F0.rows();
      Mat V(N * N, m);
      for (int i = 0; i < m; ++i) V.col(i) = Eigen::Map<const Vec>(T[j][i].data(), N * N);
      M.noalias() += V.transpose() * V;
    }
    return symmetrize(M);
  };
  auto factor = [&](const Mat& M) {
    const double sc = std::max(M.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    Mat Mr = M;
    Mr.diagonal().array() += 1e-14 * sc;
    return Eigen::LDLT<Mat>(Mr);
  };

  std::vector<Mat> F0s(nb);
  for (std::size_t j = 0; j < nb; ++j) F0s[j] = blocks[j].F0;
  const double resx0 = std::max(1.0, cz.norm()), resz0 = std::max(1.0, detail::block_norm(F0s));

  SdpSolution sol;
  auto finish = [&](const Vec& z, const std::vector<Mat>& Z) {
    sol.y = y0 + Nb * z;
    sol.objective = c0 + cz.dot(z) + 0.5 * z.dot(Pz * z);
    sol.Z = Z;
    double me = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nb; ++j)
      me = std::min(me, Eigen::SelfAdjointEigenSolver<Mat>(F_at(j, z), Eigen::EigenvaluesOnly).eigenvalues()(0));
    sol.min_eig = me;
    return sol;
  };

  // Initial point: [P G'; G -I][z; u] = [-c; h] with G z = -sum z_i F_i, h = F0.
  Vec z = Vec::Zero(m);
  std::vector<Mat> S(nb), Z(nb);
  {
    std::vector<std::vector<Mat>> T(nb);
    for (std::size_t j = 0; j < nb; ++j) T[j] = blocks[j].Fi;
    const Mat M = gram(T);
    z = factor(M).solve(Vec(-cz - adjoint(F0s)));
    for (std::size_t j = 0; j < nb; ++j) {
      S[j] = symmetrize(F_at(j, z));
      Z[j] = -S[j];
      detail::shift_interior(S[j]);
      detail::shift_interior(Z[j]);
    }
  }
  if (nb == 0) {
    z = factor(Pz).solve(Vec(-cz));
    sol.status = SdpStatus::optimal;
    return finish(z, Z);
  }

  std::vector<detail::NtScaling> w(nb);
  double prev_dres = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= opt.max_iter; ++it) {
    std::vector<Mat> rz(nb);
    for (std::size_t j = 0; j < nb; ++j) rz[j] = S[j] - F_at(j, z);
    const Vec rx = Pz * z + cz - adjoint(Z);
    const double gap = detail::block_dot(S, Z);
    const double pcost = c0 + cz.dot(z) + 0.5 * z.dot(Pz * z);
    sol.gap = gap;
    sol.primal_residual = detail::block_norm(rz) / resz0;
    sol.dual_residual = rx.norm() / resx0;
    sol.iterations = it;
#ifdef PASSYN_DEBUG
    std::fprintf(stderr, "sdp it %d pcost %.10g gap %.3g pres %.3g dres %.3g\n", it, pcost, gap, sol.primal_residual,
                 sol.dual_residual);

#endif
    if (!std::isfinite(pcost) || !std::isfinite(gap)) break;
    const bool converged = sol.primal_residual <= opt.feastol && gap <= opt.tol * (1.0 + std::abs(pcost));
    if (converged && sol.dual_residual <= opt.feastol) {
      sol.status = SdpStatus::optimal;
      return finish(z, Z);
    }
    // With fully active blocks the Newton system loses the digits needed to push the
    // dual residual further; accept once it has stopped improving.
    if (converged && sol.dual_residual <= opt.dual_floor && sol.dual_residual >= 0.5 * prev_dres) {
      sol.status = SdpStatus::optimal;
      sol.reduced_accuracy = true;
      return finish(z, Z);
    }
    prev_dres = sol.dual_residual;
    if (it == opt.max_iter) break;

    bool ok = true;
    for (std::size_t j = 0; j < nb && ok; ++j) ok = detail::nt_scaling(S[j], Z[j], w[j]);
    if (!ok) break;
    std::vector<std::vector<Mat>> T(nb);
    for (std::size_t j = 0; j < nb; ++j) {
      T[j].resize(m);
      for (int i = 0; i < m; ++i) T[j][i] = symmetrize(w[j].rinv * blocks[j].Fi[i] * w[j].rinv.transpose());
    }
    const Mat M = gram(T);
    const auto ldlt = factor(M);

    // Solves for (dz, dZ~, dS~) given scaled complementarity target rs.
    auto solve = [&](double scale, const std::vector<Mat>& rs, Vec& dz, std::vector<Mat>& dZt, std::vector<Mat>& dSt) {
      std::vector<Mat> v(nb), Wb(nb);
      Vec rhs = -scale * rx;
      for (std::size_t j = 0; j < nb; ++j) {
        const Vec& lam = w[j].lam;
        const Eigen::Index N = lam.size();
        v[j].resize(N, N);
        for (Eigen::Index a = 0; a < N; ++a)
          for (Eigen::Index b = 0; b < N; ++b) v[j](a, b) = -2.0 * rs[j](a, b) / (lam(a) + lam(b));
        Wb[j] = symmetrize(w[j].rinv * (-scale * rz[j]) * w[j].rinv.transpose());
        const Mat X = v[j] - Wb[j];
        for (int i = 0; i < m; ++i) rhs(i) += T[j][i].cwiseProduct(X).sum();
      }
      dz = ldlt.solve(rhs);
      for (int k = 0; k < 2; ++k) dz += ldlt.solve(Vec(rhs - M * dz));
      dZt.resize(nb);
      dSt.resize(nb);
      for (std::size_t j = 0; j < nb; ++j) {
        Mat G = Mat::Zero(v[j].rows(), v[j].cols());
        for (int i = 0; i < m; ++i)
          if (dz(i) != 0.0) G -= dz(i) * T[j][i];
        dZt[j] = G - Wb[j] + v[j];
        dSt[j] = v[j] - dZt[j];
      }
    };
    auto step_to_boundary = [&](const std::vector<Mat>& dZt, const std::vector<Mat>& dSt) {
      double a = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nb; ++j)
        a = std::min({a, detail::max_step(w[j].lam, dZt[j]), detail::max_step(w[j].lam, dSt[j])});
      return a;
    };

    std::vector<Mat> rs(nb);
    for (std::size_t j = 0; j < nb; ++j) rs[j] = Mat(w[j].lam.cwiseAbs2().asDiagonal());
    Vec dz;
    std::vector<Mat> dZa, dSa;
    solve(1.0, rs, dz, dZa, dSa);
    const double aa = std::min(1.0, step_to_boundary(dZa, dSa));
    const double mu = gap / mdim;
    const double sigma = std::pow(1.0 - aa, 3);
    for (std::size_t j = 0; j < nb; ++j) {
      rs[j] += detail::sym_prod(dSa[j], dZa[j]);
      rs[j].diagonal().array() -= sigma * mu;
    }
    std::vector<Mat> dZt, dSt;
    solve(1.0 - sigma, rs, dz, dZt, dSt);
    if (!dz.allFinite()) break;
    const double alpha = std::min(1.0, 0.99 * step_to_boundary(dZt, dSt));
    z += alpha * dz;
    for (std::size_t j = 0; j < nb; ++j) {
      const Mat lam = w[j].lam.asDiagonal();
      S[j] = symmetrize(w[j].r * (lam + alpha * dSt[j]) * w[j].r.transpose());
      Z[j] = symmetrize(w[j].rinv.transpose() * (lam + alpha * dZt[j]) * w[j].rinv);
    }
  }
  // No convergence: a persistent primal residual means the LMIs admit no point.
  sol.status = sol.primal_residual > std::sqrt(opt.feastol) ? SdpStatus::infeasible : SdpStatus::max_iterations;
  return finish(z, Z);
}

}  // namespace passyn
