#pragma once

// Positive-realness constraint on U(x) = [[Q, Q], [0, F]] with Q = Q0 + Q1(x) N0,
// the primal problem (min J(x) s.t. KYP LMI in Sigma_U) and its dual over the
// multiplier Upsilon, solved by a log-det barrier on psi = (Upsilon12, Upsilon22).

#include <vector>

#include "passyn/h2obj.hpp"
#include "passyn/lmi.hpp"

namespace passyn {

// Realization of U with fixed (Phi, Gamma); Pi and Delta are affine in x.
// States are restricted to the controllable subspace and scaled so that the
// controllability Gramian is the identity.
struct ConstraintU {
  Mat Phi, Gamma;
  Mat Pi0, Delta0;
  std::vector<Mat> Pi_i, Delta_i;
  Mat T;        // reduced state = T * full state
  Eigen::Index full_order = 0;

  Eigen::Index dim() const { return static_cast<Eigen::Index>(Pi_i.size()); }
  Eigen::Index states() const { return Phi.rows(); }
  Eigen::Index ports() const { return Gamma.cols(); }

  Mat Pi(const Vec& x) const {
    Mat P = Pi0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x(i) != 0.0) P += x(i) * Pi_i[i];
    return P;
  }
  Mat Delta(const Vec& x) const {
    Mat D = Delta0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x(i) != 0.0) D += x(i) * Delta_i[i];
    return D;
  }
  StateSpace system(const Vec& x) const { return {Phi, Gamma, Pi(x), Delta(x), Domain::discrete}; }

  // vec{[-Pi(x) -Delta(x)]} = h + E x (column-major).
  void affine_form(Vec& h, Mat& E) const {
    auto pack = [&](const Mat& P, const Mat& D) {
      Mat M(P.rows(), P.cols() + D.cols());
      M << -P, -D;
      return Vec(Eigen::Map<const Vec>(M.data(), M.size()));
    };
    h = pack(Pi0, Delta0);
    E.resize(h.size(), dim());
    for (Eigen::Index i = 0; i < dim(); ++i) E.col(i) = pack(Pi_i[i], Delta_i[i]);
  }
};

inline ConstraintU build_constraint_U_affine(const IncrementalPlant& V, const SpectralFactorF& F, int n,
                                             double ctrb_tol = 1e-13) {
  if (n < 0) throw Error(Errc::validation, "constraint_U", "FIR order must be non-negative");
  const StateSpace &Q0 = V.Q0, &N0 = V.N0, &Fs = F.F;
  const Eigen::Index nu = Q0.outputs(), nc = Q0.states(), ns = static_cast<Eigen::Index>(n) * nu, nf = Fs.states();
  if (N0.outputs() != nu || Fs.outputs() != nu) throw Error(Errc::validation, "constraint_U", "port dimension mismatch");
  const Eigen::Index nU = nc + ns + nf;

  Mat Phi = Mat::Zero(nU, nU);
  Phi.topLeftCorner(nc, nc) = Q0.A;
  if (n > 0) Phi.block(nc, 0, nu, nc) = N0.C;
  for (int k = 1; k < n; ++k) Phi.block(nc + k * nu, nc + (k - 1) * nu, nu, nu) = Mat::Identity(nu, nu);
  Phi.bottomRightCorner(nf, nf) = Fs.A;
  Mat Gamma = Mat::Zero(nU, 2 * nu);
  Gamma.topLeftCorner(nc, nu) = Q0.B;
  Gamma.block(0, nu, nc, nu) = Q0.B;
  if (n > 0) {
    Gamma.block(nc, 0, nu, nu) = N0.D;
    Gamma.block(nc, nu, nu, nu) = N0.D;
  }
  Gamma.bottomRightCorner(nf, nu) = Fs.B;

  // Q row of Pi: [C_Q0 + Q1(0) C_N0, Q1(1), ..., Q1(n), 0]; Delta_Q = D_Q0 + Q1(0) D_N0.
  Mat Pi0 = Mat::Zero(2 * nu, nU);
  Pi0.topLeftCorner(nu, nc) = Q0.C;
  Pi0.bottomRightCorner(nu, nf) = Fs.C;
  Mat D0 = Mat::Zero(2 * nu, 2 * nu);
  D0.topLeftCorner(nu, nu) = Q0.D;
  D0.topRightCorner(nu, nu) = Q0.D;
  D0.bottomRightCorner(nu, nu) = Fs.D;
  const Eigen::Index d = static_cast<Eigen::Index>(n + 1) * nu * nu;
  std::vector<Mat> Pis(d, Mat::Zero(2 * nu, nU)), Ds(d, Mat::Zero(2 * nu, 2 * nu));
  for (int k = 0; k <= n; ++k)
    for (Eigen::Index a = 0; a < nu; ++a)
      for (Eigen::Index b = 0; b < nu; ++b) {
        const Eigen::Index i = k * nu * nu + a * nu + b;
        if (k == 0) {
          Pis[i].block(a, 0, 1, nc) = N0.C.row(b);
          Ds[i].block(a, 0, 1, nu) = N0.D.row(b);
          Ds[i].block(a, nu, 1, nu) = N0.D.row(b);
        } else {
          Pis[i](a, nc + (k - 1) * nu + b) = 1.0;
        }
      }

  // Controllable part, scaled to a unit Gramian.
  const Mat Wc = SteinSolver(Phi).solve(Gamma * Gamma.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(Wc);
  const Vec lam = es.eigenvalues();
  const double lmax = lam.size() ? lam.maxCoeff() : 0.0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (lam(i) > ctrb_tol * lmax) keep.push_back(i);
  const Eigen::Index r = static_cast<Eigen::Index>(keep.size());
  Mat T(r, nU), Tp(nU, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    const Eigen::Index i = keep[j];
    T.row(j) = es.eigenvectors().col(i).transpose() / std::sqrt(lam(i));
    Tp.col(j) = es.eigenvectors().col(i) * std::sqrt(lam(i));
  }
  ConstraintU U;
  U.full_order = nU;
  U.T = T;
  U.Phi = T * Phi * Tp;
  U.Gamma = T * Gamma;
  U.Pi0 = Pi0 * Tp;
  U.Delta0 = D0;
  U.Pi_i.resize(d);
  U.Delta_i = Ds;
  for (Eigen::Index i = 0; i < d; ++i) U.Pi_i[i] = Pis[i] * Tp;
  if (spectral_radius(U.Phi) >= 1.0) throw Error(Errc::unstable, "constraint_U", "U is not stable");
  return U;
}

// KYP matrix [[Phi'S Phi - S, Phi'S Gamma - Pi'], [., Gamma'S Gamma - Delta - Delta']], required <= 0.
inline Mat kyp_lmi(const ConstraintU& U, const Mat& S, const Vec& x) {
  const Mat Pi = U.Pi(x), D = U.Delta(x);
  const Eigen::Index nU = U.states(), m = U.ports();
  Mat M(nU + m, nU + m);
  M.topLeftCorner(nU, nU) = U.Phi.transpose() * S * U.Phi - S;
  M.topRightCorner(nU, m) = U.Phi.transpose() * S * U.Gamma - Pi.transpose();
  M.bottomLeftCorner(m, nU) = M.topRightCorner(nU, m).transpose();
  M.bottomRightCorner(m, m) = U.Gamma.transpose() * S * U.Gamma - D - D.transpose();
  return symmetrize(M);
}

struct Op6Result {
  Vec x;
  Mat SigmaU;
  double J = 0.0;
  SdpSolution sdp;
};

// Primal problem through the generic SDP solver; meant for small n.
inline Op6Result solve_op6_primal(const QuadraticObjective& q, const ConstraintU& U, const SdpOptions& opt = {}) {
  const int d = static_cast<int>(U.dim()), nU = static_cast<int>(U.states());
  const int ns = detail::sym_count(nU);
  SdpProblem p;
  p.nvar = d + ns;
  p.c0 = q.J0;
  p.c = Vec::Zero(p.nvar);
  p.c.head(d) = q.g;
  p.P = Mat::Zero(p.nvar, p.nvar);
  p.P.topLeftCorner(d, d) = q.H;
  p.blocks.push_back(probe_affine(p.nvar, [&](const Vec& y) {
    return Mat(-kyp_lmi(U, detail::unpack_sym(y, d, nU), y.head(d)));
  }));
  Op6Result out;
  out.sdp = solve_sdp(p, opt);
  if (out.sdp.status == SdpStatus::infeasible) throw Error(Errc::infeasible, "op6", "positive-realness LMI is infeasible");
  if (out.sdp.status != SdpStatus::optimal) throw Error(Errc::not_converged, "op6", "SDP did not converge");
  out.x = out.sdp.y.head(d);
  out.SigmaU = detail::unpack_sym(out.sdp.y, d, nU);
  out.J = q.value(out.x);
  return out;
}

struct Op7Options {
  double tol = 1e-9;          // mu * dim(Upsilon) <= tol (1 + |J_d|)
  double decrement_tol = 2e-14;  // relative to 1 + |barrier value|
  double mu_factor = 0.2;
  int max_newton = 50;           // per barrier level; the next level resumes from the last iterate
  int max_outer = 80;
};

struct Op7TraceRecord {
  int outer = 0;
  int newton = 0;
  double mu = 0.0;
  double Jd = 0.0;
  double lambda_min = 0.0;
  double decrement = 0.0;
};

struct Op7Result {
  Vec psi, x;
  Mat Upsilon;
  double J = 0.0;    // primal quadratic at the recovered x
  double Jd = 0.0;   // dual objective at psi
  double mu = 0.0;
  double lambda_min = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  std::vector<Op7TraceRecord> trace;
};

// Dual variables psi = [vec(Upsilon12) (column-major), upper triangle of Upsilon22 (row by row)];
// Upsilon11 solves Upsilon11 = Phi Upsilon11 Phi' + Phi U12 Gamma' + Gamma U12' Phi' + Gamma U22 Gamma'.
class DualProblem {
 public:
  DualProblem(const QuadraticObjective& q, const ConstraintU& U) : q_(q), U_(U), stein_(U.Phi) {
    nU_ = U.states();
    p_ = U.ports();
    m12_ = nU_ * p_;
    m_ = m12_ + detail::sym_count(static_cast<int>(p_));
    N_ = nU_ + p_;
    // c(psi, x) = -2 tr(U12 Pi(x)) - 2 tr(U22 Delta(x)) = ht'psi + psi'Et x
    const Eigen::Index d = U.dim();
    ht_ = constraint_row(U.Pi0, U.Delta0);
    Et_.resize(m_, d);
    for (Eigen::Index i = 0; i < d; ++i) Et_.col(i) = constraint_row(U.Pi_i[i], U.Delta_i[i]);
    ldlt_.compute(q.H_solve);
    HiG_ = ldlt_.solve(q.g);
    HiE_ = ldlt_.solve(Mat(Et_.transpose()));
    K_ = symmetrize(Et_ * HiE_);
    k_ = Et_ * HiG_;
    build_basis();
  }

  Eigen::Index size() const { return m_; }
  Eigen::Index upsilon_dim() const { return N_; }
  const Mat& curvature() const { return K_; }

  Mat upsilon(const Vec& psi) const {
    Mat U12, U22;
    split(psi, U12, U22);
    const Mat R = U_.Phi * U12 * U_.Gamma.transpose();
    const Mat U11 = stein_.solve(R + R.transpose() + U_.Gamma * U22 * U_.Gamma.transpose());
    Mat Y(N_, N_);
    Y << U11, U12, U12.transpose(), U22;
    return Y;
  }

  double dual_value(const Vec& psi) const {
    const Vec s = q_.g + Et_.transpose() * psi;
    return q_.J0 + ht_.dot(psi) - 0.5 * s.dot(ldlt_.solve(s));
  }
  Vec dual_gradient(const Vec& psi) const { return ht_ - k_ - K_ * psi; }
  Vec recover_x(const Vec& psi) const { return -(HiG_ + HiE_ * psi); }

  // <A, dUpsilon/dpsi_i> for symmetric A, through one adjoint Stein solve.
  Vec adjoint(const Mat& A) const {
    const Mat A11 = A.topLeftCorner(nU_, nU_), A12 = A.topRightCorner(nU_, p_), A22 = A.bottomRightCorner(p_, p_);
    const Mat X = adjoint_stein_.solve(A11);
    Vec v(m_);
    const Mat G12 = 2.0 * (U_.Phi.transpose() * X * U_.Gamma) + 2.0 * A12;
    v.head(m12_) = Eigen::Map<const Vec>(G12.data(), m12_);
    const Mat G22 = U_.Gamma.transpose() * X * U_.Gamma + A22;
    Eigen::Index k = m12_;
    for (Eigen::Index a = 0; a < p_; ++a)
      for (Eigen::Index b = a; b < p_; ++b) v(k++) = a == b ? G22(a, a) : G22(a, b) + G22(b, a);
    return v;
  }

  Mat basis(Eigen::Index i) const {
    Mat L = Mat::Zero(N_, N_);
    L.topLeftCorner(nU_, nU_) = basis11_[i];
    if (i < m12_) {
      const Eigen::Index r = i % nU_, c = i / nU_;
      L(r, nU_ + c) = L(nU_ + c, r) = 1.0;
    } else {
      const auto [a, b] = pair22_[i - m12_];
      L(nU_ + a, nU_ + b) = L(nU_ + b, nU_ + a) = 1.0;
    }
    return L;
  }

  // Gram matrix [tr(Y^-1 L_i Y^-1 L_j)] for Y = L L'.
  Mat barrier_hessian(const Eigen::LLT<Mat>& chol) const {
    Mat V(N_ * N_, m_);
    const Mat L = chol.matrixL();
    for (Eigen::Index i = 0; i < m_; ++i) {
      Mat S = L.triangularView<Eigen::Lower>().solve(basis(i));
      S = L.triangularView<Eigen::Lower>().solve(Mat(S.transpose()));
      V.col(i) = Eigen::Map<const Vec>(S.data(), N_ * N_);
    }
    Mat G = Mat::Zero(m_, m_);
    G.selfadjointView<Eigen::Lower>().rankUpdate(V.transpose());
    return Mat(G.selfadjointView<Eigen::Lower>());
  }

  Vec initial(double eta) const {
    Vec psi = Vec::Zero(m_);
    Eigen::Index k = m12_;
    for (Eigen::Index a = 0; a < p_; ++a)
      for (Eigen::Index b = a; b < p_; ++b, ++k)
        if (a == b) psi(k) = eta;
    return psi;
  }

 private:
  void split(const Vec& psi, Mat& U12, Mat& U22) const {
    U12 = Eigen::Map<const Mat>(psi.data(), nU_, p_);
    U22.resize(p_, p_);
    Eigen::Index k = m12_;
    for (Eigen::Index a = 0; a < p_; ++a)
      for (Eigen::Index b = a; b < p_; ++b) U22(a, b) = U22(b, a) = psi(k++);
  }

  Vec constraint_row(const Mat& Pi, const Mat& D) const {
    Vec v(m_);
    for (Eigen::Index c = 0; c < p_; ++c)
      for (Eigen::Index r = 0; r < nU_; ++r) v(c * nU_ + r) = -2.0 * Pi(c, r);
    Eigen::Index k = m12_;
    for (Eigen::Index a = 0; a < p_; ++a)
      for (Eigen::Index b = a; b < p_; ++b) v(k++) = -2.0 * (a == b ? D(a, a) : D(a, b) + D(b, a));
    return v;
  }

  void build_basis() {
    adjoint_stein_.init(U_.Phi.transpose());
    basis11_.resize(m_);
    for (Eigen::Index c = 0; c < p_; ++c)
      for (Eigen::Index r = 0; r < nU_; ++r) {
        const Mat R = U_.Phi.col(r) * U_.Gamma.col(c).transpose();
        const Mat X = stein_.solve_general(R);
        basis11_[c * nU_ + r] = X + X.transpose();
      }
    Eigen::Index k = m12_;
    for (Eigen::Index a = 0; a < p_; ++a)
      for (Eigen::Index b = a; b < p_; ++b, ++k) {
        pair22_.push_back({a, b});
        Mat R = U_.Gamma.col(a) * U_.Gamma.col(b).transpose();
        if (a != b) R += R.transpose().eval();
        basis11_[k] = stein_.solve(R);
      }
  }

  const QuadraticObjective& q_;
  const ConstraintU& U_;
  SteinSolver stein_, adjoint_stein_;
  Eigen::Index nU_ = 0, p_ = 0, m12_ = 0, m_ = 0, N_ = 0;
  Vec ht_, HiG_, k_;
  Mat Et_, HiE_, K_;
  Eigen::LDLT<Mat> ldlt_;
  std::vector<Mat> basis11_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pair22_;
};

inline Op7Result solve_op7(const QuadraticObjective& q, const ConstraintU& U, const Op7Options& opt = {}) {
  if (U.dim() != q.g.size()) throw Error(Errc::validation, "op7", "objective and constraint dimensions differ");
  const DualProblem dp(q, U);
  const Eigen::Index m = dp.size(), N = dp.upsilon_dim();
  Op7Result res;

  double mu = (1.0 + std::abs(q.J0)) / static_cast<double>(N);
  const double kn = dp.curvature().norm();
  const double eta = kn > 0.0 ? std::min(1.0, std::sqrt(mu / kn)) : 1.0;
  Vec psi = dp.initial(eta);

  auto barrier_value = [&](const Vec& v, double mu_, double& out) {
    Eigen::LLT<Mat> llt(dp.upsilon(v));
    if (llt.info() != Eigen::Success) return false;
    const Vec dg = Mat(llt.matrixL()).diagonal();
    if (!(dg.minCoeff() > 0.0)) return false;
    out = dp.dual_value(v) + 2.0 * mu_ * dg.array().log().sum();
    return std::isfinite(out);
  };
  {
    double f0;
    if (!barrier_value(psi, mu, f0)) throw Error(Errc::invariant, "op7", "initial multiplier is not positive definite");
  }

  for (int outer = 0; outer < opt.max_outer; ++outer) {
    double dec = 0.0;
    int steps = 0;
    for (; steps < opt.max_newton; ++steps) {
      const Mat Y = dp.upsilon(psi);
      Eigen::LLT<Mat> llt(Y);
      if (llt.info() != Eigen::Success) throw Error(Errc::invariant, "op7", "multiplier left the positive definite cone");
      const Mat Yi = llt.solve(Mat::Identity(N, N));
      const Vec grad = dp.dual_gradient(psi) + mu * dp.adjoint(symmetrize(Yi));
      Mat negH = dp.curvature() + mu * dp.barrier_hessian(llt);
      negH = symmetrize(negH);
      Eigen::LLT<Mat> hl(negH);
      Vec dir;
      if (hl.info() == Eigen::Success) {
        dir = hl.solve(grad);
      } else {
        Mat r = negH;
        r.diagonal().array() += 1e-12 * std::max(1.0, negH.diagonal().maxCoeff());
        dir = Eigen::LDLT<Mat>(r).solve(grad);
      }
      dec = grad.dot(dir);
      res.grad_norm = grad.norm();
      double f0 = 0.0;
      barrier_value(psi, mu, f0);
      if (!(dec > 0.0) || 0.5 * dec <= opt.decrement_tol * (1.0 + std::abs(f0))) break;
      double a = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls, a *= 0.5) {
        const Vec cand = psi + a * dir;
        double f;
        if (!barrier_value(cand, mu, f)) continue;
        if (f >= f0 + 0.01 * a * dec) {
          psi = cand;
          moved = true;
          break;
        }
      }
      // Stop once the predicted gain is at rounding level.
      if (!moved || a * dec <= 1e-15 * (1.0 + std::abs(f0))) break;
    }
    const Mat Y = dp.upsilon(psi);
    Op7TraceRecord rec;
    rec.outer = outer;
    rec.newton = steps;
    rec.mu = mu;
    rec.Jd = dp.dual_value(psi);
    rec.lambda_min = Eigen::SelfAdjointEigenSolver<Mat>(Y, Eigen::EigenvaluesOnly).eigenvalues()(0);
    rec.decrement = dec;
    res.trace.push_back(rec);
    if (mu * N <= opt.tol * (1.0 + std::abs(rec.Jd))) {
      res.converged = true;
      break;
    }
    mu *= opt.mu_factor;
  }
  res.psi = psi;
  res.Upsilon = dp.upsilon(psi);
  res.x = dp.recover_x(psi);
  res.J = q.value(res.x);
  res.Jd = dp.dual_value(psi);
  res.mu = mu;
  res.lambda_min = res.trace.empty() ? 0.0 : res.trace.back().lambda_min;
  if (!res.converged) throw Error(Errc::not_converged, "op7", "barrier method did not reach the duality tolerance");
  return res;
}

}  // namespace passyn
