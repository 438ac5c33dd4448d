#pragma once

// H2 cost of the incremental closed loop T = Vfz - Vu1z Q1 Vfy1 as an exact
// quadratic J(x) = J0 + g'x + x'Hx/2 in the FIR coefficients of Q1.
//
// x layout: coefficient k = 0..n in order, each nu x nu block row-major, so
// x[k*nu*nu + a*nu + b] = Q1(k)(a, b).

#include "passyn/youla.hpp"

namespace passyn {

inline Vec x_from_markov(const MarkovSequence& seq) {
  const Eigen::Index nu = seq.coeffs.at(0).rows();
  Vec x(static_cast<Eigen::Index>(seq.coeffs.size()) * nu * nu);
  Eigen::Index i = 0;
  for (const Mat& Q : seq.coeffs)
    for (Eigen::Index a = 0; a < nu; ++a)
      for (Eigen::Index b = 0; b < nu; ++b) x(i++) = Q(a, b);
  return x;
}

inline MarkovSequence markov_from_x(const Vec& x, Eigen::Index nu) {
  const Eigen::Index blk = nu * nu;
  if (blk == 0 || x.size() % blk != 0 || x.size() == 0)
    throw Error(Errc::validation, "markov_from_x", "coefficient vector length is not a multiple of nu^2");
  MarkovSequence seq;
  for (Eigen::Index k = 0; k < x.size() / blk; ++k) {
    Mat Q(nu, nu);
    for (Eigen::Index a = 0; a < nu; ++a)
      for (Eigen::Index b = 0; b < nu; ++b) Q(a, b) = x(k * blk + a * nu + b);
    seq.coeffs.push_back(Q);
  }
  return seq;
}

// States x1 = [Vfz; Vu1z], x2 = [Vfy1; shift register]. Only the coupling
// Phi12 = G R(x) and Pi2 = Dz R(x) depend on x, through
// R(x) = [Q1(0) C_fy1, Q1(1), ..., Q1(n)].
struct PartitionedClosedLoop {
  Mat Phi11, Phi22, Gamma1, Gamma2, Pi1, Delta;
  Mat G, Dz;
  Mat Rbasis;  // column i is vec(dR/dx_i), column-major nu x n2
  Eigen::Index nu = 0;
  int n = 0;

  Eigen::Index dim() const { return Rbasis.cols(); }
  Eigen::Index n1() const { return Phi11.rows(); }
  Eigen::Index n2() const { return Phi22.rows(); }

  Mat R(const Vec& x) const {
    if (x.size() != dim()) throw Error(Errc::validation, "h2obj", "coefficient vector has the wrong length");
    const Vec r = Rbasis * x;
    return Eigen::Map<const Mat>(r.data(), nu, n2());
  }
  Mat Phi12(const Vec& x) const { return G * R(x); }
  Mat Pi2(const Vec& x) const { return Dz * R(x); }

  StateSpace system(const Vec& x) const {
    const Eigen::Index a = n1(), b = n2();
    StateSpace s;
    s.domain = Domain::discrete;
    s.A = Mat::Zero(a + b, a + b);
    s.A.topLeftCorner(a, a) = Phi11;
    s.A.topRightCorner(a, b) = Phi12(x);
    s.A.bottomRightCorner(b, b) = Phi22;
    s.B = vstack(Gamma1, Gamma2);
    s.C = hstack(Pi1, Pi2(x));
    s.D = Delta;
    return s;
  }
};

inline PartitionedClosedLoop assemble_partitioned(const IncrementalPlant& V, int n) {
  if (n < 0) throw Error(Errc::validation, "assemble_partitioned", "FIR order must be non-negative");
  const StateSpace &Vfz = V.Vfz, &Vuz = V.Vu1z, &Vfy = V.Vfy1;
  if (Vfy.D.norm() != 0.0)
    throw Error(Errc::validation, "assemble_partitioned", "f -> y1 channel must be strictly proper");
  const Eigen::Index nu = Vuz.inputs(), ny = Vfy.outputs();
  if (ny != nu) throw Error(Errc::validation, "assemble_partitioned", "incremental Youla parameter must be square");
  const Eigen::Index nw = Vfz.inputs();
  const Eigen::Index nv = Vfy.states(), ns = static_cast<Eigen::Index>(n) * nu;
  const Eigen::Index na = Vfz.states(), nb = Vuz.states();

  PartitionedClosedLoop p;
  p.nu = nu;
  p.n = n;
  p.Phi11 = blkdiag(Vfz.A, Vuz.A);
  p.Gamma1 = vstack(Vfz.B, Mat::Zero(nb, nw));
  p.Pi1 = hstack(Vfz.C, Vuz.C);
  p.Delta = Vfz.D;
  p.G = vstack(Mat::Zero(na, nu), -Vuz.B);
  p.Dz = -Vuz.D;

  const Eigen::Index n2 = nv + ns;
  p.Phi22 = Mat::Zero(n2, n2);
  p.Phi22.topLeftCorner(nv, nv) = Vfy.A;
  if (n > 0) p.Phi22.block(nv, 0, nu, nv) = Vfy.C;
  for (int k = 1; k < n; ++k) p.Phi22.block(nv + k * nu, nv + (k - 1) * nu, nu, nu) = Mat::Identity(nu, nu);
  p.Gamma2 = vstack(Vfy.B, Mat::Zero(ns, nw));

  const Eigen::Index d = static_cast<Eigen::Index>(n + 1) * nu * nu;
  p.Rbasis = Mat::Zero(nu * n2, d);
  for (int k = 0; k <= n; ++k)
    for (Eigen::Index a = 0; a < nu; ++a)
      for (Eigen::Index b = 0; b < nu; ++b) {
        const Eigen::Index i = k * nu * nu + a * nu + b;
        Mat Ri = Mat::Zero(nu, n2);
        if (k == 0)
          Ri.block(a, 0, 1, nv) = Vfy.C.row(b);
        else
          Ri(a, nv + (k - 1) * nu + b) = 1.0;
        p.Rbasis.col(i) = Eigen::Map<const Vec>(Ri.data(), Ri.size());
      }
  return p;
}

struct QuadraticObjective {
  double J0 = 0.0;
  Vec g;
  Mat H;
  double min_eig = 0.0;  // of H before any ridge
  bool ridge = false;    // H was regularized for the dual solve; minimizer may be non-unique
  Mat H_solve;           // H, or H + ridge

  double value(const Vec& x) const { return J0 + g.dot(x) + 0.5 * x.dot(H * x); }
};

namespace detail {

inline void finish_quadratic(QuadraticObjective& q) {
  q.H = symmetrize(q.H);
  const Eigen::Index d = q.H.rows();
  q.H_solve = q.H;
  if (d == 0) return;
  Eigen::SelfAdjointEigenSolver<Mat> es(q.H, Eigen::EigenvaluesOnly);
  q.min_eig = es.eigenvalues()(0);
  const double hn = q.H.norm();
  if (q.min_eig < -1e-8 * hn)
    throw Error(Errc::invariant, "h2obj", "quadratic objective is not convex (H has a negative eigenvalue)");
  if (q.min_eig < 1e-10 * hn) {
    q.ridge = true;
    q.H_solve.diagonal().array() += 1e-10 * hn;
  }
}

struct Gramian22 {
  Mat X11, Z;
};

inline Gramian22 fixed_gramians(const PartitionedClosedLoop& p) {
  if (spectral_radius(p.Phi11) >= 1.0 || (p.n2() > 0 && spectral_radius(p.Phi22) >= 1.0))
    throw Error(Errc::unstable, "h2obj", "partitioned closed loop is not stable");
  Gramian22 gm;
  gm.X11 = SteinSolver(p.Phi11.transpose()).solve(p.Pi1.transpose() * p.Pi1);
  gm.Z = SteinSolver(p.Phi22).solve(p.Gamma2 * p.Gamma2.transpose());
  return gm;
}

}  // namespace detail

// Observability-form evaluation of J at one point; X11 and Z do not depend on x.
class ObjectiveEvaluator {
 public:
  ObjectiveEvaluator(const PartitionedClosedLoop& p, double tau) : p_(p), tau_(tau) {
    if (!(tau > 0.0)) throw Error(Errc::validation, "h2obj", "tau must be positive");
    gm_ = detail::fixed_gramians(p);
    if (p.n1() > 0 && p.n2() > 0) lam_.init(p.Phi11.transpose(), p.Phi22);
    base_ = (p.Gamma1.transpose() * gm_.X11 * p.Gamma1).trace() + p.Delta.squaredNorm();
  }

  const detail::Gramian22& gramians() const { return gm_; }

  double operator()(const Vec& x) const {
    const Mat P12 = p_.Phi12(x), P2 = p_.Pi2(x);
    double v = base_;
    if (p_.n2() > 0) {
      Mat X12 = Mat::Zero(p_.n1(), p_.n2());
      if (p_.n1() > 0) X12 = lam_.solve(Mat(p_.Phi11.transpose() * gm_.X11 * P12 + p_.Pi1.transpose() * P2));
      const Mat cross = P12.transpose() * X12 * p_.Phi22;
      const Mat Y = P12.transpose() * gm_.X11 * P12 + cross + cross.transpose() + P2.transpose() * P2;
      v += 2.0 * (p_.Gamma1.transpose() * X12 * p_.Gamma2).trace() + (gm_.Z * Y).trace();
    }
    return v / tau_;
  }

 private:
  const PartitionedClosedLoop& p_;
  double tau_;
  detail::Gramian22 gm_;
  SylvesterSteinSolver lam_;
  double base_ = 0.0;
};

// (J0, g, H) by exact polynomial probing of the scalar objective.
inline QuadraticObjective objective_quadratic_probe(const PartitionedClosedLoop& p, double tau) {
  const ObjectiveEvaluator J(p, tau);
  const Eigen::Index d = p.dim();
  QuadraticObjective q;
  q.J0 = J(Vec::Zero(d));
  q.g = Vec::Zero(d);
  q.H = Mat::Zero(d, d);
  Vec jp(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    jp(i) = J(e);
    const double jm = J(-e);
    q.g(i) = 0.5 * (jp(i) - jm);
    q.H(i, i) = jp(i) + jm - 2.0 * q.J0;
  }
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      Vec e = Vec::Zero(d);
      e(i) = 1.0;
      e(j) = 1.0;
      q.H(i, j) = q.H(j, i) = J(e) - jp(i) - jp(j) + q.J0;
    }
  detail::finish_quadratic(q);
  return q;
}

// Controllability-form assembly: P22 = Z and P12 = P12^0 + sum_i x_i M_i, with
// M_i - Phi11 M_i Phi22' = G R_i Z Phi22'.
inline QuadraticObjective objective_quadratic(const PartitionedClosedLoop& p, double tau) {
  if (!(tau > 0.0)) throw Error(Errc::validation, "h2obj", "tau must be positive");
  const detail::Gramian22 gm = detail::fixed_gramians(p);
  const Mat& X = gm.X11;
  const Mat& Z = gm.Z;
  const Eigen::Index d = p.dim(), n1 = p.n1(), n2 = p.n2(), nu = p.nu;
  QuadraticObjective q;
  q.J0 = ((p.Gamma1.transpose() * X * p.Gamma1).trace() + p.Delta.squaredNorm()) / tau;
  q.g = Vec::Zero(d);
  q.H = Mat::Zero(d, d);
  if (d == 0 || n2 == 0) {
    detail::finish_quadratic(q);
    return q;
  }

  // quadratic term without P12: tr(Ghat R_i Z R_j'), Ghat = G'XG + Dz'Dz
  const Mat Ghat = p.G.transpose() * X * p.G + p.Dz.transpose() * p.Dz;
  Mat GRZ(nu * n2, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Map<const Mat> Ri(p.Rbasis.col(i).data(), nu, n2);
    const Mat t = Ghat * Ri * Z;
    GRZ.col(i) = Eigen::Map<const Vec>(t.data(), t.size());
  }
  q.H = 2.0 * p.Rbasis.transpose() * GRZ;

  if (n1 > 0) {
    const SylvesterSteinSolver L(p.Phi11, p.Phi22.transpose());
    const Mat P0 = L.solve(Mat(p.Gamma1 * p.Gamma2.transpose()));
    // linear term: <R_i, G'X Phi11 P0 + Dz' Pi1 P0>
    const Mat Gl = (p.G.transpose() * X * p.Phi11 + p.Dz.transpose() * p.Pi1) * P0;
    q.g = 2.0 * p.Rbasis.transpose() * Eigen::Map<const Vec>(Gl.data(), Gl.size());

    // cross term: <M_i, Yhat R_j>, Yhat = Phi11'XG + Pi1'Dz
    const Mat Yhat = p.Phi11.transpose() * X * p.G + p.Pi1.transpose() * p.Dz;
    const Mat ZP = Z * p.Phi22.transpose();
    Mat Mv(n1 * n2, d), Wv(n1 * n2, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const Eigen::Map<const Mat> Ri(p.Rbasis.col(i).data(), nu, n2);
      const Mat Mi = L.solve(Mat(p.G * (Ri * ZP)));
      Mv.col(i) = Eigen::Map<const Vec>(Mi.data(), Mi.size());
      const Mat Wi = Yhat * Ri;
      Wv.col(i) = Eigen::Map<const Vec>(Wi.data(), Wi.size());
    }
    const Mat T = Mv.transpose() * Wv;
    q.H += 2.0 * (T + T.transpose());
  }
  q.g /= tau;
  q.H /= tau;
  detail::finish_quadratic(q);
  return q;
}

// (1/tau) ||Vfz - Vu1z Q1 Vfy1||_2^2 through the generic LFT route.
inline double direct_J(const IncrementalPlant& V, const StateSpace& Q1, double tau) {
  if (!(tau > 0.0)) throw Error(Errc::validation, "direct_J", "tau must be positive");
  const StateSpace T = parallel(V.Vfz, series(series(V.Vfy1, Q1), V.Vu1z), -1.0);
  return h2_norm_dt_squared(T) / tau;
}

inline double direct_J(const IncrementalPlant& V, const MarkovSequence& seq, double tau) {
  return direct_J(V, fir_realization(seq), tau);
}

}  // namespace passyn
