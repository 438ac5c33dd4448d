#pragma once

#include <vector>

#include "passyn/spectral.hpp"

namespace passyn {

// Markov coefficients Q1(0..n) of an FIR incremental Youla parameter.
struct MarkovSequence {
  std::vector<Mat> coeffs;

  int order() const { return static_cast<int>(coeffs.size()) - 1; }
};

// Block shift register: s_1' = u, s_k' = s_{k-1}; y = Q(0) u + sum_k Q(k) s_k.
inline StateSpace fir_realization(const MarkovSequence& seq) {
  if (seq.coeffs.empty()) throw Error(Errc::validation, "fir_realization", "empty coefficient sequence");
  const Eigen::Index p = seq.coeffs[0].rows(), m = seq.coeffs[0].cols();
  const int n = seq.order();
  StateSpace s;
  s.domain = Domain::discrete;
  s.A = Mat::Zero(n * m, n * m);
  for (int k = 1; k < n; ++k) s.A.block(k * m, (k - 1) * m, m, m) = Mat::Identity(m, m);
  s.B = Mat::Zero(n * m, m);
  if (n > 0) s.B.topRows(m) = Mat::Identity(m, m);
  s.C = Mat::Zero(p, n * m);
  for (int k = 1; k <= n; ++k) s.C.block(0, (k - 1) * m, p, m) = seq.coeffs[k];
  s.D = seq.coeffs[0];
  return s;
}

inline StateSpace cleanup(const StateSpace& s, double tol = 1e-10) {
  if (s.states() == 0 || !s.is_stable()) return s;
  return minreal_balanced(s, tol);
}

// Q = K (I + P K)^{-1}; also exposes N = (I + P K)^{-1} on the same states when asked.
struct YoulaLoop {
  StateSpace Q;  // e -> u'
  StateSpace N;  // e -> r
};

// Loop r = e - P u', u' = K r, states [x_P; x_K].
inline YoulaLoop youla_loop(const StateSpace& K, const StateSpace& P) {
  if (K.domain != P.domain) throw Error(Errc::validation, "q_from_k", "domain mismatch");
  const Eigen::Index nu = P.inputs(), ny = P.outputs(), np = P.states(), nk = K.states();
  if (K.inputs() != ny || K.outputs() != nu) throw Error(Errc::validation, "q_from_k", "controller shape");
  Mat Mi;
  try {
    Mi = inv(Mat::Identity(ny, ny) + P.D * K.D);
  } catch (const Error&) {
    throw Error(Errc::ill_posed, "q_from_k", "I + D_P D_K is singular");
  }
  // r = Mi (e - C_P x_P - D_P C_K x_K)
  const Mat Rx = hstack(-Mi * P.C, -Mi * P.D * K.C);
  const Mat Re = Mi;
  Mat Ux = K.D * Rx;
  Ux.rightCols(nk) += K.C;
  const Mat Ue = K.D * Re;
  YoulaLoop out;
  Mat A(np + nk, np + nk);
  A.topRows(np) = P.B * Ux;
  A.topLeftCorner(np, np) += P.A;
  A.bottomRows(nk) = K.B * Rx;
  A.bottomRightCorner(nk, nk) += K.A;
  const Mat B = vstack(P.B * Ue, K.B * Re);
  out.Q = {A, B, Ux, Ue, P.domain};
  out.N = {A, B, Rx, Re, P.domain};
  return out;
}

inline StateSpace q_from_k(const StateSpace& K, const StateSpace& Puy, bool reduce = true) {
  const StateSpace Q = youla_loop(K, Puy).Q;
  return reduce ? cleanup(Q) : Q;
}

// K = Q (I - P Q)^{-1}: loop e = r + P u, u = Q e.
inline StateSpace k_from_q(const StateSpace& Q, const StateSpace& P, bool reduce = true) {
  if (Q.domain != P.domain) throw Error(Errc::validation, "k_from_q", "domain mismatch");
  const Eigen::Index nu = P.inputs(), ny = P.outputs(), np = P.states(), nq = Q.states();
  Mat M;
  try {
    M = inv(Mat::Identity(nu, nu) - Q.D * P.D);
  } catch (const Error&) {
    throw Error(Errc::ill_posed, "k_from_q", "I - D_Q D_P is singular");
  }
  // u = M (C_Q x_Q + D_Q C_P x_P + D_Q r); e = r + C_P x_P + D_P u
  const Mat Ux = hstack(M * Q.D * P.C, M * Q.C);
  const Mat Ur = M * Q.D;
  Mat Ex = P.D * Ux;
  Ex.leftCols(np) += P.C;
  const Mat Er = Mat::Identity(ny, ny) + P.D * Ur;
  Mat A(np + nq, np + nq);
  A.topRows(np) = P.B * Ux;
  A.topLeftCorner(np, np) += P.A;
  A.bottomRows(nq) = Q.B * Ex;
  A.bottomRightCorner(nq, nq) += Q.A;
  StateSpace K{A, vstack(P.B * Ur, Q.B * Er), Ux, Ur, P.domain};
  return reduce ? cleanup(K) : K;
}

// U = [[Q, Q], [0, F]].
inline StateSpace build_U(const StateSpace& Q, const StateSpace& F) {
  if (Q.domain != F.domain) throw Error(Errc::validation, "build_U", "domain mismatch");
  const Eigen::Index nu = Q.outputs(), nq = Q.states(), nf = F.states();
  StateSpace U;
  U.domain = Q.domain;
  U.A = blkdiag(Q.A, F.A);
  U.B = Mat::Zero(nq + nf, 2 * nu);
  U.B.topLeftCorner(nq, nu) = Q.B;
  U.B.topRightCorner(nq, nu) = Q.B;
  U.B.bottomRightCorner(nf, nu) = F.B;
  U.C = Mat::Zero(2 * nu, nq + nf);
  U.C.topLeftCorner(nu, nq) = Q.C;
  U.C.bottomRightCorner(nu, nf) = F.C;
  U.D = Mat::Zero(2 * nu, 2 * nu);
  U.D.topLeftCorner(nu, nu) = Q.D;
  U.D.topRightCorner(nu, nu) = Q.D;
  U.D.bottomRightCorner(nu, nu) = F.D;
  return U;
}

// Plant seen by the incremental Youla parameter Q1 around the warm start K0.
struct IncrementalPlant {
  StateSpace K0;     // discrete warm-start controller
  StateSpace Q0, N0; // share the closed-loop state (plant + K0)
  StateSpace Vfz, Vu1z, Vfy1, Vu1y1;
};

inline IncrementalPlant build_incremental_plant(const DiscretePlant& d, const StateSpace& K0, bool reduce = true) {
  if (K0.domain != Domain::discrete) throw Error(Errc::validation, "incremental_plant", "K0 must be discrete");
  IncrementalPlant v;
  v.K0 = K0;
  const YoulaLoop loop = youla_loop(K0, d.channel_uy());
  v.Q0 = loop.Q;
  v.N0 = loop.N;
  if (!v.N0.is_stable()) throw Error(Errc::unstable, "incremental_plant", "warm start does not stabilize the plant");
  const FChannel f = f_channel(d);
  const StateSpace Puz = d.channel_uz();
  v.Vfz = parallel(f.fz, series(series(f.fy, v.Q0), Puz), -1.0);
  v.Vu1z = Puz;
  v.Vfy1 = series(f.fy, v.N0);
  v.Vu1y1 = series(d.channel_uy(), v.N0);
  if (reduce) {
    v.Vfz = cleanup(v.Vfz);
    v.Vfy1 = cleanup(v.Vfy1);
    v.Vu1y1 = cleanup(v.Vu1y1);
  }
  for (const StateSpace* s : {&v.Vfz, &v.Vu1z, &v.Vfy1, &v.Vu1y1})
    if (!s->is_stable()) throw Error(Errc::unstable, "incremental_plant", "incremental plant block is unstable");
  return v;
}

// Q = (K0 + Q1) N0.
inline StateSpace total_q(const StateSpace& K0, const StateSpace& N0, const StateSpace& Q1, bool reduce = true) {
  const StateSpace Q = series(N0, parallel(K0, Q1));
  return reduce ? cleanup(Q) : Q;
}

}  // namespace passyn
