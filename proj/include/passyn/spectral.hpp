#pragma once

// Spectral factors of the discrete passivity data:
//   S^H S = P_uy + P_uy^H + eps I   (S, S^{-1} stable)
//   F + F^H = (S^H S)^{-1}           (F, F^{-1} stable)

#include "passyn/bilinear.hpp"

namespace passyn {

struct SpectralFactorS {
  StateSpace S;   // (Phi, Gamma_u, Pi_S, Delta_S)
  Mat SigmaP;     // storage certificate
};

struct SpectralFactorF {
  StateSpace F;
  Mat SigmaF;
};

inline SpectralFactorS factor_S(const DiscretePlant& d, double eps) {
  if (!(eps > 0.0)) throw Error(Errc::validation, "factor_S", "epsilon must be positive");
  const Eigen::Index n = d.n(), nu = d.nu();
  if (d.Py.rows() != nu) throw Error(Errc::validation, "factor_S", "u -> y channel is not square");
  const Mat R0 = d.Duy + d.Duy.transpose() + eps * Mat::Identity(nu, nu);
  Mat X;
  try {
    X = solve_dare(d.Phi, d.Gu, Mat::Zero(n, n), R0, d.Py.transpose());
  } catch (const Error& e) {
    throw Error(Errc::validation, "factor_S",
                std::string("no stabilizing factorization; the plant is not passive at this tolerance (") + e.what() + ")");
  }
  SpectralFactorS out;
  out.SigmaP = -X;
  const Mat Rb = symmetrize(R0 - d.Gu.transpose() * out.SigmaP * d.Gu);
  const Mat c = d.Phi.transpose() * out.SigmaP * d.Gu - d.Py.transpose();
  Eigen::LLT<Mat> llt(Rb);
  if (llt.info() != Eigen::Success) throw Error(Errc::validation, "factor_S", "factorization block is not positive definite");
  const Mat DS = llt.matrixU();
  const Mat PiS = -DS.transpose().triangularView<Eigen::Lower>().solve(c.transpose());
  out.S = {d.Phi, d.Gu, PiS, DS, Domain::discrete};
  const Mat inner = d.Phi - d.Gu * DS.triangularView<Eigen::Upper>().solve(PiS);
  if (spectral_radius(inner) >= 1.0) throw Error(Errc::invariant, "factor_S", "inverse factor is not stable");
  return out;
}

inline SpectralFactorF factor_F(const SpectralFactorS& s) {
  const StateSpace& S = s.S;
  const Eigen::Index nu = S.D.rows();
  const Mat DSi = inv(S.D);
  const Mat PhiF = S.A - S.B * DSi * S.C;
  Mat SigF;
  try {
    SigF = SteinSolver(PhiF).solve(S.B * DSi * DSi.transpose() * S.B.transpose());
  } catch (const Error& e) {
    throw Error(Errc::invariant, "factor_F", std::string("Stein solve failed: ") + e.what());
  }
  SpectralFactorF out;
  out.SigmaF = SigF;
  const Mat GF = (S.B * DSi - PhiF * SigF * S.C.transpose()) * DSi.transpose();
  const Mat PiF = -DSi * S.C;
  const Mat DF = 0.5 * DSi * (Mat::Identity(nu, nu) + S.C * SigF * S.C.transpose()) * DSi.transpose();
  out.F = {PhiF, GF, PiF, DF, Domain::discrete};
  return out;
}

struct FactorizationResiduals {
  double S = 0.0;  // max over the grid of ||S^H S - M|| / ||M||, M = P_uy + P_uy^H + eps I
  double F = 0.0;  // max over the grid of ||F + F^H - M^{-1}|| / ||M^{-1}||
};

inline FactorizationResiduals factorization_residuals(const DiscretePlant& d, const SpectralFactorS& s,
                                                      const SpectralFactorF& f, double eps, const FrequencyGrid& grid) {
  const FrequencyEvaluator ep(d.channel_uy()), es(s.S), ef(f.F);
  const Eigen::Index nu = d.nu();
  FactorizationResiduals r;
  for (double w : grid.points) {
    const CMat P = ep.at(w);
    const CMat M = P + P.adjoint() + eps * CMat::Identity(nu, nu);
    const CMat Mi = M.inverse();
    const CMat S = es.at(w), F = ef.at(w);
    r.S = std::max(r.S, (S.adjoint() * S - M).norm() / M.norm());
    r.F = std::max(r.F, (F + F.adjoint() - Mi).norm() / Mi.norm());
  }
  return r;
}

}  // namespace passyn
