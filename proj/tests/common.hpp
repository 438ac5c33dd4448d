#pragma once

// Shared fixtures for the unit tests: example plants, random systems, and brute-force oracles
// built on Kronecker vectorization.

#include <random>
#include <string>

#include "passyn/passyn.hpp"

namespace passyn::testing {

inline PlantFile example(int which) {
  return parse_plant(std::string(PASSYN_DATA_DIR) + "/plants/example" + std::to_string(which) + ".json");
}

class Rng {
 public:
  explicit Rng(unsigned seed) : gen_(seed) {}

  double uniform(double a = -1.0, double b = 1.0) { return std::uniform_real_distribution<double>(a, b)(gen_); }
  int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(gen_); }

  Mat matrix(Eigen::Index r, Eigen::Index c) {
    Mat M(r, c);
    for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = std::normal_distribution<double>(0.0, 1.0)(gen_);
    return M;
  }

  // Hurwitz matrix with spectral abscissa at most -margin.
  Mat hurwitz(Eigen::Index n, double margin = 0.1) {
    Mat A = matrix(n, n);
    const double a = n ? spectral_abscissa(A) : 0.0;
    A.diagonal().array() -= a + margin + uniform(0.0, 1.0);
    return A;
  }

  // Schur-stable matrix with spectral radius rho.
  Mat schur(Eigen::Index n, double rho = 0.8) {
    Mat A = matrix(n, n);
    const double r = n ? spectral_radius(A) : 1.0;
    return A * (rho / std::max(r, 1e-12));
  }

  StateSpace system(int n, int m, int p, Domain dom) {
    const Mat A = dom == Domain::continuous ? hurwitz(n) : schur(n);
    return {A, matrix(n, m), matrix(p, n), matrix(p, m), dom};
  }

  // Random plant whose u -> y channel is passive with storage I: A + A^T < 0, C_y = B_u^T, D_uy >= 0.
  PartitionedPlant passive_plant(Eigen::Index n, Eigen::Index nu, Eigen::Index nw, Eigen::Index nz) {
    const Mat L = matrix(n, n);
    const Mat R = L * L.transpose() / static_cast<double>(n) + 0.1 * Mat::Identity(n, n);
    const Mat S = matrix(n, n);
    PartitionedPlant P;
    P.A = -R + 0.5 * (S - S.transpose());
    P.Bu = matrix(n, nu);
    P.Cy = P.Bu.transpose();
    const Mat Dl = matrix(nu, nu);
    P.Duy = 0.1 * Dl * Dl.transpose();
    P.Bw = matrix(n, nw);
    P.Cz = matrix(nz, n);
    P.Duz = matrix(nz, nu);
    P.Dwz = Mat::Zero(nz, nw);
    P.Dwy = Mat::Zero(nu, nw);
    return P;
  }

  std::mt19937& engine() { return gen_; }

 private:
  std::mt19937 gen_;
};

inline Mat kron(const Mat& A, const Mat& B) {
  Mat K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

inline Vec vec(const Mat& M) { return Eigen::Map<const Vec>(M.data(), M.size()); }
inline Mat unvec(const Vec& v, Eigen::Index r, Eigen::Index c) { return Eigen::Map<const Mat>(v.data(), r, c); }

// Lambda - A Lambda B = C  <=>  (I - B^T (x) A) vec(Lambda) = vec(C).
inline Mat oracle_sylvester_stein(const Mat& A, const Mat& B, const Mat& C) {
  const Mat K = Mat::Identity(A.rows() * B.rows(), A.rows() * B.rows()) - kron(B.transpose(), A);
  return unvec(K.fullPivLu().solve(vec(C)), A.rows(), B.rows());
}

inline Mat oracle_lyap_ct(const Mat& A, const Mat& Q) {
  const Eigen::Index n = A.rows();
  const Mat I = Mat::Identity(n, n);
  const Mat K = kron(I, A) + kron(A, I);
  return unvec(K.fullPivLu().solve(-vec(Q)), n, n);
}

// Newton-Kleinman on the CARE with every Lyapunov step solved by Kronecker vectorization.
inline Mat oracle_care(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, Mat K0) {
  const Mat Ri = R.inverse();
  Mat X;
  for (int it = 0; it < 100; ++it) {
    const Mat Ak = A - B * K0;
    const Mat Xn = oracle_lyap_ct(Ak.transpose(), Q + K0.transpose() * R * K0);
    K0 = Ri * B.transpose() * Xn;
    const bool done = it > 0 && (Xn - X).norm() <= 1e-14 * Xn.norm();
    X = Xn;
    if (done) break;
  }
  return X;
}

// Hewer iteration on the DARE with Kronecker Stein solves.
inline Mat oracle_dare(const Mat& Phi, const Mat& G, const Mat& Q, const Mat& R, Mat K0) {
  Mat X;
  for (int it = 0; it < 200; ++it) {
    const Mat Ak = Phi - G * K0;
    const Mat Xn = oracle_sylvester_stein(Ak.transpose(), Ak, Q + K0.transpose() * R * K0);
    K0 = (R + G.transpose() * Xn * G).ldlt().solve(G.transpose() * Xn * Phi);
    const bool done = it > 0 && (Xn - X).norm() <= 1e-14 * Xn.norm();
    X = Xn;
    if (done) break;
  }
  return X;
}

inline double rel_err(const Mat& A, const Mat& B) { return (A - B).norm() / std::max(1.0, B.norm()); }

}  // namespace passyn::testing
