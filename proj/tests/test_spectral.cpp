#include <gtest/gtest.h>

#include "common.hpp"

using namespace passyn;
using namespace passyn::testing;

namespace {

void expect_factor_identities(const PartitionedPlant& P, double eps, double tau) {
  const DiscretePlant d = discretize_plant(P, tau);
  const SpectralFactorS S = factor_S(d, eps);
  const SpectralFactorF F = factor_F(S);
  const FactorizationResiduals r = factorization_residuals(d, S, F, eps, uniform_disc_grid(512));
  EXPECT_LE(r.S, 1e-7);
  EXPECT_LE(r.F, 1e-7);
  // S, S^{-1}, F, F^{-1} are all stable.
  const Mat DSi = inv(S.S.D);
  EXPECT_TRUE(S.S.is_stable());
  EXPECT_LT(spectral_radius(S.S.A - S.S.B * DSi * S.S.C), 1.0);
  EXPECT_TRUE(F.F.is_stable());
  EXPECT_LT(spectral_radius(F.F.A - F.F.B * inv(F.F.D) * F.F.C), 1.0);
}

}  // namespace

TEST(Spectral, ExampleOneFactors) { expect_factor_identities(example(1).plant, 0.1, 0.4559); }

TEST(Spectral, ExampleTwoFactors) { expect_factor_identities(example(2).plant, 0.5, 0.17); }

TEST(Spectral, RandomPassivePlants) {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = rng.integer(1, 6), nu = rng.integer(1, 3);
    expect_factor_identities(rng.passive_plant(n, nu, 1, 2), rng.uniform(0.05, 1.0), rng.uniform(0.1, 2.0));
  }
}

TEST(Spectral, NonPassivePlantIsRejected) {
  PartitionedPlant P = example(1).plant;
  P.Cy *= -1.0;  // flips the sign of u -> y
  const DiscretePlant d = discretize_plant(P, 0.5);
  try {
    factor_S(d, 0.1);
    FAIL() << "expected the factorization to fail";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::validation);
  }
}

TEST(Spectral, RequiresPositiveEpsilon) {
  const DiscretePlant d = discretize_plant(example(1).plant, 0.5);
  EXPECT_THROW(factor_S(d, 0.0), Error);
}
