#include <gtest/gtest.h>

#include "common.hpp"

using namespace passyn;
using namespace passyn::testing;

namespace {

struct ObjectiveSetup {
  double tau = 0.0;
  IncrementalPlant V;
};

ObjectiveSetup objective_setup(int which) {
  const PlantFile f = example(which);
  const double eps = f.epsilon.value();
  const SuboptimalDesign des = certainty_equivalent_design(f.plant, eps, f.noise);
  ObjectiveSetup s;
  s.tau = select_tau(f.plant, des.K0).tau;
  s.V = build_incremental_plant(discretize_plant(f.plant, s.tau), map_controller_c2d(des.K0, s.tau));
  return s;
}

}  // namespace

TEST(H2obj, CoefficientVectorRoundTrip) {
  Rng rng(61);
  MarkovSequence seq;
  for (int k = 0; k < 3; ++k) seq.coeffs.push_back(rng.matrix(2, 2));
  const Vec x = x_from_markov(seq);
  ASSERT_EQ(x.size(), 12);
  EXPECT_EQ(x(1), seq.coeffs[0](0, 1));  // row-major within a block
  const MarkovSequence back = markov_from_x(x, 2);
  ASSERT_EQ(back.coeffs.size(), 3u);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(back.coeffs[k], seq.coeffs[k]);
  EXPECT_THROW(markov_from_x(Vec::Zero(5), 2), Error);
}

TEST(H2obj, AssembledQuadraticMatchesProbing) {
  for (int which : {1, 2}) {
    const ObjectiveSetup s = objective_setup(which);
    for (int n : {0, 1, 3}) {
      const PartitionedClosedLoop p = assemble_partitioned(s.V, n);
      const QuadraticObjective fast = objective_quadratic(p, s.tau);
      const QuadraticObjective probe = objective_quadratic_probe(p, s.tau);
      EXPECT_NEAR(fast.J0, probe.J0, 1e-10 * fast.J0) << which << "/" << n;
      EXPECT_LE((fast.g - probe.g).norm(), 1e-7 * (1.0 + fast.g.norm())) << which << "/" << n;
      EXPECT_LE((fast.H - probe.H).norm(), 1e-7 * (1.0 + fast.H.norm())) << which << "/" << n;
    }
  }
}

TEST(H2obj, QuadraticAgreesWithDirectEvaluation) {
  Rng rng(62);
  for (int which : {1, 2}) {
    const ObjectiveSetup s = objective_setup(which);
    for (int n : {0, 2, 6}) {
      const PartitionedClosedLoop p = assemble_partitioned(s.V, n);
      const QuadraticObjective q = objective_quadratic(p, s.tau);
      const ObjectiveEvaluator J(p, s.tau);
      for (int trial = 0; trial < 3; ++trial) {
        const Vec x = 0.1 * rng.matrix(p.dim(), 1);
        const double direct = direct_J(s.V, markov_from_x(x, p.nu), s.tau);
        EXPECT_NEAR(q.value(x), direct, 1e-8 * direct) << which << "/" << n;
        EXPECT_NEAR(J(x), direct, 1e-8 * direct) << which << "/" << n;
      }
    }
  }
}

TEST(H2obj, PartitionedSystemMatchesLftRoute) {
  const ObjectiveSetup s = objective_setup(1);
  const PartitionedClosedLoop p = assemble_partitioned(s.V, 4);
  Rng rng(63);
  const Vec x = 0.2 * rng.matrix(p.dim(), 1);
  const StateSpace Q1 = fir_realization(markov_from_x(x, p.nu));
  const StateSpace T = parallel(s.V.Vfz, series(series(s.V.Vfy1, Q1), s.V.Vu1z), -1.0);
  const FrequencyEvaluator a(p.system(x)), b(T);
  for (double W : {0.0, 0.5, 2.0}) EXPECT_LT((a.at(W) - b.at(W)).norm(), 1e-9 * (1.0 + b.at(W).norm()));
}

TEST(H2obj, HessianIsPositiveSemidefinite) {
  for (int which : {1, 2}) {
    const ObjectiveSetup s = objective_setup(which);
    const QuadraticObjective q = objective_quadratic(assemble_partitioned(s.V, 8), s.tau);
    EXPECT_GE(q.min_eig, -1e-8 * q.H.norm());
    EXPECT_LT((q.H - q.H.transpose()).norm(), 1e-14 * q.H.norm());
  }
}

TEST(H2obj, ZeroOrderCostIsWarmStartCost) {
  const PlantFile f = example(1);
  const SuboptimalDesign des = certainty_equivalent_design(f.plant, 0.1, f.noise);
  const ObjectiveSetup s = objective_setup(1);
  const QuadraticObjective q = objective_quadratic(assemble_partitioned(s.V, 0), s.tau);
  EXPECT_NEAR(q.J0, des.J0_star, 1e-8 * des.J0_star);
}
