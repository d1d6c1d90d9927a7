#include <gtest/gtest.h>

#include <random>

#include "nullctl/harness.hpp"
#include "nullctl/spectral.hpp"

using namespace nullctl;

TEST(ContourProjection, DiagonalMatrix) {
  CMat e = CMat::Zero(3, 3);
  e(0, 0) = 0.1;
  e(1, 1) = 2.0;
  e(2, 2) = -0.05;
  const CMat P = contour_projection(e, cd(0), 0.5);
  CMat expect = CMat::Zero(3, 3);
  expect(0, 0) = 1.0;
  expect(2, 2) = 1.0;
  EXPECT_LT((P - expect).norm(), 1e-12);
}

TEST(ContourProjection, NonNormalMatrixIsIdempotentAndCommutes) {
  CMat e(2, 2);
  e << 0.1, 5.0, 0.0, 1.5;
  const CMat P = contour_projection(e, cd(0), 0.5);
  EXPECT_LT((P * P - P).norm(), 1e-11);
  EXPECT_LT((P * e - e * P).norm(), 1e-11);
  EXPECT_NEAR(P.trace().real(), 1.0, 1e-12);
}

class BranchIdentities : public ::testing::TestWithParam<const char*> {};

// Property: at random |z| <= 1/n0 the projections satisfy the algebraic identities.
TEST_P(BranchIdentities, RandomPointsInSeparationDisc) {
  const Scenario s = builtin_scenario(GetParam());
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys, s.n0_override));
  const GroupContours groups = group_contours(s.sys);
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 25; ++k) {
    const double rad = (0.05 + 0.95 * u(rng)) / std::max(1, c.n0 + 1);
    const cd z = std::polar(rad, kTwoPi * u(rng));
    const ProjectionPair pp = projection_split(s.sys, z, c.R);
    const CMat E = eval_symbol(s.sys, z);
    const double scale = std::max(1.0, pp.Ph.norm());
    EXPECT_LT((pp.Ph * pp.Ph - pp.Ph).norm() / scale, 1e-9);
    EXPECT_LT((pp.Ph * E - E * pp.Ph).norm() / (scale * E.norm()), 1e-9);
    EXPECT_NEAR(pp.Ph.trace().real(), s.sys.d1, 1e-8);
    const auto br = hyperbolic_branches(s.sys, z, pp.Ph, groups);
    CMat sum = CMat::Zero(s.sys.d(), s.sys.d());
    for (const auto& b : br) {
      sum += b.P;
      EXPECT_LT((E * b.P - b.mu * z * b.P - z * z * b.R).norm() / scale, 1e-9);
    }
    EXPECT_LT((sum - pp.Ph).norm() / scale, 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(Builtins, BranchIdentities,
                         ::testing::Values("nscl", "moving-wave(1,1)", "nscl(1,1,1,1.4,0.1)"));

TEST(LimitValues, ProjectionAndGraphMapAtZero) {
  for (const char* name : {"nscl", "moving-wave(1,1)", "heat-memory", "damped-wave(1)"}) {
    const Scenario s = builtin_scenario(name);
    const BranchConstants c = separation_radius(s.sys, s.n0_override);
    const ProjectionPair pp = projection_split(s.sys, cd(0), c.R);
    CMat expect = CMat::Zero(s.sys.d(), s.sys.d());
    expect.topLeftCorner(s.sys.d1, s.sys.d1).setIdentity();
    EXPECT_LT((pp.Ph - expect).norm(), 1e-12) << name;
    EXPECT_LT(graph_map(s.sys, pp.Pp).norm(), 1e-12) << name;
  }
}

// G(z) parametrises Im Pp^*: (G chi; chi) is fixed by Pp^*.
TEST(GraphMap, ParametrisesParabolicAdjointRange) {
  const Scenario s = builtin_scenario("nscl");
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  const BranchTable bt(s.sys, c, c.n0 + 6);
  for (int n = c.n0 + 1; n <= c.n0 + 6; ++n) {
    const SpectralBranch& b = bt.at(n);
    CMat phi(s.sys.d(), s.sys.d2);
    phi.topRows(s.sys.d1) = b.G;
    phi.bottomRows(s.sys.d2).setIdentity();
    EXPECT_LT((b.Pp.adjoint() * phi - phi).norm(), 1e-10);
    EXPECT_LT((b.Ph - bt.at(-n).Ph.conjugate()).norm(), 1e-10) << "real coefficients give conjugate symmetry";
  }
}

TEST(BranchTable, RejectsModesBelowCutoff) {
  const Scenario s = builtin_scenario("nscl");
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  const BranchTable bt(s.sys, c, c.n0 + 2);
  EXPECT_FALSE(bt.has(c.n0));
  EXPECT_TRUE(bt.has(c.n0 + 1));
  EXPECT_TRUE(bt.has(-(c.n0 + 2)));
}

TEST(BranchTable, SerialAndParallelAgree) {
  const Scenario s = builtin_scenario("moving-wave(1,1)");
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  const BranchTable a(s.sys, c, 20, Exec::kSerial);
  const BranchTable b(s.sys, c, 20, Exec::kParallel);
  for (int n = c.n0 + 1; n <= 20; ++n) EXPECT_EQ((a.at(n).Ph - b.at(n).Ph).norm(), 0.0);
}

TEST(BranchConstants, ParabolicDecayBound) {
  const Scenario s = builtin_scenario("nscl");
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  EXPECT_GT(c.cp, 0.0);
  EXPECT_GE(c.Kp, 1.0 - 1e-12);
  EXPECT_GT(c.n0, 0);
}
