#include <gtest/gtest.h>

#include "fusion_oracles.hpp"
#include "rbfusion/fusion.hpp"

using namespace rbfusion;
using namespace rbfusion::testing;

namespace {

GaussianEstimate scalar_est(double m, double p) { return {Vector::Constant(1, m), Matrix::Constant(1, 1, p)}; }

GaussianEstimate diag_est(std::initializer_list<double> d) {
  Vector v(static_cast<Eigen::Index>(d.size()));
  Eigen::Index i = 0;
  for (double x : d) v(i++) = x;
  return {Vector::Zero(v.size()), v.asDiagonal()};
}

constexpr double kChi = 1.0 / 1.025;

}  // namespace

TEST(CiFuse, IdenticalInputs) {
  GaussianEstimate e{Vector(2), Matrix::Identity(2, 2)};
  e.mean << 0.4, -3;
  for (double w : {0.0, 0.3, 1.0}) {
    const auto out = ci_fuse(e, e, w);
    EXPECT_TRUE(out.mean.isApprox(e.mean, 1e-14));
    EXPECT_TRUE(out.cov.isApprox(e.cov, 1e-14));
  }
}

TEST(CiFuse, BoundaryWeightReturnsFirstInput) {
  std::mt19937_64 eng(2);
  const GaussianEstimate a{random_vector(eng, 3), random_spd(eng, 3)};
  const GaussianEstimate b{random_vector(eng, 3), random_spd(eng, 3)};
  const auto out = ci_fuse(a, b, 1.0);
  EXPECT_LE((out.mean - a.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((out.cov - a.cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CiFuse, ScalarArithmetic) {
  const auto out = ci_fuse(scalar_est(1.0, 2.0), scalar_est(-1.0, 1.0), 0.5);
  EXPECT_NEAR(out.cov(0, 0), 4.0 / 3.0, 1e-14);
  // m = P (0.25 * 1 + 0.5 * -1)
  EXPECT_NEAR(out.mean(0), 4.0 / 3.0 * (-0.25), 1e-14);
}

TEST(CiFuse, SingularCovarianceThrows) {
  EXPECT_THROW(ci_fuse(scalar_est(0, 0), scalar_est(0, 1), 0.5), NumericalError);
  EXPECT_THROW(ci_fuse(scalar_est(0, 1), scalar_est(0, 1), 1.5), std::invalid_argument);
}

TEST(OptimizeOmegaPair, SymmetricTieReturnsHalf) {
  const Matrix p = Matrix::Identity(3, 3) * 2.0;
  EXPECT_EQ(optimize_omega_pair(p, p), 0.5);
}

TEST(OptimizeOmegaPair, ScalarCaseMatchesGridOracle) {
  const Matrix pa = Matrix::Constant(1, 1, 0.5), pb = Matrix::Constant(1, 1, 1.0);
  double best_w = 0.0, best_f = INFINITY;
  for (int i = 0; i <= 10000; ++i) {
    const double w = i / 10000.0;
    const double f = 1.0 / (w * 0.5 + (1 - w) * 1.0);
    if (f < best_f) best_f = f, best_w = w;
  }
  ASSERT_EQ(best_w, 0.0);
  const double w = optimize_omega_pair(pa, pb);
  EXPECT_NEAR(w, 0.0, 1e-9);
  EXPECT_NEAR(ci_fuse(scalar_est(0, 2), scalar_est(0, 1), w).cov(0, 0), 1.0, 1e-9);
}

TEST(OptimizeOmegaPair, SwapSymmetry) {
  const Matrix pa = diag_est({1, 4}).cov.inverse(), pb = diag_est({4, 1}).cov.inverse();
  EXPECT_NEAR(optimize_omega_pair(pa, pb), 0.5, 1e-9);
}

TEST(OptimizeOmegaPair, WithinGridOracleOnRandomPairs) {
  std::mt19937_64 eng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 1 + static_cast<Eigen::Index>(trial % 4);
    const std::vector<Matrix> prec = {random_spd(eng, n), random_spd(eng, n)};
    double grid_best = INFINITY;
    for (int i = 0; i <= 10000; ++i) {
      Vector w(2);
      w << i / 10000.0, 1 - i / 10000.0;
      grid_best = std::min(grid_best, trace_objective(prec, w));
    }
    const double w = optimize_omega_pair(prec[0], prec[1]);
    Vector ww(2);
    ww << w, 1 - w;
    ASSERT_LE(trace_objective(prec, ww), grid_best + 1e-6) << trial;
  }
}

TEST(OptimizeOmegaPair, DeterminantObjective) {
  // det((w Pa + (1-w) Pb)^{-1}) for diag(1,4) vs diag(4,1) is also symmetric.
  const Matrix pa = diag_est({1, 4}).cov.inverse(), pb = diag_est({4, 1}).cov.inverse();
  EXPECT_NEAR(optimize_omega_pair(pa, pb, FusionObjective::Determinant), 0.5, 1e-6);
}

TEST(ModifiedPrecisions, UnitChiIsTraditional) {
  for (double p : {0.0, 0.3, 0.9})
    for (double q : {0.1, 0.7, 1.0}) {
      const std::array<NodeProfile, 2> profs = {NodeProfile{p, 1.0, 0}, NodeProfile{q, 1.0, 0}};
      const auto f = modified_scale_factors(profs);
      EXPECT_DOUBLE_EQ(f[0], 1.0);
      EXPECT_DOUBLE_EQ(f[1], 1.0);
    }
}

TEST(ModifiedPrecisions, HeterogeneousDetectionFactors) {
  const std::array<NodeProfile, 2> profs = {NodeProfile{0.9, kChi, 0.5}, NodeProfile{0.7, kChi, 0.5}};
  const auto f = modified_scale_factors(profs);
  EXPECT_NEAR(f[0], 0.996847, 1e-6);
  EXPECT_NEAR(f[1], 0.991969, 1e-6);
  const auto [pa, pb] = modified_precisions(Matrix::Identity(2, 2), 2.0 * Matrix::Identity(2, 2), profs[0], profs[1]);
  EXPECT_TRUE(pa.isApprox(f[0] * Matrix::Identity(2, 2), 1e-14));
  EXPECT_TRUE(pb.isApprox(f[1] * 0.5 * Matrix::Identity(2, 2), 1e-14));
}

TEST(ModifiedPrecisions, EqualNodesShareAlpha) {
  for (double p : {0.2, 0.75})
    for (double chi : {0.3, kChi}) {
      const std::array<NodeProfile, 2> profs = {NodeProfile{p, chi, 0}, NodeProfile{p, chi, 0}};
      const auto f = modified_scale_factors(profs);
      const double alpha = p + p * (1 - p) * chi + (1 - p) * (1 - p) * chi * chi;
      EXPECT_NEAR(f[0], alpha, 1e-15);
      EXPECT_NEAR(f[1], alpha, 1e-15);
    }
}

TEST(ModifiedPrecisions, SingularCovarianceThrows) {
  EXPECT_THROW(modified_precisions(Matrix::Zero(2, 2), Matrix::Identity(2, 2), {}, {}), NumericalError);
}

TEST(ModifiedCiFuse, UnitChiEqualsOptimalCi) {
  std::mt19937_64 eng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const GaussianEstimate a{random_vector(eng, 4), random_spd(eng, 4)};
    const GaussianEstimate b{random_vector(eng, 4), random_spd(eng, 4)};
    const auto mod = modified_ci_fuse(a, b, {uniform(eng, 0, 1), 1.0, 0}, {uniform(eng, 0, 1), 1.0, 0});
    const auto ci = ci_fuse_optimal(a, b);
    ASSERT_LE((mod.estimate.mean - ci.estimate.mean).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_LE((mod.estimate.cov - ci.estimate.cov).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ModifiedCiFuse, EqualProfilesKeepTheTraditionalWeight) {
  std::mt19937_64 eng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const GaussianEstimate a{random_vector(eng, 3), random_spd(eng, 3)};
    const GaussianEstimate b{random_vector(eng, 3), random_spd(eng, 3)};
    const NodeProfile prof{0.8, kChi, 0.5};
    const auto mod = modified_ci_fuse(a, b, prof, prof);
    const auto ci = ci_fuse_optimal(a, b);
    ASSERT_NEAR(mod.weights.omega(0), ci.weights.omega(0), 1e-6);
  }
}

TEST(ModifiedCiFuse, AsymmetricDetectionInflatesCovariance) {
  const GaussianEstimate a{Vector::Zero(2), Matrix::Identity(2, 2)};
  const auto out = modified_ci_fuse(a, a, {0.9, kChi, 0.5}, {0.7, kChi, 0.5});
  const double w = out.weights.omega(0);
  const double expected = 1.0 / (0.9968468 * w + 0.9919688 * (1 - w));
  EXPECT_NEAR(out.estimate.cov(0, 0), expected, 1e-6);
  EXPECT_GT(out.estimate.cov(0, 0), 1.0);
  EXPECT_GT(min_eigenvalue(out.estimate.cov - Matrix::Identity(2, 2)), 0.0);
}

TEST(BciFuse, TwoInputsMatchPairwise) {
  std::mt19937_64 eng(7);
  const std::vector<GaussianEstimate> in = {{random_vector(eng, 3), random_spd(eng, 3)},
                                            {random_vector(eng, 3), random_spd(eng, 3)}};
  const auto w = MixingWeights::pair(0.37);
  const auto bci = bci_fuse(in, w);
  const auto ci = ci_fuse(in[0], in[1], w);
  EXPECT_LE((bci.mean - ci.mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((bci.cov - ci.cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BciFuse, IdenticalInputsReturned) {
  std::mt19937_64 eng(8);
  const GaussianEstimate e{random_vector(eng, 2), random_spd(eng, 2)};
  const std::vector<GaussianEstimate> in(4, e);
  const auto out = bci_fuse(in, MixingWeights{Eigen::Vector4d(0.1, 0.2, 0.3, 0.4)});
  EXPECT_TRUE(out.mean.isApprox(e.mean, 1e-12));
  EXPECT_TRUE(out.cov.isApprox(e.cov, 1e-12));
}

TEST(BciFuse, ThreeScalarInputs) {
  const std::vector<GaussianEstimate> in = {scalar_est(0, 1), scalar_est(0, 2), scalar_est(0, 4)};
  const auto out = bci_fuse(in, MixingWeights{Eigen::Vector3d(0.5, 0.25, 0.25)});
  EXPECT_NEAR(out.cov(0, 0), 1.0 / 0.6875, 1e-14);
}

TEST(BciFuse, WeightsOffSimplexThrow) {
  const std::vector<GaussianEstimate> in = {scalar_est(0, 1), scalar_est(0, 2), scalar_est(0, 4)};
  EXPECT_THROW(bci_fuse(in, MixingWeights{Eigen::Vector3d(0.5, 0.5, 0.5)}), std::invalid_argument);
  EXPECT_THROW(bci_fuse(in, MixingWeights{Eigen::Vector3d(1.5, -0.25, -0.25)}), std::invalid_argument);
  EXPECT_THROW(bci_fuse(in, MixingWeights::pair(0.5)), std::invalid_argument);
  EXPECT_THROW(bci_fuse(std::vector<GaussianEstimate>{scalar_est(0, 1)}, MixingWeights::centroid(1)),
               std::invalid_argument);
}

TEST(MbciFuse, UnitChiEqualsOptimalBci) {
  std::mt19937_64 eng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<GaussianEstimate> in;
    std::vector<NodeProfile> profs;
    for (int i = 0; i < 3; ++i) {
      in.push_back({random_vector(eng, 2), random_spd(eng, 2)});
      profs.push_back({uniform(eng, 0.5, 1.0), 1.0, 0.0});
    }
    const auto m = mbci_fuse(in, profs);
    const auto b = bci_fuse_optimal(in);
    ASSERT_LE((m.estimate.mean - b.estimate.mean).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_LE((m.estimate.cov - b.estimate.cov).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MbciFuse, TwoInputsEqualModifiedCi) {
  std::mt19937_64 eng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<GaussianEstimate> in = {{random_vector(eng, 4), random_spd(eng, 4)},
                                              {random_vector(eng, 4), random_spd(eng, 4)}};
    const std::vector<NodeProfile> profs = {{uniform(eng, 0, 1), uniform(eng, 0.1, 1), 0},
                                            {uniform(eng, 0, 1), uniform(eng, 0.1, 1), 0}};
    const auto m = mbci_fuse(in, profs);
    const auto c = modified_ci_fuse(in[0], in[1], profs[0], profs[1]);
    ASSERT_LE((m.estimate.mean - c.estimate.mean).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_LE((m.estimate.cov - c.estimate.cov).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MbciFuse, ScaleFactorsMatchNPlayerGameExpansion) {
  const std::vector<NodeProfile> three = {{0.8, kChi, 0.5}, {0.9, kChi, 0.5}, {0.95, kChi, 0.5}};
  const auto lemma = modified_scale_factors(three);
  const auto game = game_expansion_factors(three);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(lemma[i], game[i], 1e-15);

  std::mt19937_64 eng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<NodeProfile> nodes(2 + trial % 5);
    for (auto& n : nodes) n = {uniform(eng, 0, 1), uniform(eng, 0.01, 1), 0};
    const auto a = modified_scale_factors(nodes);
    const auto b = game_expansion_factors(nodes);
    for (std::size_t i = 0; i < nodes.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-13);
  }
}

TEST(OptimizeOmegaSimplex, EqualPrecisionsGiveCentroid) {
  const std::vector<Matrix> prec(4, 3.0 * Matrix::Identity(2, 2));
  const auto w = optimize_omega_simplex(prec);
  EXPECT_TRUE(w.omega.isApprox(Vector::Constant(4, 0.25), 1e-15));
}

TEST(OptimizeOmegaSimplex, DominantInputTakesTheWeight) {
  std::mt19937_64 eng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix base = random_spd(eng, 3);
    const std::vector<Matrix> prec = {10.0 * base, base, base};
    const auto w = optimize_omega_simplex(prec);
    EXPECT_GE(w.omega(0), 0.99);
    EXPECT_LE(trace_objective(prec, w.omega), dirichlet_search(eng, prec, 20000) + 1e-4);
  }
}

TEST(OptimizeOmegaSimplex, NelderMeadAgreesWithPairSearchForTwoInputs) {
  std::mt19937_64 eng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 1 + static_cast<Eigen::Index>(trial % 4);
    const std::vector<Matrix> prec = {random_spd(eng, n), random_spd(eng, n)};
    const auto nm = nelder_mead_simplex_weights(prec);
    const double pair = optimize_omega_pair(prec[0], prec[1]);
    Vector pw(2);
    pw << pair, 1 - pair;
    ASSERT_NEAR(trace_objective(prec, nm.omega), trace_objective(prec, pw), 1e-5);
    ASSERT_NEAR(nm.omega(0), pair, 1e-3) << trial;
  }
}

TEST(OptimizeOmegaSimplex, WeightsAreOnTheSimplex) {
  std::mt19937_64 eng(14);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Matrix> prec;
    for (int i = 0; i < 3 + trial % 3; ++i) prec.push_back(random_spd(eng, 2));
    EXPECT_NO_THROW(optimize_omega_simplex(prec).validate());
  }
}

TEST(ExpectedPayoff, MatchesModifiedFusedPrecisionTrace) {
  std::mt19937_64 eng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix pa = random_spd(eng, 3), pb = random_spd(eng, 3);
    const NodeProfile a{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0}, b{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0};
    const double w = uniform(eng, 0, 1);
    const auto [ia, ib] = modified_precisions(pa, pb, a, b);
    ASSERT_NEAR(expected_payoff(pa, pb, a, b, w), (w * ia + (1 - w) * ib).trace(), 1e-10);
  }
}

TEST(ExpectedPayoff, Corners) {
  std::mt19937_64 eng(16);
  const Matrix pa = random_spd(eng, 2), pb = random_spd(eng, 2);
  const double w = 0.3;
  const double plain = (w * pa.inverse() + (1 - w) * pb.inverse()).trace();
  EXPECT_NEAR(expected_payoff(pa, pb, {1.0, 0.4, 0}, {1.0, 0.6, 0}, w), plain, 1e-12);
  EXPECT_NEAR(expected_payoff(pa, pb, {0.3, 1.0, 0}, {0.8, 1.0, 0}, w), plain, 1e-12);
}

// Reported covariance dominates the true covariance of the fused error for
// arbitrary cross-correlation.
TEST(FusionProperties, ConsistencyUnderRandomCrossCorrelation) {
  std::mt19937_64 eng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const auto dim = 1 + static_cast<Eigen::Index>(trial % 3);
    const auto t = make_correlated_trial(eng, 2 + trial % 3, dim);
    std::vector<Matrix> plain;
    for (const auto& e : t.inputs) plain.push_back(e.cov.inverse());

    const auto bci = bci_fuse_optimal(t.inputs);
    ASSERT_GE(consistency_margin(t, plain, bci.weights.omega, bci.estimate.cov), -1e-9) << trial;

    const auto mb = mbci_fuse(t.inputs, t.profiles);
    const auto f = modified_scale_factors(t.profiles);
    std::vector<Matrix> scaled;
    for (std::size_t i = 0; i < plain.size(); ++i) scaled.push_back(f[i] * plain[i]);
    ASSERT_GE(consistency_margin(t, scaled, mb.weights.omega, mb.estimate.cov), -1e-9) << trial;
  }
}

TEST(FusionProperties, ModifiedCovarianceDominatesTraditionalAtEqualWeight) {
  std::mt19937_64 eng(18);
  for (int trial = 0; trial < 200; ++trial) {
    const GaussianEstimate a{random_vector(eng, 3), random_spd(eng, 3)};
    const GaussianEstimate b{random_vector(eng, 3), random_spd(eng, 3)};
    const NodeProfile pa{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0}, pb{uniform(eng, 0, 1), uniform(eng, 0.05, 1), 0};
    const double w = uniform(eng, 0, 1);
    const auto [ia, ib] = modified_precisions(a.cov, b.cov, pa, pb);
    const Matrix modified = (w * ia + (1 - w) * ib).inverse();
    const Matrix traditional = ci_fuse(a, b, w).cov;
    ASSERT_GE(min_eigenvalue(modified - traditional), -1e-10);
  }
}

TEST(FusionProperties, OptimalWeightInvariantUnderCommonScaling) {
  std::mt19937_64 eng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix pa = random_spd(eng, 3), pb = random_spd(eng, 3);
    const double s = uniform(eng, 0.1, 10);
    ASSERT_NEAR(optimize_omega_pair(pa, pb), optimize_omega_pair(s * pa, s * pb), 1e-6);
  }
}

TEST(FusionProperties, ScaleFactorsInUnitInterval) {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  for (double pa : grid)
    for (double pb : grid)
      for (double xa : grid)
        for (double xb : grid) {
          if (xa == 0.0 || xb == 0.0) continue;  // chi must be positive
          const std::array<NodeProfile, 2> profs = {NodeProfile{pa, xa, 0}, NodeProfile{pb, xb, 0}};
          for (double f : modified_scale_factors(profs)) {
            ASSERT_GT(f, 0.0);
            ASSERT_LE(f, 1.0);
          }
        }
  for (double p1 : grid)
    for (double p2 : grid)
      for (double x : grid) {
        if (x == 0.0) continue;
        const std::array<NodeProfile, 3> profs = {NodeProfile{p1, x, 0}, NodeProfile{p2, x, 0}, NodeProfile{0.5, x, 0}};
        for (double f : modified_scale_factors(profs)) {
          ASSERT_GT(f, 0.0);
          ASSERT_LE(f, 1.0);
        }
      }
}
