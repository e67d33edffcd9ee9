#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace ssmc;

TEST(Simulate, RegressionShapesAndMeans) {
  const Dataset d = sim_regression({ModelKind::regression, 100, 10, 0, 0, 1});
  EXPECT_EQ(d.n(), 100u);
  EXPECT_EQ(d.X.rows(), 100u);
  EXPECT_EQ(d.X.cols(), 10u);
  EXPECT_FALSE(d.group.has_value());
  for (std::size_t j = 0; j < 10; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < 100; ++i) m += d.X(i, j);
    EXPECT_LT(std::fabs(m / 100), 0.5);
  }
}

TEST(Simulate, BetaVectors) {
  EXPECT_EQ(true_beta(10), (Vector{1.5, 2, 2.5, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(true_beta(5), (Vector{1.5, 2, 2.5, 0, 0}));
  EXPECT_THROW(true_beta(2), ConfigError);
  EXPECT_EQ(SimSpec{ModelKind::mixed}.dim(), 5u);
  EXPECT_EQ(SimSpec{ModelKind::poisson}.dim(), 10u);
}

TEST(Simulate, SeedDeterminism) {
  for (ModelKind k : {ModelKind::regression, ModelKind::mixed, ModelKind::poisson}) {
    SimSpec s{k, 200, 0, 5, 3, 9};
    EXPECT_EQ(checksum(simulate_dataset(s)), checksum(simulate_dataset(s)));
    SimSpec t = s;
    t.seed = 10;
    EXPECT_NE(checksum(simulate_dataset(s)), checksum(simulate_dataset(t)));
  }
  SimSpec f{ModelKind::factor, 50, 10, 0, 3, 9};
  EXPECT_EQ(sim_factor(f), sim_factor(f));
}

TEST(Simulate, MixedGroups) {
  const Dataset d = sim_mixed({ModelKind::mixed, 100, 5, 5, 0, 1});
  ASSERT_TRUE(d.group.has_value());
  EXPECT_EQ(d.n_groups, 5);
  std::set<int> seen(d.group->begin(), d.group->end());
  EXPECT_EQ(seen, (std::set<int>{1, 2, 3, 4, 5}));
  EXPECT_NO_THROW(d.validate());

  // J = 1: residuals from the true β share a common shift.
  const Dataset one = sim_mixed({ModelKind::mixed, 20000, 5, 1, 0, 2});
  double mean_resid = 0;
  const Vector beta = true_beta(5);
  for (std::size_t i = 0; i < one.n(); ++i) mean_resid += one.y[i] - dot(one.X.row(i), beta);
  mean_resid /= one.n();
  double var = 0;
  for (std::size_t i = 0; i < one.n(); ++i) {
    const double e = one.y[i] - dot(one.X.row(i), beta) - mean_resid;
    var += e * e;
  }
  EXPECT_NEAR(var / one.n(), 1.0, 0.05);
}

TEST(Simulate, FactorTables) {
  const auto a = factor_scenario(10, 3);
  EXPECT_EQ(a.Lambda(0, 0), 0.99);
  EXPECT_EQ(a.psi[0], 0.2079);
  const auto b = factor_scenario(20, 5);
  EXPECT_EQ(b.Lambda(0, 0), -1.33);
  EXPECT_EQ(b.psi[19], 0.370);
  EXPECT_EQ(b.Lambda.rows(), 20u);
  EXPECT_EQ(b.Lambda.cols(), 5u);
  EXPECT_THROW(factor_scenario(12, 3), UnknownScenario);
  EXPECT_THROW(sim_factor({ModelKind::factor, 10, 12, 0, 3, 1}), UnknownScenario);
  SimSpec custom{ModelKind::factor, 10, 2, 0, 1, 1};
  custom.Lambda = Matrix{{1.0}, {0.5}};
  custom.psi = Vector{1.0, 1.0};
  EXPECT_EQ(sim_factor(custom).cols(), 2u);
}

TEST(Simulate, FactorCovarianceConverges) {
  for (auto [p, d] : {std::pair<std::size_t, std::size_t>{10, 3}, {20, 5}}) {
    const Matrix Y = sim_factor({ModelKind::factor, 100000, p, 0, d, 3});
    const auto sc = factor_scenario(p, d);
    const SymMatrix want = factor_covariance(sc.Lambda, sc.psi);
    const SymMatrix got = build_factor_stats(Y).Sbar;
    EXPECT_LT(ssmc::testing::max_abs_diff(got, want), 0.05) << p;
  }
}

TEST(Simulate, PoissonCounts) {
  const Dataset d = sim_poisson({ModelKind::poisson, 1000, 10, 0, 0, 1});
  for (double y : d.y) {
    EXPECT_GE(y, 0.0);
    EXPECT_EQ(y, std::floor(y));
  }
  double sd = 0;
  for (double v : d.X.data()) sd += v * v;
  EXPECT_NEAR(std::sqrt(sd / d.X.data().size()), 0.5, 0.02);

  // Unit rate: y ~ Poisson(1) has mean 1.
  Philox rng(5, 0);
  double s = 0;
  for (int i = 0; i < 100000; ++i) s += rng.poisson(std::exp(0.0));
  EXPECT_NEAR(s / 100000, 1.0, 0.02);

  std::size_t redraws = 99;
  sim_poisson({ModelKind::poisson, 100, 10, 0, 0, 2}, &redraws);
  EXPECT_EQ(redraws, 0u);
}

TEST(SimulateProperty, OlsRecoversBeta) {
  const Dataset d = sim_regression({ModelKind::regression, 10000, 10, 0, 0, 4});
  const auto s = build_regression_stats(d);
  const auto L = cholesky(s.Sxx);
  const Vector bhat = cholesky_solve(L, s.Syx);
  const SymMatrix cov = inverse_from_cholesky(L);
  const Vector beta = true_beta(10);
  double rss = 0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double r = d.y[i] - dot(d.X.row(i), bhat);
    rss += r * r;
  }
  const double s2 = rss / (d.n() - 10);
  for (std::size_t j = 0; j < 10; ++j)
    EXPECT_LE(std::fabs(bhat[j] - beta[j]), 3 * std::sqrt(s2 * cov(j, j))) << j;
}
