#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <chrono>

#include "test_util.hpp"

using namespace ssmc;
using namespace ssmc::testing;

namespace {

Dataset dataset(Vector y, Matrix X, std::optional<std::vector<int>> g = {}, int J = 0) {
  Dataset d;
  d.y = std::move(y);
  d.X = std::move(X);
  d.group = std::move(g);
  d.n_groups = J;
  return d;
}

// Independent multivariate-normal log-density via Eigen.
double eigen_mvn_loglik(const Matrix& Y, const Matrix& Lambda, const Vector& psi) {
  const auto p = static_cast<Eigen::Index>(Y.cols());
  Eigen::MatrixXd L(p, Lambda.cols());
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < L.cols(); ++j) L(i, j) = Lambda(i, j);
  Eigen::MatrixXd S = L * L.transpose();
  for (Eigen::Index i = 0; i < p; ++i) S(i, i) += psi[i];
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  const double logdet = ldlt.vectorD().array().log().sum();
  double ll = 0.0;
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    Eigen::VectorXd y(p);
    for (Eigen::Index j = 0; j < p; ++j) y[j] = Y(r, j);
    ll += -0.5 * p * std::log(2 * std::numbers::pi) - 0.5 * logdet - 0.5 * y.dot(ldlt.solve(y));
  }
  return ll;
}

}  // namespace

TEST(Models, RegressionExamples) {
  const Dataset d = dataset({1, 2, 3}, Matrix{{1}, {1}, {1}});
  const auto s = build_regression_stats(d);
  EXPECT_DOUBLE_EQ(regression_loglik(s, Vector{2.0}, 1.0), -1.0);
  EXPECT_DOUBLE_EQ(regression_loglik(s, Vector{0.0}, 1.0), -s.Syy / 2);
  EXPECT_NEAR(regression_loglik_naive(d, Vector{2.0}, 1.0), -1.0 - 1.5 * detail::kLog2Pi, 1e-14);
}

TEST(Models, RegressionNaiveDiffersByConstant) {
  Philox rng(1);
  const Dataset d = sim_regression({ModelKind::regression, 200, 5, 0, 0, 3});
  const auto s = build_regression_stats(d);
  for (int t = 0; t < 50; ++t) {
    const Vector b = random_vector(rng, 5, -3, 3);
    const double sigma = rng.uniform(0.3, 3.0);
    const double diff = regression_loglik(s, b, sigma) - regression_loglik_naive(d, b, sigma);
    EXPECT_NEAR(diff, 100.0 * detail::kLog2Pi, 1e-8);
  }
}

TEST(Models, RegressionGradientAtOrigin) {
  const Dataset d = sim_regression({ModelKind::regression, 50, 4, 0, 0, 2});
  RegressionPriors pr;
  pr.fixed_sigma = 1.0;
  pr.b = PriorSpec::normal(0, 1e12);  // effectively flat
  const RegressionModel m(d, Backend::suffstat, pr);
  const auto r = logdensity_grad(m, Vector(4, 0.0));
  const auto s = build_regression_stats(d);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.grad[j], s.Syx[j], 1e-9);
}

TEST(Models, MixedExamples) {
  const Dataset one = dataset({1, 2}, Matrix{{1}, {1}}, std::vector<int>{1, 1}, 1);
  const auto s = build_mixed_stats(one);
  EXPECT_DOUBLE_EQ(mixed_loglik(s, Vector{0.0}, 1.0, 1.0, Vector{1.5}), -0.25);
  EXPECT_DOUBLE_EQ(mixed_loglik(s, Vector{0.0}, 1.0, 1.5, Vector{1.0}), -0.25);

  const Dataset d = sim_mixed({ModelKind::mixed, 80, 3, 4, 0, 5});
  const auto ms = build_mixed_stats(d);
  const auto rs = build_regression_stats(d);
  const Vector b{0.3, -1, 2};
  EXPECT_EQ(mixed_loglik(ms, b, 1.7, 0.9, Vector(4, 0.0)), regression_loglik(rs, b, 1.7));
}

TEST(Models, MixedNaiveDiffersByConstant) {
  Philox rng(2);
  const Dataset d = sim_mixed({ModelKind::mixed, 300, 3, 10, 0, 4});
  const auto s = build_mixed_stats(d);
  for (int t = 0; t < 50; ++t) {
    const Vector b = random_vector(rng, 3, -3, 3), z = random_vector(rng, 10, -2, 2);
    const double sigma = rng.uniform(0.3, 3.0), sd_u = rng.uniform(0.1, 2.0);
    const double diff =
        mixed_loglik(s, b, sigma, sd_u, z) - mixed_loglik_naive(d, b, sigma, sd_u, z);
    EXPECT_NEAR(diff, 150.0 * detail::kLog2Pi, 1e-8);
  }
}

TEST(Models, FactorExamples) {
  FactorStats s{1, Matrix{{0.0}}};
  EXPECT_NEAR(factor_loglik(s, Matrix{{1.0}}, Vector{1.0}, Backend::suffstat),
              -0.5 * std::log(4 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(factor_loglik(s, Matrix{{1.0}}, Vector{1.0}, Backend::suffstat_woodbury),
              -0.5 * std::log(4 * std::numbers::pi), 1e-14);

  const Matrix Y = sim_factor({ModelKind::factor, 40, 10, 0, 3, 1});
  const auto fs = build_factor_stats(Y);
  double tr = 0;
  for (std::size_t j = 0; j < 10; ++j) tr += fs.Sbar(j, j);
  const double want = 20.0 * (-10 * detail::kLog2Pi - tr);
  for (Backend b : {Backend::suffstat, Backend::suffstat_woodbury})
    EXPECT_NEAR(factor_loglik(fs, Matrix(10, 3), Vector(10, 1.0), b), want, 1e-10);
  EXPECT_THROW(factor_loglik(fs, Matrix(10, 3), Vector(10, 1.0), Backend::naive), ConfigError);

  for (const auto& g : {detail::factor_suffstat_dense(fs, Matrix(10, 3), Vector(10, 1.0)),
                        detail::factor_suffstat_woodbury(fs, Matrix(10, 3), Vector(10, 1.0)),
                        detail::factor_naive(Y, Matrix(10, 3), Vector(10, 1.0))})
    for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(g.d_psi[j], 20.0 * (fs.Sbar(j, j) - 1), 1e-9);
}

TEST(Models, FactorBackendsAgreeWithEigen) {
  Philox rng(3);
  const Matrix Y = sim_factor({ModelKind::factor, 100, 10, 0, 3, 2});
  const auto fs = build_factor_stats(Y);
  for (int t = 0; t < 50; ++t) {
    const Matrix L = assemble_loadings(10, random_vector(rng, factor_free_loadings(10, 3), -1, 1),
                                       random_vector(rng, 3, 0.2, 2));
    const Vector psi = random_vector(rng, 10, 0.1, 2);
    const double dense = factor_loglik(fs, L, psi, Backend::suffstat);
    const double wood = factor_loglik(fs, L, psi, Backend::suffstat_woodbury);
    const double naive = factor_loglik_naive(Y, L, psi);
    EXPECT_NEAR(dense, wood, 1e-8);
    EXPECT_NEAR(dense, naive, 1e-6);
    EXPECT_NEAR(naive, eigen_mvn_loglik(Y, L, psi), 1e-6);
    const auto gd = detail::factor_suffstat_dense(fs, L, psi);
    const auto gw = detail::factor_suffstat_woodbury(fs, L, psi);
    EXPECT_LT(max_abs_diff(gd.d_lambda, gw.d_lambda), 1e-8);
    for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(gd.d_psi[j], gw.d_psi[j], 1e-8);
  }
}

TEST(Models, PoissonExamples) {
  const Dataset d = sim_poisson({ModelKind::poisson, 30, 4, 0, 0, 1});
  EXPECT_DOUBLE_EQ(poisson_loglik(build_poisson_stats(d), Vector(4, 0.0)), -30.0);
  const Dataset one = dataset({2}, Matrix{{1}});
  EXPECT_DOUBLE_EQ(poisson_loglik(build_poisson_stats(one), Vector{0.0}), -1.0);
  EXPECT_EQ(poisson_loglik(build_poisson_stats(one), Vector{701.0}),
            -std::numeric_limits<double>::infinity());
}

TEST(Models, PoissonMatchesNaiveKernel) {
  Philox rng(4);
  const Dataset d = sim_poisson({ModelKind::poisson, 500, 10, 0, 0, 3});
  const auto s = build_poisson_stats(d);
  for (int t = 0; t < 50; ++t) {
    const Vector b = random_vector(rng, 10, -0.5, 0.5);
    double kernel = 0.0;
    for (std::size_t i = 0; i < d.n(); ++i) {
      const double eta = dot(d.X.row(i), b);
      kernel += d.y[i] * eta - std::exp(eta);
    }
    const double v = poisson_loglik(s, b);
    EXPECT_LE(std::fabs(v - kernel), 1e-8 * std::max(1.0, std::fabs(kernel)));
  }
}

TEST(Models, OverflowAndIndefiniteGiveRejection) {
  const Dataset d = dataset({1}, Matrix{{1}});
  const PoissonModel pm(d, Backend::suffstat);
  const auto r = logdensity_grad(pm, Vector{800.0});
  EXPECT_EQ(r.lp, -std::numeric_limits<double>::infinity());
  EXPECT_EQ(r.grad, Vector{0.0});
  const PoissonModel pn(d, Backend::naive);
  EXPECT_EQ(pn.log_density(Vector{800.0}), -std::numeric_limits<double>::infinity());

  const Matrix Y = sim_factor({ModelKind::factor, 20, 10, 0, 3, 1});
  const FactorModel fm(Y, 3, Backend::suffstat);
  Vector q(fm.dim(), 0.0);
  const auto& psi = fm.layout().block("psi");
  for (std::size_t j = 0; j < psi.size; ++j) q[psi.offset + j] = -800.0;  // ψ underflows to 0
  const auto& Ld = fm.layout().block("L_d");
  for (std::size_t j = 0; j < Ld.size; ++j) q[Ld.offset + j] = -800.0;
  const auto rf = logdensity_grad(fm, q);
  EXPECT_EQ(rf.lp, -std::numeric_limits<double>::infinity());
  for (double g : rf.grad) EXPECT_EQ(g, 0.0);
}

TEST(ModelsProperty, BackendEquivalence) {
  Philox rng(5);
  for (auto& c : model_cases()) {
    for (int t = 0; t < 100; ++t) {
      const Vector q1 = random_point(*c.naive, rng), q2 = random_point(*c.naive, rng);
      const double dn = c.naive->log_density(q1) - c.naive->log_density(q2);
      const double ds = c.suff->log_density(q1) - c.suff->log_density(q2);
      EXPECT_LE(std::fabs(dn - ds), 1e-6 * std::max(1.0, std::fabs(dn))) << c.label;
      if (c.woodbury) {
        const double dw = c.woodbury->log_density(q1) - c.woodbury->log_density(q2);
        EXPECT_LE(std::fabs(dw - ds), 1e-8 * std::max(1.0, std::fabs(ds))) << c.label;
      }
    }
  }
}

TEST(ModelsProperty, GradientsMatchFiniteDifferences) {
  Philox rng(6);
  for (auto& c : model_cases()) {
    for (const PosteriorModel* m : {c.naive.get(), c.suff.get(), c.woodbury.get()}) {
      if (!m) continue;
      for (int t = 0; t < 20; ++t) {
        const Vector q = random_point(*m, rng);
        EXPECT_LE(gradient_error(*m, q), 1e-5) << c.label << " " << to_string(m->backend());
      }
    }
  }
}

TEST(ModelsProperty, LoadingStructure) {
  Philox rng(7);
  const Matrix Y = sim_factor({ModelKind::factor, 20, 20, 0, 5, 1});
  const FactorModel m(Y, 5, Backend::suffstat_woodbury);
  for (int t = 0; t < 100; ++t) {
    Vector q = random_vector(rng, m.dim(), -5, 5);
    const Matrix L = m.loadings(q);
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        if (j > i) EXPECT_EQ(L(i, j), 0.0);
        if (j == i) EXPECT_GT(L(i, j), 0.0);
      }
  }
  // Column-major packing below the diagonal.
  const Vector Lt{1, 2, 3, 4, 5};
  const Matrix A = assemble_loadings(4, Lt, Vector{9, 8});
  EXPECT_EQ(A, (Matrix{{9, 0}, {1, 8}, {2, 4}, {3, 5}}));
  EXPECT_EQ(factor_free_loadings(10, 3), 24u);
  EXPECT_EQ(factor_free_loadings(20, 5), 85u);
}

TEST(ModelsProperty, SuffstatCostIndependentOfN) {
  auto time_evals = [](std::size_t n) {
    const Dataset d = sim_regression({ModelKind::regression, n, 10, 0, 0, 1});
    const RegressionModel m(d, Backend::suffstat);
    Vector q(m.dim(), 0.1), g(m.dim());
    double best = std::numeric_limits<double>::infinity();
    volatile double sink = 0;
    for (int round = 0; round < 5; ++round) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < 10000; ++i) {
        q[0] = 1e-6 * i;
        sink = sink + m.log_density_grad(q, g);
      }
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double small = time_evals(100), large = time_evals(10000);
  EXPECT_LE(large, 1.2 * small) << "n=1e2: " << small << " s, n=1e4: " << large << " s";
}

TEST(Models, LayoutsAndNames) {
  const Dataset d = sim_regression({ModelKind::regression, 100, 10, 0, 0, 1});
  const RegressionModel m(d, Backend::suffstat);
  const auto names = m.param_names();
  ASSERT_EQ(names.size(), 11u);
  EXPECT_EQ(names.front(), "b[1]");
  EXPECT_EQ(names[9], "b[10]");
  EXPECT_EQ(names.back(), "sigma");

  const Dataset md = sim_mixed({ModelKind::mixed, 100, 5, 5, 0, 1});
  EXPECT_EQ(MixedModel(md, Backend::naive).dim(), 5u + 2u + 5u);
  const Matrix Y = sim_factor({ModelKind::factor, 100, 10, 0, 3, 1});
  EXPECT_EQ(FactorModel(Y, 3, Backend::suffstat).dim(), 24u + 3u + 10u + 4u);

  Vector q(m.dim(), 0.0), c(m.dim());
  q.back() = std::log(2.5);
  m.constrain(q, c);
  EXPECT_NEAR(c.back(), 2.5, 1e-15);
  EXPECT_NEAR(m.layout().unconstrain(c).back(), q.back(), 1e-15);

  EXPECT_THROW(RegressionModel(d, Backend::suffstat_woodbury), ConfigError);
  EXPECT_THROW(make_model(ModelKind::factor, Backend::suffstat, d), ConfigError);
  EXPECT_THROW(FactorModel(build_factor_stats(Y), 3, Backend::naive), ConfigError);
  EXPECT_THROW(FactorModel(Y, 11, Backend::suffstat), ConfigError);
  EXPECT_THROW(logdensity_grad(m, Vector(3, 0.0)), DimMismatch);
}

TEST(Models, Deterministic) {
  for (auto& c : model_cases()) {
    Philox rng(8);
    const Vector q = random_point(*c.suff, rng);
    const auto a = logdensity_grad(*c.suff, q), b = logdensity_grad(*c.suff, q);
    EXPECT_EQ(a.lp, b.lp);
    EXPECT_EQ(a.grad, b.grad);
  }
}
