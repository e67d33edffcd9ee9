#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "test_util.hpp"

using namespace ssmc;
using ssmc::testing::max_abs_diff;
using ssmc::testing::random_matrix;
using ssmc::testing::random_spd;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& A) {
  Eigen::MatrixXd E(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) E(i, j) = A(i, j);
  return E;
}

double max_abs_diff(const Matrix& A, const Eigen::MatrixXd& E) {
  double m = 0.0;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) m = std::max(m, std::fabs(A(i, j) - E(i, j)));
  return m;
}

}  // namespace

TEST(Linalg, MatmulMatchesEigen) {
  Philox rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto r = 1 + rng.below(8), k = 1 + rng.below(8), c = 1 + rng.below(8);
    const Matrix A = random_matrix(rng, r, k), B = random_matrix(rng, k, c);
    EXPECT_LT(max_abs_diff(matmul(A, B), to_eigen(A) * to_eigen(B)), 1e-12);
    EXPECT_EQ(max_abs_diff(transpose(A), to_eigen(A).transpose()), 0.0);
    EXPECT_LT(max_abs_diff(crossprod(A), to_eigen(A).transpose() * to_eigen(A)), 1e-12);
  }
}

TEST(Linalg, CrossprodIsExactlySymmetric) {
  Philox rng(2);
  const Matrix X = random_matrix(rng, 50, 7);
  const SymMatrix S = crossprod(X);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(S(i, j), S(j, i));
}

TEST(Linalg, CholeskyReconstructsAndMatchesEigen) {
  Philox rng(3);
  for (std::size_t n : {1, 2, 5, 17}) {
    const SymMatrix A = random_spd(rng, n);
    const LowerTriFactor L = cholesky(A);
    const Matrix LLt = matmul(L.matrix(), transpose(L.matrix()));
    EXPECT_LT(max_abs_diff(LLt, A), 1e-10 * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) EXPECT_EQ(L(i, j), 0.0);
    const Eigen::LLT<Eigen::MatrixXd> llt(to_eigen(A));
    EXPECT_LT(max_abs_diff(L.matrix(), Eigen::MatrixXd(llt.matrixL())), 1e-10);
  }
}

TEST(Linalg, CholeskyOfIdentityIsIdentity) {
  const LowerTriFactor L = cholesky(Matrix::identity(4));
  EXPECT_EQ(L.matrix(), Matrix::identity(4));
}

TEST(Linalg, CholeskySmallExample) {
  // [[4,2],[2,3]] = L Lᵀ with L = [[2,0],[1,√2]]
  const LowerTriFactor L = cholesky(Matrix{{4, 2}, {2, 3}});
  EXPECT_DOUBLE_EQ(L(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(L(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(L(1, 1), std::sqrt(2.0));
}

TEST(Linalg, CholeskyRejectsIndefiniteAndSingular) {
  EXPECT_THROW(cholesky(Matrix{{1, 2}, {2, 1}}), NotPositiveDefinite);
  EXPECT_THROW(cholesky(Matrix{{1, 1}, {1, 1}}), NotPositiveDefinite);
  EXPECT_THROW(cholesky(Matrix{{-1}}), NotPositiveDefinite);
  EXPECT_THROW(cholesky(Matrix(2, 3)), DimMismatch);
}

TEST(Linalg, LogdetMatchesEigen) {
  Philox rng(4);
  for (std::size_t n : {1, 3, 10, 25}) {
    const SymMatrix A = random_spd(rng, n);
    const double ref = std::log(to_eigen(A).determinant());
    EXPECT_NEAR(logdet_spd(A), ref, 1e-9 * std::max(1.0, std::fabs(ref)));
  }
  EXPECT_NEAR(logdet_spd(Matrix{{2, 0}, {0, 8}}), std::log(16.0), 1e-15);
}

TEST(Linalg, SolvesAndInverseMatchEigen) {
  Philox rng(5);
  for (std::size_t n : {1, 4, 12}) {
    const SymMatrix A = random_spd(rng, n);
    const Eigen::MatrixXd EA = to_eigen(A);
    Vector b(n);
    for (double& v : b) v = rng.normal();
    const Vector x = cholesky_solve(cholesky(A), b);
    const Eigen::VectorXd ex = EA.llt().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), n));
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(x[i], ex[i], 1e-10);
    EXPECT_LT(max_abs_diff(inverse_spd(A), EA.inverse()), 1e-10);
  }
}

TEST(Linalg, TraceProdEqualsTraceOfProduct) {
  Philox rng(6);
  const Matrix A = random_matrix(rng, 4, 6), B = random_matrix(rng, 6, 4);
  EXPECT_NEAR(trace_prod(A, B), (to_eigen(A) * to_eigen(B)).trace(), 1e-12);
  EXPECT_THROW(trace_prod(A, A), DimMismatch);
}

TEST(Linalg, WoodburyMatchesDirectInverse) {
  Philox rng(7);
  for (int t = 0; t < 100; ++t) {
    const std::size_t p = 1 + rng.below(30);
    const std::size_t d = 1 + rng.below(std::min<std::size_t>(p, 8));
    const Matrix L = random_matrix(rng, p, d);
    Vector psi(p);
    for (double& v : psi) v = rng.uniform(0.1, 2.0);
    Matrix Q = matmul(L, transpose(L));
    for (std::size_t i = 0; i < p; ++i) Q(i, i) += psi[i];
    const Eigen::MatrixXd EQ = to_eigen(Q);
    EXPECT_LT(max_abs_diff(woodbury_inverse(psi, L), EQ.inverse()), 1e-8) << "p=" << p;
    EXPECT_NEAR(woodbury_logdet_omega(psi, L), -std::log(EQ.determinant()), 1e-8);
  }
}

TEST(Linalg, WoodburyWithZeroLoadingsIsDiagonal) {
  const Vector psi{0.5, 2.0, 4.0};
  const SymMatrix Om = woodbury_inverse(psi, Matrix(3, 2));
  EXPECT_EQ(Om, Matrix::diagonal(Vector{2.0, 0.5, 0.25}));
  EXPECT_NEAR(woodbury_logdet_omega(psi, Matrix(3, 2)), -std::log(4.0), 1e-15);
}

TEST(Linalg, WoodburyPreconditions) {
  EXPECT_THROW(woodbury_inverse(Vector{1.0, 0.0}, Matrix(2, 1)), NotPositiveDefinite);
  EXPECT_THROW(woodbury_inverse(Vector{1.0, 1.0}, Matrix(3, 1)), DimMismatch);
  EXPECT_THROW(woodbury_inverse(Vector{1.0}, Matrix(1, 2)), DimMismatch);
}

TEST(Linalg, SpecExamples) {
  EXPECT_EQ(logdet_spd(Matrix::identity(5)), 0.0);
  EXPECT_NEAR(logdet_spd(Matrix::diagonal(Vector{2, 3})), std::log(6.0), 1e-15);
  EXPECT_EQ(trace_prod(Matrix::identity(4), Matrix::identity(4)), 4.0);
  EXPECT_EQ(trace_prod(Matrix::diagonal(Vector{1, 2}), Matrix::diagonal(Vector{3, 4})), 11.0);
  const SymMatrix Om = woodbury_inverse(Vector{1.0}, Matrix{{1.0}});
  EXPECT_NEAR(Om(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(woodbury_logdet_omega(Vector{1.0}, Matrix{{1.0}}), std::log(0.5), 1e-15);
  EXPECT_EQ(woodbury_logdet_omega(Vector(4, 1.0), Matrix(4, 2)), 0.0);
}

TEST(Linalg, LogdetMatchesEigenvalues) {
  Philox rng(8);
  const SymMatrix A = random_spd(rng, 6);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(A));
  EXPECT_NEAR(logdet_spd(A), es.eigenvalues().array().log().sum(), 1e-9);
}

TEST(LinalgProperty, CholeskyReconstructionUpToDim50) {
  Philox rng(9);
  for (std::size_t n = 1; n <= 50; ++n) {
    const SymMatrix A = random_spd(rng, n);
    const LowerTriFactor L = cholesky(A);
    const Matrix R = matmul(L.matrix(), transpose(L.matrix()));
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < A.data().size(); ++k) {
      num += std::pow(R.data()[k] - A.data()[k], 2);
      den += std::pow(A.data()[k], 2);
    }
    EXPECT_LE(std::sqrt(num / den), 1e-10) << "n=" << n;
  }
}

TEST(LinalgProperty, WoodburyLogdetMatchesCholesky) {
  Philox rng(10);
  for (int t = 0; t < 100; ++t) {
    const std::size_t p = 1 + rng.below(30);
    const std::size_t d = 1 + rng.below(std::min<std::size_t>(p, 8));
    const Matrix L = random_matrix(rng, p, d);
    Vector psi(p);
    for (double& v : psi) v = rng.uniform(0.1, 2.0);
    Matrix Q = matmul(L, transpose(L));
    for (std::size_t i = 0; i < p; ++i) Q(i, i) += psi[i];
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < i; ++j) Q(i, j) = Q(j, i);
    EXPECT_NEAR(woodbury_logdet_omega(psi, L), -logdet_spd(Q), 1e-8);
    EXPECT_LT(max_abs_diff(woodbury_inverse(psi, L), inverse_spd(Q)), 1e-8);
  }
}

TEST(LinalgProperty, TraceProdCommutes) {
  Philox rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto n = 1 + rng.below(10), m = 1 + rng.below(10);
    const Matrix A = random_matrix(rng, n, m), B = random_matrix(rng, m, n);
    const double ab = trace_prod(A, B), ba = trace_prod(B, A);
    EXPECT_LE(std::fabs(ab - ba), 1e-12 * std::max(1.0, std::fabs(ab)));
  }
}
