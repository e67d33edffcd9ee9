#pragma once

// Dense kernels for the model likelihoods. Storage is row-major throughout;
// every function is a pure function of its arguments.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ssmc/error.hpp"

namespace ssmc {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  /// Row-wise literal, e.g. `Matrix{{4, 2}, {2, 3}}`.
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimMismatch("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// A square matrix expected to be symmetric. Symmetry is a documented
/// precondition rather than a type-level guarantee.
using SymMatrix = Matrix;

/// Lower-triangular Cholesky factor with a strictly positive diagonal.
/// Only `cholesky` constructs one.
class LowerTriFactor {
 public:
  std::size_t dim() const noexcept { return L_.rows(); }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return L_(i, j);
  }
  const Matrix& matrix() const noexcept { return L_; }

 private:
  explicit LowerTriFactor(Matrix L) : L_(std::move(L)) {}
  friend LowerTriFactor cholesky(const SymMatrix& A);
  Matrix L_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void require_square(const Matrix& A, const char* what) {
  if (!A.square()) throw DimMismatch(std::string(what) + ": matrix not square");
}

/// A·x
inline Vector matvec(const Matrix& A, std::span<const double> x) {
  if (A.cols() != x.size()) throw DimMismatch("matvec: size mismatch");
  Vector out(A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i) out[i] = dot(A.row(i), x);
  return out;
}

/// Aᵀ·x
inline Vector matvec_t(const Matrix& A, std::span<const double> x) {
  if (A.rows() != x.size()) throw DimMismatch("matvec_t: size mismatch");
  Vector out(A.cols(), 0.0);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const auto r = A.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += xi * r[j];
  }
  return out;
}

inline Matrix matmul(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.rows()) throw DimMismatch("matmul: inner dimension");
  Matrix C(A.rows(), B.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto c = C.row(i);
    for (std::size_t k = 0; k < A.cols(); ++k) {
      const double a = A(i, k);
      if (a == 0.0) continue;
      const auto b = B.row(k);
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += a * b[j];
    }
  }
  return C;
}

inline Matrix transpose(const Matrix& A) {
  Matrix T(A.cols(), A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) T(j, i) = A(i, j);
  return T;
}

/// XᵀX, exactly symmetric.
inline SymMatrix crossprod(const Matrix& X) {
  const std::size_t p = X.cols();
  SymMatrix S(p, p);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto x = X.row(r);
    for (std::size_t i = 0; i < p; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      for (std::size_t j = i; j < p; ++j) S(i, j) += xi * x[j];
    }
  }
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j) S(i, j) = S(j, i);
  return S;
}

/// Σ_ij A_ij B_ji without forming the product.
inline double trace_prod(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.cols() || A.cols() != B.rows())
    throw DimMismatch("trace_prod: incompatible shapes");
  double s = 0.0;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) s += A(i, j) * B(j, i);
  return s;
}

/// Throws NotPositiveDefinite when any pivot is ≤ 1e-300 (or not finite).
inline LowerTriFactor cholesky(const SymMatrix& A) {
  require_square(A, "cholesky");
  const std::size_t n = A.rows();
  Matrix L(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = A(j, j);
    const auto lj = L.row(j);
    for (std::size_t k = 0; k < j; ++k) d -= lj[k] * lj[k];
    if (!(d > 1e-300) || !std::isfinite(d)) throw NotPositiveDefinite();
    const double ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      const auto li = L.row(i);
      double s = A(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      L(i, j) = s / ljj;
    }
  }
  return LowerTriFactor(std::move(L));
}

inline double logdet(const LowerTriFactor& L) {
  double s = 0.0;
  for (std::size_t i = 0; i < L.dim(); ++i) s += std::log(L(i, i));
  return 2.0 * s;
}

inline double logdet_spd(const SymMatrix& A) { return logdet(cholesky(A)); }

/// Solves L·x = b in place.
inline void forward_solve(const LowerTriFactor& L, std::span<double> b) {
  const std::size_t n = L.dim();
  for (std::size_t i = 0; i < n; ++i) {
    const auto li = L.matrix().row(i);
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
    b[i] = s / li[i];
  }
}

/// Solves Lᵀ·x = b in place.
inline void backward_solve(const LowerTriFactor& L, std::span<double> b) {
  const std::size_t n = L.dim();
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii] / L(ii, ii);
    b[ii] = s;
    const auto li = L.matrix().row(ii);
    for (std::size_t k = 0; k < ii; ++k) b[k] -= li[k] * s;
  }
}

inline Vector cholesky_solve(const LowerTriFactor& L, std::span<const double> b) {
  if (b.size() != L.dim()) throw DimMismatch("cholesky_solve: size mismatch");
  Vector x(b.begin(), b.end());
  forward_solve(L, x);
  backward_solve(L, x);
  return x;
}

inline SymMatrix inverse_from_cholesky(const LowerTriFactor& L) {
  const std::size_t n = L.dim();
  // inv(L) column by column, then A⁻¹ = inv(L)ᵀ inv(L).
  Matrix Linv(n, n);
  Vector e(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    forward_solve(L, e);
    for (std::size_t i = j; i < n; ++i) Linv(i, j) = e[i];
  }
  SymMatrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = j; k < n; ++k) s += Linv(k, i) * Linv(k, j);
      inv(i, j) = s;
      inv(j, i) = s;
    }
  }
  return inv;
}

inline SymMatrix inverse_spd(const SymMatrix& A) {
  return inverse_from_cholesky(cholesky(A));
}

/// Precision of ΛΛᵀ + diag(ψ) in the low-rank form Ω = diag(inv_psi) − U·Uᵀ,
/// with U = Ψ⁻¹Λ·C⁻ᵀ and C the Cholesky factor of the d×d capacitance
/// I + ΛᵀΨ⁻¹Λ.
struct WoodburyPrecision {
  Vector inv_psi;            // p
  Matrix U;                  // p×d
  double logdet_capacitance; // log|I + ΛᵀΨ⁻¹Λ|

  std::size_t dim() const noexcept { return inv_psi.size(); }
  std::size_t rank() const noexcept { return U.cols(); }

  /// log|Ω| by the matrix determinant lemma.
  double logdet_omega() const {
    double s = -logdet_capacitance;
    for (double v : inv_psi) s += std::log(v);
    return s;
  }

  SymMatrix dense() const {
    const std::size_t p = dim();
    SymMatrix Om(p, p);
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = i; j < p; ++j) {
        double v = -dot(U.row(i), U.row(j));
        if (i == j) v += inv_psi[i];
        Om(i, j) = v;
        Om(j, i) = v;
      }
    }
    return Om;
  }
};

inline WoodburyPrecision woodbury_precision(std::span<const double> psi,
                                            const Matrix& Lambda) {
  const std::size_t p = psi.size();
  const std::size_t d = Lambda.cols();
  if (Lambda.rows() != p) throw DimMismatch("woodbury: Lambda rows != len(psi)");
  if (d > p) throw DimMismatch("woodbury: more factors than dimensions");
  WoodburyPrecision w;
  w.inv_psi.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    if (!(psi[i] > 0.0)) throw NotPositiveDefinite();
    w.inv_psi[i] = 1.0 / psi[i];
  }
  // B = I + ΛᵀΨ⁻¹Λ
  SymMatrix B = Matrix::identity(d);
  for (std::size_t r = 0; r < p; ++r) {
    const auto l = Lambda.row(r);
    const double s = w.inv_psi[r];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) B(i, j) += s * l[i] * l[j];
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) B(i, j) = B(j, i);
  const LowerTriFactor C = cholesky(B);
  w.logdet_capacitance = logdet(C);
  // Rows of U solve C·u_r = ψ_r⁻¹ λ_r.
  w.U = Matrix(p, d);
  for (std::size_t r = 0; r < p; ++r) {
    auto u = w.U.row(r);
    const auto l = Lambda.row(r);
    for (std::size_t k = 0; k < d; ++k) u[k] = w.inv_psi[r] * l[k];
    forward_solve(C, u);
  }
  return w;
}

/// Ω = Ψ⁻¹ − Ψ⁻¹Λ(I_d + ΛᵀΨ⁻¹Λ)⁻¹ΛᵀΨ⁻¹ with only a d×d factorization.
inline SymMatrix woodbury_inverse(std::span<const double> psi, const Matrix& Lambda) {
  return woodbury_precision(psi, Lambda).dense();
}

/// log|Ω| = −Σ log ψ − log|I_d + ΛᵀΨ⁻¹Λ|
inline double woodbury_logdet_omega(std::span<const double> psi, const Matrix& Lambda) {
  return woodbury_precision(psi, Lambda).logdet_omega();
}

}  // namespace ssmc
