#pragma once

// One-pass reductions of a Dataset to the statistics each model's
// likelihood needs. All builders cost O(n·p²) once; the resulting objects
// are immutable inputs to the SUFFSTAT likelihood backends.

#include <cstddef>
#include <vector>

#include "ssmc/dataset.hpp"
#include "ssmc/error.hpp"
#include "ssmc/linalg.hpp"

namespace ssmc {

struct RegressionStats {
  std::size_t n = 0;
  double Syy = 0.0;  // yᵀy
  Vector Syx;        // yᵀX
  SymMatrix Sxx;     // XᵀX

  std::size_t p() const noexcept { return Syx.size(); }
};

struct MixedStats {
  RegressionStats base;
  Vector u_count;   // observations per group
  Vector u_sumY;    // Σ y within each group
  Matrix u_sumX;    // J×p, Σ x within each group
  std::vector<int> empty_groups;  // 1-based labels with no observations

  std::size_t n_groups() const noexcept { return u_count.size(); }
};

struct FactorStats {
  std::size_t n = 0;
  SymMatrix Sbar;  // YᵀY / n

  std::size_t p() const noexcept { return Sbar.rows(); }
};

/// Σ exp(x_iᵀβ) has no n-free form, so the design matrix stays.
struct PoissonStats {
  std::size_t n = 0;
  Vector Syx;  // Xᵀy
  Matrix X;
};

inline RegressionStats build_regression_stats(const Dataset& d) {
  if (d.n() == 0) throw EmptyData();
  if (d.X.rows() != d.n()) throw DimMismatch("X row count differs from length of y");
  RegressionStats s;
  s.n = d.n();
  s.Syx.assign(d.p(), 0.0);
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double yi = d.y[i];
    s.Syy += yi * yi;
    const auto x = d.X.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) s.Syx[j] += yi * x[j];
  }
  s.Sxx = crossprod(d.X);
  return s;
}

inline MixedStats build_mixed_stats(const Dataset& d) {
  if (!d.group) throw BadGroupIndex("mixed model needs a group vector");
  d.validate();
  MixedStats s;
  s.base = build_regression_stats(d);
  const auto J = static_cast<std::size_t>(d.n_groups);
  const std::size_t p = d.p();
  s.u_count.assign(J, 0.0);
  s.u_sumY.assign(J, 0.0);
  s.u_sumX = Matrix(J, p);
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto g = static_cast<std::size_t>((*d.group)[i] - 1);
    s.u_count[g] += 1.0;
    s.u_sumY[g] += d.y[i];
    auto sx = s.u_sumX.row(g);
    const auto x = d.X.row(i);
    for (std::size_t j = 0; j < p; ++j) sx[j] += x[j];
  }
  for (std::size_t g = 0; g < J; ++g)
    if (s.u_count[g] == 0.0) s.empty_groups.push_back(static_cast<int>(g + 1));
  return s;
}

inline FactorStats build_factor_stats(const Matrix& Y) {
  if (Y.rows() == 0) throw EmptyData();
  FactorStats s;
  s.n = Y.rows();
  s.Sbar = crossprod(Y);
  const double inv_n = 1.0 / static_cast<double>(s.n);
  for (double& v : s.Sbar.data()) v *= inv_n;
  return s;
}

inline PoissonStats build_poisson_stats(const Dataset& d) {
  if (d.n() == 0) throw EmptyData();
  if (d.X.rows() != d.n()) throw DimMismatch("X row count differs from length of y");
  for (double v : d.y)
    if (v < 0.0) throw NegativeCount("Poisson response must be nonnegative");
  PoissonStats s;
  s.n = d.n();
  s.Syx = matvec_t(d.X, d.y);
  s.X = d.X;
  return s;
}

// Statistics of a row-concatenated dataset, from the parts.

inline RegressionStats combine(const RegressionStats& a, const RegressionStats& b) {
  if (a.p() != b.p()) throw DimMismatch("combine: different p");
  RegressionStats s = a;
  s.n += b.n;
  s.Syy += b.Syy;
  for (std::size_t j = 0; j < s.p(); ++j) s.Syx[j] += b.Syx[j];
  for (std::size_t k = 0; k < s.Sxx.data().size(); ++k) s.Sxx.data()[k] += b.Sxx.data()[k];
  return s;
}

inline MixedStats combine(const MixedStats& a, const MixedStats& b) {
  if (a.n_groups() != b.n_groups()) throw DimMismatch("combine: different J");
  MixedStats s = a;
  s.base = combine(a.base, b.base);
  for (std::size_t g = 0; g < s.n_groups(); ++g) {
    s.u_count[g] += b.u_count[g];
    s.u_sumY[g] += b.u_sumY[g];
  }
  for (std::size_t k = 0; k < s.u_sumX.data().size(); ++k)
    s.u_sumX.data()[k] += b.u_sumX.data()[k];
  s.empty_groups.clear();
  for (std::size_t g = 0; g < s.n_groups(); ++g)
    if (s.u_count[g] == 0.0) s.empty_groups.push_back(static_cast<int>(g + 1));
  return s;
}

inline FactorStats combine(const FactorStats& a, const FactorStats& b) {
  if (a.p() != b.p()) throw DimMismatch("combine: different p");
  FactorStats s;
  s.n = a.n + b.n;
  s.Sbar = Matrix(a.p(), a.p());
  const double na = static_cast<double>(a.n), nb = static_cast<double>(b.n);
  for (std::size_t k = 0; k < s.Sbar.data().size(); ++k)
    s.Sbar.data()[k] = (na * a.Sbar.data()[k] + nb * b.Sbar.data()[k]) / (na + nb);
  return s;
}

}  // namespace ssmc
