#pragma once

// Synthetic data for the four benchmark designs. Every generator draws from
// Philox stream 0 of the given seed, so a (spec, seed) pair fixes the data
// bit for bit.

#include <cmath>
#include <cstddef>
#include <optional>

#include "ssmc/dataset.hpp"
#include "ssmc/error.hpp"
#include "ssmc/linalg.hpp"
#include "ssmc/models.hpp"
#include "ssmc/rng.hpp"

namespace ssmc {

struct SimSpec {
  ModelKind model = ModelKind::regression;
  std::size_t n = 100;
  std::size_t p = 0;  // 0: 5 for the mixed model, 10 otherwise
  std::size_t J = 5;
  std::size_t d = 3;
  std::uint64_t seed = 1;
  // User-supplied factor structure for (p, d) outside the built-in tables.
  std::optional<Matrix> Lambda;
  std::optional<Vector> psi;

  std::size_t dim() const noexcept {
    if (p != 0) return p;
    return model == ModelKind::mixed ? 5 : 10;
  }
};

/// (1.5, 2, 2.5, 0, ..., 0)
inline Vector true_beta(std::size_t p) {
  if (p < 3) throw ConfigError("simulation designs need p >= 3");
  Vector b(p, 0.0);
  b[0] = 1.5;
  b[1] = 2.0;
  b[2] = 2.5;
  return b;
}

struct FactorScenario {
  Matrix Lambda;
  Vector psi;
};

/// Built-in loadings and uniquenesses for (p, d) = (10, 3) or (20, 5).
inline FactorScenario factor_scenario(std::size_t p, std::size_t d) {
  if (p == 10 && d == 3)
    return {Matrix{{0.99, 0.00, 0.00},
                   {0.00, 0.90, 0.00},
                   {0.25, 0.25, 0.85},
                   {0.00, 0.40, 0.80},
                   {0.80, 0.00, 0.00},
                   {0.00, 0.50, 0.75},
                   {0.50, 0.00, 0.75},
                   {0.00, 0.00, 0.00},
                   {0.00, -0.30, 0.80},
                   {0.00, -0.30, 0.80}},
            {0.2079, 0.19, 0.1525, 0.20, 0.36, 0.1875, 0.1875, 1.00, 0.27, 0.27}};
  if (p == 20 && d == 5)
    return {Matrix{{-1.33, 0.00, 0.00, 0.00, 0.00},
                   {-1.22, -0.43, 0.00, 0.00, 0.00},
                   {0.66, -1.21, 0.34, 0.00, 0.00},
                   {-0.15, 0.02, 0.04, -0.27, 0.00},
                   {-0.89, 0.10, -1.50, 0.29, -0.24},
                   {-0.09, -0.18, 0.14, 0.38, 0.33},
                   {0.61, 0.38, -0.18, 0.23, 0.70},
                   {0.95, -0.36, 0.09, -0.44, -0.56},
                   {-0.22, -0.68, 0.29, -0.55, -0.43},
                   {-0.13, 0.22, 0.70, 0.76, -0.57},
                   {-0.88, -0.41, -0.36, 0.13, -0.73},
                   {0.23, 0.72, 0.65, 0.04, 0.04},
                   {-0.32, -0.22, 0.17, -0.06, 0.33},
                   {0.23, 0.33, 0.52, -0.60, 0.60},
                   {0.35, 0.16, 0.46, 0.31, 0.52},
                   {0.52, -0.39, 0.36, -0.11, -0.50},
                   {-0.30, 0.79, -0.52, -0.09, 0.92},
                   {0.25, 0.32, -0.05, 0.47, -0.33},
                   {-0.86, 0.04, 0.31, 0.41, 0.05},
                   {-0.39, 0.14, -0.48, 0.70, -0.21}},
            {0.198, 0.661, 0.283, 0.038, 0.473, 1.464, 0.314, 0.410, 1.192, 0.715,
             1.345, 2.409, 0.096, 0.057, 1.254, 0.310, 0.475, 0.622, 1.246, 0.370}};
  throw UnknownScenario("no built-in factor scenario for p=" + std::to_string(p) +
                        ", d=" + std::to_string(d) + "; supply Lambda and psi");
}

/// X_ij ~ N(0,1), y = Xβ + ε, ε ~ N(0,1).
inline Dataset sim_regression(const SimSpec& spec) {
  const std::size_t n = spec.n, p = spec.dim();
  const Vector beta = true_beta(p);
  Philox rng(spec.seed, 0);
  Dataset d;
  d.X = Matrix(n, p);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = d.X.row(i);
    for (auto& v : x) v = rng.normal();
    d.y[i] = dot(x, beta) + rng.normal();
  }
  return d;
}

/// Labels uniform on 1..J, u_j ~ N(0,1), y = xᵀβ + u_group + ε.
inline Dataset sim_mixed(const SimSpec& spec) {
  const std::size_t n = spec.n, p = spec.dim(), J = spec.J;
  if (J < 1) throw ConfigError("mixed simulation needs J >= 1");
  const Vector beta = true_beta(p);
  Philox rng(spec.seed, 0);
  Vector u(J);
  for (auto& v : u) v = rng.normal();
  Dataset d;
  d.X = Matrix(n, p);
  d.y.resize(n);
  d.group.emplace(n);
  d.n_groups = static_cast<int>(J);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = static_cast<std::size_t>(rng.below(J));
    (*d.group)[i] = static_cast<int>(g + 1);
    auto x = d.X.row(i);
    for (auto& v : x) v = rng.normal();
    d.y[i] = dot(x, beta) + u[g] + rng.normal();
  }
  return d;
}

/// Rows y = Λf + ψ^{1/2}⊙e with f ~ N_d(0,I), e ~ N_p(0,I).
inline Matrix sim_factor(const SimSpec& spec) {
  const std::size_t p = spec.dim(), d = spec.d;
  FactorScenario sc;
  if (spec.Lambda && spec.psi) {
    sc = {*spec.Lambda, *spec.psi};
    if (sc.Lambda.rows() != sc.psi.size() || sc.Lambda.cols() == 0)
      throw DimMismatch("Lambda rows must match length of psi");
  } else {
    sc = factor_scenario(p, d);
  }
  const std::size_t P = sc.Lambda.rows(), K = sc.Lambda.cols();
  Vector sd(P);
  for (std::size_t j = 0; j < P; ++j) {
    if (!(sc.psi[j] > 0.0)) throw ConfigError("psi must be positive");
    sd[j] = std::sqrt(sc.psi[j]);
  }
  Philox rng(spec.seed, 0);
  Matrix Y(spec.n, P);
  Vector f(K);
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (auto& v : f) v = rng.normal();
    auto y = Y.row(i);
    for (std::size_t j = 0; j < P; ++j) y[j] = dot(sc.Lambda.row(j), f) + sd[j] * rng.normal();
  }
  return Y;
}

inline constexpr double kMaxSimRate = 1e15;

/// X_ij ~ N(0, sd 0.5), y_i ~ Poisson(exp(x_iᵀβ)). A row whose rate exceeds
/// 1e15 is redrawn; the number of redraws is written to `resampled`.
inline Dataset sim_poisson(const SimSpec& spec, std::size_t* resampled = nullptr) {
  const std::size_t n = spec.n, p = spec.dim();
  const Vector beta = true_beta(p);
  Philox rng(spec.seed, 0);
  Dataset d;
  d.X = Matrix(n, p);
  d.y.resize(n);
  std::size_t redraws = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = d.X.row(i);
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw RateOverflow("could not draw a row with rate <= 1e15");
      for (auto& v : x) v = 0.5 * rng.normal();
      const double rate = std::exp(dot(x, beta));
      if (rate <= kMaxSimRate) {
        d.y[i] = rng.poisson(rate);
        break;
      }
      ++redraws;
    }
  }
  if (resampled) *resampled = redraws;
  return d;
}

/// Tabular data for regression, mixed and Poisson designs.
inline Dataset simulate_dataset(const SimSpec& spec) {
  switch (spec.model) {
    case ModelKind::regression: return sim_regression(spec);
    case ModelKind::mixed: return sim_mixed(spec);
    case ModelKind::poisson: return sim_poisson(spec);
    case ModelKind::factor: break;
  }
  throw ConfigError("factor data is a matrix; use sim_factor");
}

}  // namespace ssmc
