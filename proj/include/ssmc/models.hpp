#pragma once

// The four posterior targets. Each exposes the joint log-density (up to an
// additive constant) and its exact gradient in unconstrained coordinates.
// The likelihood backend is chosen at construction:
//
//   naive              per-observation densities, O(n) per evaluation
//   suffstat           precomputed sufficient statistics
//   suffstat_woodbury  factor model only: statistics plus a d×d Woodbury solve
//
// Backends of one model differ by a parameter-independent constant.

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssmc/dataset.hpp"
#include "ssmc/error.hpp"
#include "ssmc/linalg.hpp"
#include "ssmc/priors.hpp"
#include "ssmc/suffstats.hpp"

namespace ssmc {

enum class Backend { naive, suffstat, suffstat_woodbury };
enum class ModelKind { regression, mixed, factor, poisson };

inline std::string_view to_string(Backend b) noexcept {
  switch (b) {
    case Backend::naive: return "naive";
    case Backend::suffstat: return "suffstat";
    case Backend::suffstat_woodbury: return "suffstat_woodbury";
  }
  return "";
}

inline std::string_view to_string(ModelKind m) noexcept {
  switch (m) {
    case ModelKind::regression: return "regression";
    case ModelKind::mixed: return "mixed";
    case ModelKind::factor: return "factor";
    case ModelKind::poisson: return "poisson";
  }
  return "";
}

inline Backend parse_backend(std::string_view s) {
  if (s == "naive") return Backend::naive;
  if (s == "suffstat") return Backend::suffstat;
  if (s == "suffstat_woodbury") return Backend::suffstat_woodbury;
  throw ConfigError("unknown backend '" + std::string(s) + "'");
}

inline ModelKind parse_model(std::string_view s) {
  if (s == "regression") return ModelKind::regression;
  if (s == "mixed") return ModelKind::mixed;
  if (s == "factor") return ModelKind::factor;
  if (s == "poisson") return ModelKind::poisson;
  throw ConfigError("unknown model '" + std::string(s) + "'");
}

struct ParamBlock {
  std::string name;
  std::size_t size;
  Transform transform;
  std::size_t offset;
  bool is_vector;
};

class ParamLayout {
 public:
  /// Vector blocks are always indexed in flat_names, even at size 1.
  std::size_t add(std::string name, std::size_t size, Transform t, bool is_vector = false) {
    for (const auto& b : blocks_)
      if (b.name == name) throw ConfigError("duplicate parameter block '" + name + "'");
    const std::size_t off = dim_;
    blocks_.push_back({std::move(name), size, t, off, is_vector});
    dim_ += size;
    return off;
  }

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }

  const ParamBlock& block(std::string_view name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    throw ConfigError("no parameter block '" + std::string(name) + "'");
  }

  /// Scalar blocks keep their name; vector blocks become name[1], name[2], ...
  std::vector<std::string> flat_names() const {
    std::vector<std::string> out;
    out.reserve(dim_);
    for (const auto& b : blocks_) {
      if (!b.is_vector) {
        out.push_back(b.name);
      } else {
        for (std::size_t k = 1; k <= b.size; ++k)
          out.push_back(b.name + "[" + std::to_string(k) + "]");
      }
    }
    return out;
  }

  void constrain(std::span<const double> q, std::span<double> out) const {
    for (const auto& b : blocks_)
      for (std::size_t k = 0; k < b.size; ++k)
        out[b.offset + k] = transform_forward(b.transform, q[b.offset + k]).value;
  }

  Vector unconstrain(std::span<const double> constrained) const {
    if (constrained.size() != dim_) throw DimMismatch("unconstrain: wrong length");
    Vector q(dim_);
    for (const auto& b : blocks_)
      for (std::size_t k = 0; k < b.size; ++k)
        q[b.offset + k] = transform_inverse(b.transform, constrained[b.offset + k]);
    return q;
  }

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t dim_ = 0;
};

/// An evaluable posterior. Immutable after construction; log_density_grad
/// is reentrant.
class PosteriorModel {
 public:
  virtual ~PosteriorModel() = default;

  virtual std::string_view name() const noexcept = 0;
  virtual Backend backend() const noexcept = 0;
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t dim() const noexcept { return layout_.dim(); }

  /// Returns lp and writes ∂lp/∂q to grad. Degenerate points (failed
  /// factorization, overflow, non-finite values) give −∞ and a zero gradient.
  virtual double log_density_grad(std::span<const double> q, std::span<double> grad) const = 0;

  double log_density(std::span<const double> q) const {
    Vector g(dim());
    return log_density_grad(q, g);
  }

  void constrain(std::span<const double> q, std::span<double> out) const {
    layout_.constrain(q, out);
  }
  std::vector<std::string> param_names() const { return layout_.flat_names(); }

 protected:
  ParamLayout layout_;

  static double reject(std::span<double> grad) noexcept {
    std::fill(grad.begin(), grad.end(), 0.0);
    return -std::numeric_limits<double>::infinity();
  }

  static double finish(double lp, std::span<double> grad) noexcept {
    if (!std::isfinite(lp)) return reject(grad);
    for (double g : grad)
      if (!std::isfinite(g)) return reject(grad);
    return lp;
  }
};

struct LogDensityGrad {
  double lp;
  Vector grad;
};

inline LogDensityGrad logdensity_grad(const PosteriorModel& m, std::span<const double> q) {
  if (q.size() != m.dim()) throw DimMismatch("logdensity_grad: wrong dimension");
  LogDensityGrad r{0.0, Vector(m.dim())};
  r.lp = m.log_density_grad(q, r.grad);
  return r;
}

namespace detail {
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// log-prior of a positive block under the log transform, accumulating the
/// gradient w.r.t. the unconstrained coordinate u = log x.
inline double positive_term(const PriorSpec& prior, double u, double extra_dx, double& grad) {
  const double x = std::exp(u);
  const auto pr = lpdf_grad(prior, x);
  grad = (extra_dx + pr.d_x) * x + 1.0;
  return pr.value + u;
}
}  // namespace detail

// ───────────────────────────── regression ─────────────────────────────

/// −n·log σ − (Syy − 2·Syx·b + bᵀSxx b)/(2σ²)
inline double regression_loglik(const RegressionStats& s, std::span<const double> b,
                                double sigma) {
  const Vector Sb = matvec(s.Sxx, b);
  const double rss = s.Syy - 2.0 * dot(s.Syx, b) + dot(b, Sb);
  return -static_cast<double>(s.n) * std::log(sigma) - rss / (2.0 * sigma * sigma);
}

/// Σ log N(y_i | x_iᵀb, σ), constants included.
inline double regression_loglik_naive(const Dataset& d, std::span<const double> b,
                                      double sigma) {
  const double log_sigma = std::log(sigma);
  double ll = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double z = (d.y[i] - dot(d.X.row(i), b)) / sigma;
    ll += -0.5 * detail::kLog2Pi - log_sigma - 0.5 * z * z;
  }
  return ll;
}

struct RegressionPriors {
  PriorSpec b = PriorSpec::normal(0.0, 10.0);
  PriorSpec sigma = PriorSpec::half_student_t(3.0, 0.0, 3.7);
  /// Pins σ and drops it from the parameter vector.
  std::optional<double> fixed_sigma;
};

class RegressionModel final : public PosteriorModel {
 public:
  RegressionModel(const Dataset& d, Backend backend, RegressionPriors priors = {})
      : backend_(backend), priors_(std::move(priors)) {
    d.validate();
    if (backend == Backend::suffstat_woodbury)
      throw ConfigError("suffstat_woodbury applies to the factor model only");
    if (backend == Backend::naive)
      data_ = d;
    else
      stats_ = build_regression_stats(d);
    init_layout(d.p());
  }

  RegressionModel(RegressionStats stats, RegressionPriors priors = {})
      : backend_(Backend::suffstat), priors_(std::move(priors)), stats_(std::move(stats)) {
    init_layout(stats_.p());
  }

  std::string_view name() const noexcept override { return "regression"; }
  Backend backend() const noexcept override { return backend_; }
  const RegressionStats& stats() const noexcept { return stats_; }

  double log_density_grad(std::span<const double> q, std::span<double> grad) const override {
    const std::size_t p = p_;
    const auto b = q.first(p);
    const bool free_sigma = !priors_.fixed_sigma.has_value();
    const double sigma = free_sigma ? std::exp(q[p]) : *priors_.fixed_sigma;
    const double inv_s2 = 1.0 / (sigma * sigma);
    auto gb = grad.first(p);
    double g_sigma = 0.0;
    double lp = 0.0;

    if (backend_ == Backend::naive) {
      std::fill(gb.begin(), gb.end(), 0.0);
      const double log_sigma = std::log(sigma);
      double sum_r2 = 0.0;
      for (std::size_t i = 0; i < data_.n(); ++i) {
        const auto x = data_.X.row(i);
        const double r = data_.y[i] - dot(x, b);
        const double z = r / sigma;
        lp += -0.5 * detail::kLog2Pi - log_sigma - 0.5 * z * z;
        const double w = r * inv_s2;
        for (std::size_t j = 0; j < p; ++j) gb[j] += w * x[j];
        sum_r2 += r * r;
      }
      g_sigma = -static_cast<double>(data_.n()) / sigma + sum_r2 * inv_s2 / sigma;
    } else {
      const Vector Sb = matvec(stats_.Sxx, b);
      const double rss = stats_.Syy - 2.0 * dot(stats_.Syx, b) + dot(b, Sb);
      const double n = static_cast<double>(stats_.n);
      lp = -n * std::log(sigma) - 0.5 * rss * inv_s2;
      for (std::size_t j = 0; j < p; ++j) gb[j] = (stats_.Syx[j] - Sb[j]) * inv_s2;
      g_sigma = -n / sigma + rss * inv_s2 / sigma;
    }

    for (std::size_t j = 0; j < p; ++j) {
      const auto pr = lpdf_grad(priors_.b, b[j]);
      lp += pr.value;
      gb[j] += pr.d_x;
    }
    if (free_sigma) lp += detail::positive_term(priors_.sigma, q[p], g_sigma, grad[p]);
    return finish(lp, grad);
  }

 private:
  void init_layout(std::size_t p) {
    p_ = p;
    layout_.add("b", p, Transform::identity, true);
    if (!priors_.fixed_sigma) layout_.add("sigma", 1, Transform::log);
  }

  Backend backend_;
  RegressionPriors priors_;
  std::size_t p_ = 0;
  Dataset data_;
  RegressionStats stats_;
};

// ───────────────────────────── mixed effects ─────────────────────────────

/// Likelihood with adjusted statistics, r = sd_u·z:
///   Syy_adj = Syy − 2·rᵀu_sumY + (r⊙r)ᵀu_count,  Syx_adj = Syx − rᵀu_sumX.
inline double mixed_loglik(const MixedStats& s, std::span<const double> b, double sigma,
                           double sd_u, std::span<const double> z) {
  const std::size_t J = s.n_groups();
  const std::size_t p = s.base.p();
  double syy = s.base.Syy;
  Vector syx = s.base.Syx;
  for (std::size_t g = 0; g < J; ++g) {
    const double r = sd_u * z[g];
    syy += -2.0 * r * s.u_sumY[g] + r * r * s.u_count[g];
    const auto sx = s.u_sumX.row(g);
    for (std::size_t j = 0; j < p; ++j) syx[j] -= r * sx[j];
  }
  const Vector Sb = matvec(s.base.Sxx, b);
  const double rss = syy - 2.0 * dot(syx, b) + dot(b, Sb);
  return -static_cast<double>(s.base.n) * std::log(sigma) - rss / (2.0 * sigma * sigma);
}

inline double mixed_loglik_naive(const Dataset& d, std::span<const double> b, double sigma,
                                 double sd_u, std::span<const double> z) {
  const double log_sigma = std::log(sigma);
  double ll = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto g = static_cast<std::size_t>((*d.group)[i] - 1);
    const double e = (d.y[i] - dot(d.X.row(i), b) - sd_u * z[g]) / sigma;
    ll += -0.5 * detail::kLog2Pi - log_sigma - 0.5 * e * e;
  }
  return ll;
}

struct MixedPriors {
  PriorSpec b = PriorSpec::normal(0.0, 10.0);
  PriorSpec sigma = PriorSpec::half_student_t(3.0, 0.0, 2.5);
  PriorSpec sd_u = PriorSpec::half_student_t(3.0, 0.0, 2.5);
};

/// Non-centered random intercepts: z_j ~ N(0,1), u_j = sd_u·z_j.
class MixedModel final : public PosteriorModel {
 public:
  MixedModel(const Dataset& d, Backend backend, MixedPriors priors = {})
      : backend_(backend), priors_(std::move(priors)) {
    if (!d.group) throw BadGroupIndex("mixed model needs a group vector");
    d.validate();
    if (backend == Backend::suffstat_woodbury)
      throw ConfigError("suffstat_woodbury applies to the factor model only");
    if (backend == Backend::naive)
      data_ = d;
    else
      stats_ = build_mixed_stats(d);
    init_layout(d.p(), static_cast<std::size_t>(d.n_groups));
  }

  MixedModel(MixedStats stats, MixedPriors priors = {})
      : backend_(Backend::suffstat), priors_(std::move(priors)), stats_(std::move(stats)) {
    init_layout(stats_.base.p(), stats_.n_groups());
  }

  std::string_view name() const noexcept override { return "mixed"; }
  Backend backend() const noexcept override { return backend_; }
  const MixedStats& stats() const noexcept { return stats_; }

  double log_density_grad(std::span<const double> q, std::span<double> grad) const override {
    const std::size_t p = p_, J = J_;
    const auto b = q.first(p);
    const double sigma = std::exp(q[p]);
    const double sd_u = std::exp(q[p + 1]);
    const auto z = q.subspan(p + 2, J);
    auto gb = grad.first(p);
    auto gz = grad.subspan(p + 2, J);
    const double inv_s2 = 1.0 / (sigma * sigma);

    // ∂ℓ/∂r_j accumulates into gz first, then is chained through r = sd_u·z.
    double lp = 0.0, g_sigma = 0.0;
    std::fill(gb.begin(), gb.end(), 0.0);
    std::fill(gz.begin(), gz.end(), 0.0);

    if (backend_ == Backend::naive) {
      const double log_sigma = std::log(sigma);
      double sum_e2 = 0.0;
      for (std::size_t i = 0; i < data_.n(); ++i) {
        const auto g = static_cast<std::size_t>((*data_.group)[i] - 1);
        const auto x = data_.X.row(i);
        const double e = data_.y[i] - dot(x, b) - sd_u * z[g];
        const double ez = e / sigma;
        lp += -0.5 * detail::kLog2Pi - log_sigma - 0.5 * ez * ez;
        const double w = e * inv_s2;
        for (std::size_t j = 0; j < p; ++j) gb[j] += w * x[j];
        gz[g] += w;
        sum_e2 += e * e;
      }
      g_sigma = -static_cast<double>(data_.n()) / sigma + sum_e2 * inv_s2 / sigma;
    } else {
      const auto& s = stats_;
      double syy = s.base.Syy;
      Vector syx = s.base.Syx;
      for (std::size_t g = 0; g < J; ++g) {
        const double r = sd_u * z[g];
        syy += -2.0 * r * s.u_sumY[g] + r * r * s.u_count[g];
        const auto sx = s.u_sumX.row(g);
        for (std::size_t j = 0; j < p; ++j) syx[j] -= r * sx[j];
      }
      const Vector Sb = matvec(s.base.Sxx, b);
      const double rss = syy - 2.0 * dot(syx, b) + dot(b, Sb);
      const double n = static_cast<double>(s.base.n);
      lp = -n * std::log(sigma) - 0.5 * rss * inv_s2;
      for (std::size_t j = 0; j < p; ++j) gb[j] = (syx[j] - Sb[j]) * inv_s2;
      for (std::size_t g = 0; g < J; ++g) {
        const double r = sd_u * z[g];
        gz[g] = (s.u_sumY[g] - r * s.u_count[g] - dot(s.u_sumX.row(g), b)) * inv_s2;
      }
      g_sigma = -n / sigma + rss * inv_s2 / sigma;
    }

    double g_sd = 0.0;
    for (std::size_t g = 0; g < J; ++g) {
      g_sd += z[g] * gz[g];
      gz[g] *= sd_u;
    }
    for (std::size_t j = 0; j < p; ++j) {
      const auto pr = lpdf_grad(priors_.b, b[j]);
      lp += pr.value;
      gb[j] += pr.d_x;
    }
    for (std::size_t g = 0; g < J; ++g) {
      lp += -0.5 * detail::kLog2Pi - 0.5 * z[g] * z[g];
      gz[g] -= z[g];
    }
    lp += detail::positive_term(priors_.sigma, q[p], g_sigma, grad[p]);
    lp += detail::positive_term(priors_.sd_u, q[p + 1], g_sd, grad[p + 1]);
    return finish(lp, grad);
  }

 private:
  void init_layout(std::size_t p, std::size_t J) {
    p_ = p;
    J_ = J;
    layout_.add("b", p, Transform::identity, true);
    layout_.add("sigma", 1, Transform::log);
    layout_.add("sd_u", 1, Transform::log);
    layout_.add("z", J, Transform::identity, true);
  }

  Backend backend_;
  MixedPriors priors_;
  std::size_t p_ = 0, J_ = 0;
  Dataset data_;
  MixedStats stats_;
};

// ───────────────────────────── factor model ─────────────────────────────

/// Number of free below-diagonal loadings, d(p−d) + d(d−1)/2.
constexpr std::size_t factor_free_loadings(std::size_t p, std::size_t d) noexcept {
  return d * (p - d) + d * (d - 1) / 2;
}

/// p×d lower-triangular loading matrix. Below-diagonal entries are filled
/// column by column from L_t; the diagonal comes from L_d.
inline Matrix assemble_loadings(std::size_t p, std::span<const double> L_t,
                                std::span<const double> L_d) {
  const std::size_t d = L_d.size();
  if (L_t.size() != factor_free_loadings(p, d)) throw DimMismatch("L_t has wrong length");
  Matrix L(p, d);
  std::size_t idx = 0;
  for (std::size_t j = 0; j < d; ++j) {
    L(j, j) = L_d[j];
    for (std::size_t i = j + 1; i < p; ++i) L(i, j) = L_t[idx++];
  }
  return L;
}

/// ΛΛᵀ + diag(ψ)
inline SymMatrix factor_covariance(const Matrix& Lambda, std::span<const double> psi) {
  const std::size_t p = Lambda.rows();
  SymMatrix Q(p, p);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i; j < p; ++j) {
      const double v = dot(Lambda.row(i), Lambda.row(j));
      Q(i, j) = v;
      Q(j, i) = v;
    }
    Q(i, i) += psi[i];
  }
  return Q;
}

struct FactorLoglikGrad {
  double value;
  Matrix d_lambda;  // p×d
  Vector d_psi;     // p
};

namespace detail {

inline Matrix scaled_rows(std::span<const double> s, const Matrix& A) {
  Matrix out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (double& v : out.row(i)) v *= s[i];
  return out;
}

/// Aᵀ·B for row-major A (n×a), B (n×b).
inline Matrix matmul_tn(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows()) throw DimMismatch("matmul_tn: row mismatch");
  Matrix C(A.cols(), B.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    const auto a = A.row(r);
    const auto b = B.row(r);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double ai = a[i];
      auto c = C.row(i);
      for (std::size_t j = 0; j < b.size(); ++j) c[j] += ai * b[j];
    }
  }
  return C;
}

inline void subtract_inplace(Matrix& A, const Matrix& B) {
  for (std::size_t k = 0; k < A.data().size(); ++k) A.data()[k] -= B.data()[k];
}

/// From G = ∂ℓ/∂Σ (symmetric): ∂ℓ/∂Λ = 2GΛ and ∂ℓ/∂ψ = diag G.
inline void covariance_chain(const SymMatrix& G, const Matrix& Lambda, FactorLoglikGrad& out) {
  out.d_lambda = matmul(G, Lambda);
  for (double& v : out.d_lambda.data()) v *= 2.0;
  out.d_psi.resize(G.rows());
  for (std::size_t j = 0; j < G.rows(); ++j) out.d_psi[j] = G(j, j);
}

inline FactorLoglikGrad factor_suffstat_dense(const FactorStats& s, const Matrix& Lambda,
                                              std::span<const double> psi) {
  const double n = static_cast<double>(s.n);
  const double p = static_cast<double>(s.p());
  const LowerTriFactor L = cholesky(factor_covariance(Lambda, psi));
  const SymMatrix Omega = inverse_from_cholesky(L);
  FactorLoglikGrad out;
  out.value = 0.5 * n * (-p * kLog2Pi - logdet(L) - trace_prod(s.Sbar, Omega));
  // G = (n/2)(Ω S̄ Ω − Ω)
  SymMatrix G = matmul(matmul(Omega, s.Sbar), Omega);
  for (std::size_t i = 0; i < G.rows(); ++i)
    for (std::size_t j = 0; j < G.cols(); ++j) G(i, j) = 0.5 * n * (G(i, j) - Omega(i, j));
  covariance_chain(G, Lambda, out);
  return out;
}

/// Same value and gradient as the dense path using Ω = D − UUᵀ; no p×p
/// matrix is formed and every product is O(p²d).
inline FactorLoglikGrad factor_suffstat_woodbury(const FactorStats& s, const Matrix& Lambda,
                                                 std::span<const double> psi) {
  const double n = static_cast<double>(s.n);
  const std::size_t p = s.p();
  const std::size_t d = Lambda.cols();
  const WoodburyPrecision W = woodbury_precision(psi, Lambda);
  const auto& D = W.inv_psi;
  const Matrix& U = W.U;
  const Matrix A = matmul(s.Sbar, U);  // S̄U
  const Matrix K = matmul_tn(U, A);    // UᵀS̄U

  double tr = 0.0;
  for (std::size_t j = 0; j < p; ++j) tr += s.Sbar(j, j) * D[j];
  for (std::size_t k = 0; k < d; ++k) tr -= K(k, k);

  FactorLoglikGrad out;
  out.value = 0.5 * n * (-static_cast<double>(p) * kLog2Pi + W.logdet_omega() - tr);

  // T = ΩΛ = DΛ − U(UᵀΛ)
  Matrix T = scaled_rows(D, Lambda);
  subtract_inplace(T, matmul(U, matmul_tn(U, Lambda)));
  // ΩS̄T = D(S̄T) − U(Uᵀ(S̄T))
  const Matrix ST = matmul(s.Sbar, T);
  Matrix OST = scaled_rows(D, ST);
  subtract_inplace(OST, matmul(U, matmul_tn(U, ST)));
  out.d_lambda = Matrix(p, d);
  for (std::size_t k = 0; k < out.d_lambda.data().size(); ++k)
    out.d_lambda.data()[k] = n * (OST.data()[k] - T.data()[k]);

  // diag(ΩS̄Ω)_j = D_j² S̄_jj − 2 D_j Σ_k A_jk U_jk + u_jᵀ K u_j
  out.d_psi.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    const auto u = U.row(j);
    const auto a = A.row(j);
    double quad = 0.0;
    for (std::size_t k = 0; k < d; ++k) quad += u[k] * dot(K.row(k), u);
    const double osd = D[j] * D[j] * s.Sbar(j, j) - 2.0 * D[j] * dot(a, u) + quad;
    const double om = D[j] - dot(u, u);
    out.d_psi[j] = 0.5 * n * (osd - om);
  }
  return out;
}

/// Σ_i log N_p(y_i | 0, ΛΛᵀ + diag ψ), one observation at a time.
inline FactorLoglikGrad factor_naive(const Matrix& Y, const Matrix& Lambda,
                                     std::span<const double> psi) {
  const std::size_t n = Y.rows(), p = Y.cols();
  const LowerTriFactor L = cholesky(factor_covariance(Lambda, psi));
  const double half_logdet = 0.5 * logdet(L);
  const double obs_const = -0.5 * static_cast<double>(p) * kLog2Pi - half_logdet;
  SymMatrix Wsum(p, p);
  Vector w(p);
  FactorLoglikGrad out{0.0, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = Y.row(i);
    std::copy(y.begin(), y.end(), w.begin());
    forward_solve(L, w);
    out.value += obs_const - 0.5 * dot(w, w);
    backward_solve(L, w);  // w = Σ⁻¹y_i
    for (std::size_t a = 0; a < p; ++a) {
      const double wa = w[a];
      auto row = Wsum.row(a);
      for (std::size_t b = a; b < p; ++b) row[b] += wa * w[b];
    }
  }
  // G = −(n/2)Σ⁻¹ + ½ Σ_i w_i w_iᵀ
  const SymMatrix Omega = inverse_from_cholesky(L);
  SymMatrix G(p, p);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a; b < p; ++b) {
      const double v = -0.5 * static_cast<double>(n) * Omega(a, b) + 0.5 * Wsum(a, b);
      G(a, b) = v;
      G(b, a) = v;
    }
  covariance_chain(G, Lambda, out);
  return out;
}

}  // namespace detail

/// (n/2)(−p·log 2π + log|Ω| − tr(S̄Ω)), Ω = (ΛΛᵀ + diag ψ)⁻¹.
/// Throws NotPositiveDefinite when the covariance (or, for the Woodbury
/// path, the capacitance matrix) cannot be factorized.
inline double factor_loglik(const FactorStats& s, const Matrix& Lambda,
                            std::span<const double> psi, Backend backend) {
  if (Lambda.rows() != s.p() || psi.size() != s.p()) throw DimMismatch("factor_loglik");
  if (backend == Backend::suffstat_woodbury) {
    const WoodburyPrecision W = woodbury_precision(psi, Lambda);
    const SymMatrix Omega = W.dense();
    return 0.5 * static_cast<double>(s.n) *
           (-static_cast<double>(s.p()) * detail::kLog2Pi + W.logdet_omega() -
            trace_prod(s.Sbar, Omega));
  }
  if (backend != Backend::suffstat)
    throw ConfigError("factor_loglik takes a suffstat backend; use factor_loglik_naive");
  const LowerTriFactor L = cholesky(factor_covariance(Lambda, psi));
  const SymMatrix Omega = inverse_from_cholesky(L);
  return 0.5 * static_cast<double>(s.n) *
         (-static_cast<double>(s.p()) * detail::kLog2Pi - logdet(L) -
          trace_prod(s.Sbar, Omega));
}

inline double factor_loglik_naive(const Matrix& Y, const Matrix& Lambda,
                                  std::span<const double> psi) {
  return detail::factor_naive(Y, Lambda, psi).value;
}

struct FactorPriors {
  PriorSpec L_d = PriorSpec::half_cauchy(0.0, 3.0);
  PriorSpec mu_psi = PriorSpec::half_cauchy(0.0, 1.0);
  PriorSpec sigma_psi = PriorSpec::half_cauchy(0.0, 1.0);
  PriorSpec mu_lt = PriorSpec::cauchy(0.0, 1.0);
  PriorSpec sigma_lt = PriorSpec::half_cauchy(0.0, 1.0);
};

/// Marginal factor model y_i ~ N_p(0, ΛΛᵀ + diag ψ) with hierarchical
/// priors L_t ~ Cauchy(mu_lt, sigma_lt) and ψ ~ Half-Cauchy(mu_psi, sigma_psi).
class FactorModel final : public PosteriorModel {
 public:
  FactorModel(const Matrix& Y, std::size_t factors, Backend backend, FactorPriors priors = {})
      : backend_(backend), priors_(std::move(priors)) {
    if (Y.rows() == 0) throw EmptyData();
    if (backend == Backend::naive)
      Y_ = Y;
    else
      stats_ = build_factor_stats(Y);
    init_layout(Y.cols(), factors);
  }

  FactorModel(FactorStats stats, std::size_t factors, Backend backend,
              FactorPriors priors = {})
      : backend_(backend), priors_(std::move(priors)), stats_(std::move(stats)) {
    if (backend == Backend::naive) throw ConfigError("naive factor model needs raw data");
    init_layout(stats_.p(), factors);
  }

  std::string_view name() const noexcept override { return "factor"; }
  Backend backend() const noexcept override { return backend_; }
  std::size_t factors() const noexcept { return d_; }
  std::size_t obs_dim() const noexcept { return p_; }

  Matrix loadings(std::span<const double> q) const {
    Vector Ld(d_);
    for (std::size_t j = 0; j < d_; ++j) Ld[j] = std::exp(q[off_Ld_ + j]);
    return assemble_loadings(p_, q.subspan(0, M_), Ld);
  }

  double log_density_grad(std::span<const double> q, std::span<double> grad) const override {
    const std::size_t p = p_, d = d_, M = M_;
    const auto L_t = q.subspan(0, M);
    Vector psi(p);
    for (std::size_t j = 0; j < p; ++j) psi[j] = std::exp(q[off_psi_ + j]);
    const double u_mu_psi = q[off_psi_ + p], u_sigma_psi = q[off_psi_ + p + 1];
    const double mu_lt = q[off_psi_ + p + 2], u_sigma_lt = q[off_psi_ + p + 3];
    const double mu_psi = std::exp(u_mu_psi), sigma_psi = std::exp(u_sigma_psi);
    const double sigma_lt = std::exp(u_sigma_lt);
    const Matrix Lambda = loadings(q);

    FactorLoglikGrad ll;
    try {
      switch (backend_) {
        case Backend::naive: ll = detail::factor_naive(Y_, Lambda, psi); break;
        case Backend::suffstat: ll = detail::factor_suffstat_dense(stats_, Lambda, psi); break;
        case Backend::suffstat_woodbury:
          ll = detail::factor_suffstat_woodbury(stats_, Lambda, psi);
          break;
      }
    } catch (const NotPositiveDefinite&) {
      return reject(grad);
    }

    double lp = ll.value;
    double g_mu_psi = 0.0, g_sigma_psi = 0.0, g_mu_lt = 0.0, g_sigma_lt = 0.0;

    // Below-diagonal loadings.
    std::size_t idx = 0;
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = j + 1; i < p; ++i, ++idx) {
        const auto pr = lpdf_partials(PriorFamily::cauchy, 0.0, L_t[idx], mu_lt, sigma_lt);
        lp += pr.value;
        grad[idx] = ll.d_lambda(i, j) + pr.d_x;
        g_mu_lt += pr.d_loc;
        g_sigma_lt += pr.d_scale;
      }
    }
    for (std::size_t j = 0; j < d; ++j)
      lp += detail::positive_term(priors_.L_d, q[off_Ld_ + j], ll.d_lambda(j, j),
                                  grad[off_Ld_ + j]);
    for (std::size_t j = 0; j < p; ++j) {
      const auto pr =
          lpdf_partials(PriorFamily::half_cauchy, 0.0, psi[j], mu_psi, sigma_psi);
      lp += pr.value + q[off_psi_ + j];
      grad[off_psi_ + j] = (ll.d_psi[j] + pr.d_x) * psi[j] + 1.0;
      g_mu_psi += pr.d_loc;
      g_sigma_psi += pr.d_scale;
    }
    lp += detail::positive_term(priors_.mu_psi, u_mu_psi, g_mu_psi, grad[off_psi_ + p]);
    lp += detail::positive_term(priors_.sigma_psi, u_sigma_psi, g_sigma_psi,
                                grad[off_psi_ + p + 1]);
    {
      const auto pr = lpdf_grad(priors_.mu_lt, mu_lt);
      lp += pr.value;
      grad[off_psi_ + p + 2] = g_mu_lt + pr.d_x;
    }
    lp += detail::positive_term(priors_.sigma_lt, u_sigma_lt, g_sigma_lt,
                                grad[off_psi_ + p + 3]);
    return finish(lp, grad);
  }

 private:
  void init_layout(std::size_t p, std::size_t d) {
    if (d < 1 || d > p) throw ConfigError("factor model needs 1 <= d <= p");
    p_ = p;
    d_ = d;
    M_ = factor_free_loadings(p, d);
    layout_.add("L_t", M_, Transform::identity, true);
    off_Ld_ = layout_.add("L_d", d, Transform::log, true);
    off_psi_ = layout_.add("psi", p, Transform::log, true);
    layout_.add("mu_psi", 1, Transform::log);
    layout_.add("sigma_psi", 1, Transform::log);
    layout_.add("mu_lt", 1, Transform::identity);
    layout_.add("sigma_lt", 1, Transform::log);
  }

  Backend backend_;
  FactorPriors priors_;
  std::size_t p_ = 0, d_ = 0, M_ = 0, off_Ld_ = 0, off_psi_ = 0;
  Matrix Y_;
  FactorStats stats_;
};

// ───────────────────────────── Poisson ─────────────────────────────

inline constexpr double kMaxLinearPredictor = 700.0;

/// Syxᵀb − Σ exp(x_iᵀb); −∞ if any x_iᵀb exceeds 700.
inline double poisson_loglik(const PoissonStats& s, std::span<const double> b) {
  double sum_mu = 0.0;
  for (std::size_t i = 0; i < s.n; ++i) {
    const double eta = dot(s.X.row(i), b);
    if (eta > kMaxLinearPredictor) return -std::numeric_limits<double>::infinity();
    sum_mu += std::exp(eta);
  }
  return dot(s.Syx, b) - sum_mu;
}

/// Σ log Poisson(y_i | exp(x_iᵀb)) including −log(y_i!).
inline double poisson_loglik_naive(const Dataset& d, std::span<const double> b) {
  double ll = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double eta = dot(d.X.row(i), b);
    if (eta > kMaxLinearPredictor) return -std::numeric_limits<double>::infinity();
    const double rate = std::exp(eta);
    ll += d.y[i] * std::log(rate) - rate - std::lgamma(d.y[i] + 1.0);
  }
  return ll;
}

struct PoissonPriors {
  PriorSpec b = PriorSpec::normal(0.0, 2.0);
};

class PoissonModel final : public PosteriorModel {
 public:
  PoissonModel(const Dataset& d, Backend backend, PoissonPriors priors = {})
      : backend_(backend), priors_(std::move(priors)) {
    d.validate();
    if (backend == Backend::suffstat_woodbury)
      throw ConfigError("suffstat_woodbury applies to the factor model only");
    if (backend == Backend::naive) {
      for (double v : d.y)
        if (v < 0.0) throw NegativeCount("Poisson response must be nonnegative");
      data_ = d;
    } else {
      stats_ = build_poisson_stats(d);
    }
    p_ = d.p();
    layout_.add("b", p_, Transform::identity, true);
  }

  std::string_view name() const noexcept override { return "poisson"; }
  Backend backend() const noexcept override { return backend_; }

  double log_density_grad(std::span<const double> q, std::span<double> grad) const override {
    const std::size_t p = p_;
    const auto b = q.first(p);
    double lp = 0.0;
    if (backend_ == Backend::naive) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = 0; i < data_.n(); ++i) {
        const auto x = data_.X.row(i);
        const double eta = dot(x, b);
        if (eta > kMaxLinearPredictor) return reject(grad);
        const double rate = std::exp(eta);
        const double y = data_.y[i];
        lp += y * std::log(rate) - rate - std::lgamma(y + 1.0);
        const double w = y - rate;
        for (std::size_t j = 0; j < p; ++j) grad[j] += w * x[j];
      }
    } else {
      std::copy(stats_.Syx.begin(), stats_.Syx.end(), grad.begin());
      double sum_mu = 0.0;
      for (std::size_t i = 0; i < stats_.n; ++i) {
        const auto x = stats_.X.row(i);
        const double eta = dot(x, b);
        if (eta > kMaxLinearPredictor) return reject(grad);
        const double mu = std::exp(eta);
        sum_mu += mu;
        for (std::size_t j = 0; j < p; ++j) grad[j] -= mu * x[j];
      }
      lp = dot(stats_.Syx, b) - sum_mu;
    }
    for (std::size_t j = 0; j < p; ++j) {
      const auto pr = lpdf_grad(priors_.b, b[j]);
      lp += pr.value;
      grad[j] += pr.d_x;
    }
    return finish(lp, grad);
  }

 private:
  Backend backend_;
  PoissonPriors priors_;
  std::size_t p_ = 0;
  Dataset data_;
  PoissonStats stats_;
};

// ───────────────────────────── construction ─────────────────────────────

struct ModelPriors {
  RegressionPriors regression;
  MixedPriors mixed;
  FactorPriors factor;
  PoissonPriors poisson;
};

/// Regression, mixed or Poisson model on tabular data.
inline std::unique_ptr<PosteriorModel> make_model(ModelKind kind, Backend backend,
                                                  const Dataset& d,
                                                  const ModelPriors& priors = {}) {
  switch (kind) {
    case ModelKind::regression:
      return std::make_unique<RegressionModel>(d, backend, priors.regression);
    case ModelKind::mixed: return std::make_unique<MixedModel>(d, backend, priors.mixed);
    case ModelKind::poisson: return std::make_unique<PoissonModel>(d, backend, priors.poisson);
    case ModelKind::factor:
      throw ConfigError("factor model takes multivariate data; use make_factor_model");
  }
  throw ConfigError("unknown model");
}

inline std::unique_ptr<PosteriorModel> make_factor_model(Backend backend, const Matrix& Y,
                                                         std::size_t factors,
                                                         const ModelPriors& priors = {}) {
  return std::make_unique<FactorModel>(Y, factors, backend, priors.factor);
}

}  // namespace ssmc
