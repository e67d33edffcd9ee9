#pragma once

// No-U-Turn sampler with multinomial trajectory sampling and Stan-style
// windowed warm-up (dual-averaged step size, diagonal metric).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "ssmc/error.hpp"
#include "ssmc/linalg.hpp"
#include "ssmc/models.hpp"
#include "ssmc/rng.hpp"

namespace ssmc {

struct SamplerConfig {
  std::size_t warmup = 1000;
  std::size_t draws = 5000;
  std::size_t chains = 4;
  double target_accept = 0.8;
  int max_treedepth = 10;
  std::uint64_t seed = 0;
  double init_radius = 2.0;
  bool adapt = true;
  bool parallel = true;  // one thread per chain

  void validate() const {
    if (chains < 1) throw ConfigError("chains must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw ConfigError("target_accept must lie in (0, 1)");
    if (max_treedepth < 0) throw ConfigError("max_treedepth must be >= 0");
    if (!(init_radius >= 0.0)) throw ConfigError("init_radius must be >= 0");
    if (adapt && warmup > 0 && warmup < 150)
      throw ConfigError("warmup must be >= 150 when adaptation is enabled");
  }
};

struct IterationStats {
  double lp;
  double accept_stat;
  double stepsize;
  int treedepth;
  int n_leapfrog;
  bool divergent;
  double energy;
};

struct ChainOutput {
  std::vector<std::string> names;
  Matrix draws;  // draws × D, constrained scale
  Vector lp;
  std::vector<IterationStats> stats;         // post-warm-up
  std::vector<IterationStats> warmup_stats;  // warm-up
  Vector inv_mass;
  double stepsize = 0.0;
  double warmup_ms = 0.0;
  double draws_ms = 0.0;

  std::size_t divergences() const noexcept {
    std::size_t k = 0;
    for (const auto& s : stats) k += s.divergent;
    return k;
  }
  double mean_treedepth() const noexcept {
    if (stats.empty()) return 0.0;
    double t = 0.0;
    for (const auto& s : stats) t += s.treedepth;
    return t / static_cast<double>(stats.size());
  }
  double mean_accept_stat() const noexcept {
    if (stats.empty()) return 0.0;
    double t = 0.0;
    for (const auto& s : stats) t += s.accept_stat;
    return t / static_cast<double>(stats.size());
  }
};

/// More than 90% of post-warm-up iterations diverged. Carries the chains so
/// callers can dump diagnostics.
class AllDivergent : public Error {
 public:
  AllDivergent(std::vector<ChainOutput> chains, double rate)
      : Error("sampler failure: " + std::to_string(rate * 100.0) +
              "% of post-warm-up iterations diverged"),
        chains_(std::move(chains)),
        rate_(rate) {}
  const std::vector<ChainOutput>& chains() const noexcept { return chains_; }
  double rate() const noexcept { return rate_; }

 private:
  std::vector<ChainOutput> chains_;
  double rate_;
};

/// Position, momentum and cached log density / gradient.
struct PhasePoint {
  Vector q, p, grad;
  double lp = 0.0;
};

inline double kinetic_energy(std::span<const double> p, std::span<const double> inv_mass) {
  double k = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) k += p[i] * p[i] * inv_mass[i];
  return 0.5 * k;
}

inline double hamiltonian(const PhasePoint& z, std::span<const double> inv_mass) {
  if (!std::isfinite(z.lp)) return std::numeric_limits<double>::infinity();
  return -z.lp + kinetic_energy(z.p, inv_mass);
}

/// One leapfrog step of size eps (negative eps integrates backwards in
/// time). Updates z in place and returns the new log density; −∞ means the
/// step left the model's support.
inline double leapfrog(const PosteriorModel& m, PhasePoint& z, double eps,
                       std::span<const double> inv_mass) {
  const std::size_t D = z.q.size();
  for (std::size_t i = 0; i < D; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  for (std::size_t i = 0; i < D; ++i) z.q[i] += eps * inv_mass[i] * z.p[i];
  z.lp = m.log_density_grad(z.q, z.grad);
  for (std::size_t i = 0; i < D; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  return z.lp;
}

namespace detail {

inline double log_sum_exp(double a, double b) noexcept {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::fabs(a - b)));
}

inline void sample_momentum(PhasePoint& z, std::span<const double> inv_mass, Philox& rng) {
  for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
}

/// Continue unless the trajectory from `minus` to `plus` has started to
/// double back: (q₊ − q₋)·M⁻¹p must be nonnegative at both ends.
inline bool no_uturn(std::span<const double> q_minus, std::span<const double> q_plus,
                     std::span<const double> p_minus, std::span<const double> p_plus,
                     std::span<const double> inv_mass) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < q_minus.size(); ++i) {
    const double dq = q_plus[i] - q_minus[i];
    a += dq * inv_mass[i] * p_minus[i];
    b += dq * inv_mass[i] * p_plus[i];
  }
  return a >= 0.0 && b >= 0.0;
}

class NutsKernel {
 public:
  NutsKernel(const PosteriorModel& m, int max_treedepth)
      : m_(m), max_depth_(std::max(1, max_treedepth)) {}

  struct Result {
    int treedepth = 0;
    int n_leapfrog = 0;
    bool divergent = false;
    double accept_stat = 0.0;
    double energy = 0.0;
  };

  /// Replaces z by the next state of the chain.
  Result transition(PhasePoint& z, double eps, std::span<const double> inv_mass, Philox& rng) {
    inv_mass_ = inv_mass;
    sample_momentum(z, inv_mass, rng);
    H0_ = hamiltonian(z, inv_mass);
    n_leapfrog_ = 0;
    sum_accept_ = 0.0;
    divergent_ = false;

    PhasePoint minus = z, plus = z;
    PhasePoint sample = z;
    double log_sum_w = 0.0;
    int depth = 0;

    while (depth < max_depth_) {
      const bool forward = rng.coin();
      PhasePoint& edge = forward ? plus : minus;
      Subtree t;
      const bool valid = build_tree(edge, depth, forward ? eps : -eps, t, rng);
      ++depth;
      if (!valid) break;

      // Biased progressive sampling between the old trajectory and the new subtree.
      if (t.log_w > log_sum_w || rng.uniform() < std::exp(t.log_w - log_sum_w))
        sample = std::move(t.proposal);
      log_sum_w = log_sum_exp(log_sum_w, t.log_w);

      if (!no_uturn(minus.q, plus.q, minus.p, plus.p, inv_mass)) break;
    }

    Result r;
    r.treedepth = depth;
    r.n_leapfrog = n_leapfrog_;
    r.divergent = divergent_;
    r.accept_stat = n_leapfrog_ > 0 ? sum_accept_ / n_leapfrog_ : 0.0;
    r.energy = hamiltonian(sample, inv_mass);
    z = std::move(sample);
    return r;
  }

 private:
  struct Subtree {
    PhasePoint proposal;
    Vector q_inner, p_inner;  // endpoint adjacent to the existing trajectory
    double log_w = -std::numeric_limits<double>::infinity();
  };

  // Extends `edge` by 2^depth leapfrog steps. Returns false on divergence or
  // on a U-turn inside the subtree.
  bool build_tree(PhasePoint& edge, int depth, double eps, Subtree& out, Philox& rng) {
    if (depth == 0) {
      leapfrog(m_, edge, eps, inv_mass_);
      ++n_leapfrog_;
      const double H = hamiltonian(edge, inv_mass_);
      const double dH = H0_ - H;  // −∞ when H is infinite
      sum_accept_ += dH > 0.0 ? 1.0 : std::exp(dH);
      out.log_w = dH;
      out.q_inner = edge.q;
      out.p_inner = edge.p;
      out.proposal = edge;
      if (!(H - H0_ <= 1000.0)) {
        divergent_ = true;
        return false;
      }
      return true;
    }
    Subtree inner;
    if (!build_tree(edge, depth - 1, eps, inner, rng)) return false;
    Subtree outer;
    if (!build_tree(edge, depth - 1, eps, outer, rng)) return false;

    out.log_w = log_sum_exp(inner.log_w, outer.log_w);
    const bool take_outer = outer.log_w - out.log_w >= 0.0 ||
                            rng.uniform() < std::exp(outer.log_w - out.log_w);
    out.proposal = std::move(take_outer ? outer.proposal : inner.proposal);
    out.q_inner = std::move(inner.q_inner);
    out.p_inner = std::move(inner.p_inner);

    // Orient the subtree in forward time before checking it.
    if (eps > 0.0) return no_uturn(out.q_inner, edge.q, out.p_inner, edge.p, inv_mass_);
    return no_uturn(edge.q, out.q_inner, edge.p, out.p_inner, inv_mass_);
  }

  const PosteriorModel& m_;
  int max_depth_;
  std::span<const double> inv_mass_;
  double H0_ = 0.0;
  int n_leapfrog_ = 0;
  double sum_accept_ = 0.0;
  bool divergent_ = false;
};

/// Nesterov dual averaging of log step size.
class DualAveraging {
 public:
  static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

  explicit DualAveraging(double delta) : delta_(delta) {}

  void restart(double eps) {
    counter_ = 0.0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    mu_ = std::log(10.0 * eps);
  }

  double learn(double accept_stat) {
    counter_ += 1.0;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + t0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma;
    const double x_eta = std::pow(counter_, -kappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double smoothed() const { return std::exp(x_bar_); }

 private:
  double delta_;
  double counter_ = 0.0, s_bar_ = 0.0, x_bar_ = 0.0, mu_ = 0.0;
};

/// Warm-up schedule: 75 fast iterations, slow windows 25, 50, 100, ...
/// (the last stretched to the terminal buffer), 50 fast iterations.
class WindowSchedule {
 public:
  static constexpr std::size_t init_buffer = 75, term_buffer = 50, base_window = 25;

  explicit WindowSchedule(std::size_t warmup)
      : warmup_(warmup), window_size_(base_window), next_window_(init_buffer + base_window - 1) {}

  bool in_window() const noexcept {
    return counter_ >= init_buffer && counter_ < warmup_ - term_buffer && counter_ != warmup_;
  }
  bool at_window_end() const noexcept {
    return counter_ == next_window_ && counter_ != warmup_;
  }
  void advance_window() {
    if (next_window_ == warmup_ - term_buffer - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer - 1) {
      const std::size_t boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer) next_window_ = warmup_ - term_buffer - 1;
    }
  }
  void tick() noexcept { ++counter_; }

 private:
  std::size_t warmup_, window_size_, next_window_;
  std::size_t counter_ = 0;
};

class Welford {
 public:
  explicit Welford(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}
  void add(std::span<const double> x) {
    n_ += 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean_[i];
      mean_[i] += d / n_;
      m2_[i] += d * (x[i] - mean_[i]);
    }
  }
  double count() const noexcept { return n_; }
  Vector variance() const {
    Vector v(m2_.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / (n_ - 1.0);
    return v;
  }
  void restart() {
    n_ = 0.0;
    std::fill(mean_.begin(), mean_.end(), 0.0);
    std::fill(m2_.begin(), m2_.end(), 0.0);
  }

 private:
  double n_ = 0.0;
  Vector mean_, m2_;
};

/// Doubles or halves eps until a single leapfrog step's acceptance
/// probability crosses 0.8.
inline double heuristic_stepsize(const PosteriorModel& m, const PhasePoint& z0, double eps,
                                 std::span<const double> inv_mass, Philox& rng) {
  const double log08 = std::log(0.8);
  auto trial = [&] {
    PhasePoint z = z0;
    sample_momentum(z, inv_mass, rng);
    const double H0 = hamiltonian(z, inv_mass);
    leapfrog(m, z, eps, inv_mass);
    double h = hamiltonian(z, inv_mass);
    if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
    return H0 - h;
  };
  const int direction = trial() > log08 ? 1 : -1;
  for (;;) {
    const double dH = trial();
    if (direction == 1 && !(dH > log08)) break;
    if (direction == -1 && !(dH < log08)) break;
    eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
    if (eps > 1e7 || eps < 1e-300) break;
  }
  return eps;
}

inline PhasePoint initial_point(const PosteriorModel& m, double radius, Philox& rng) {
  const std::size_t D = m.dim();
  PhasePoint z{Vector(D), Vector(D, 0.0), Vector(D), 0.0};
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (auto& v : z.q) v = rng.uniform(-radius, radius);
    z.lp = m.log_density_grad(z.q, z.grad);
    if (std::isfinite(z.lp)) return z;
  }
  throw ConfigError("no initial point with finite log density after 100 attempts");
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

/// One chain: initialization, warm-up, then cfg.draws iterations with
/// frozen step size and metric. Chain k draws from Philox stream k + 1.
inline ChainOutput run_chain(const PosteriorModel& m, const SamplerConfig& cfg,
                             std::size_t chain) {
  using clock = std::chrono::steady_clock;
  Philox rng(cfg.seed, chain + 1);
  const std::size_t D = m.dim();
  ChainOutput out;
  out.names = m.param_names();
  out.inv_mass.assign(D, 1.0);

  const auto t_warm = clock::now();
  PhasePoint z = detail::initial_point(m, cfg.init_radius, rng);
  detail::NutsKernel kernel(m, cfg.max_treedepth);
  double eps = detail::heuristic_stepsize(m, z, 1.0, out.inv_mass, rng);
  const bool adapting = cfg.adapt && cfg.warmup > 0;

  detail::DualAveraging da(cfg.target_accept);
  da.restart(eps);
  detail::WindowSchedule windows(cfg.warmup);
  detail::Welford var(D);
  out.warmup_stats.reserve(cfg.warmup);

  for (std::size_t it = 0; it < cfg.warmup; ++it) {
    const double eps_used = eps;
    const auto r = kernel.transition(z, eps, out.inv_mass, rng);
    out.warmup_stats.push_back(
        {z.lp, r.accept_stat, eps_used, r.treedepth, r.n_leapfrog, r.divergent, r.energy});
    if (!adapting) continue;
    eps = da.learn(r.accept_stat);
    if (windows.in_window()) var.add(z.q);
    if (windows.at_window_end()) {
      windows.advance_window();
      const double n = var.count();
      const Vector v = var.variance();
      for (std::size_t i = 0; i < D; ++i)
        out.inv_mass[i] = (n / (n + 5.0)) * v[i] + 1e-3 * (5.0 / (n + 5.0));
      var.restart();
      eps = detail::heuristic_stepsize(m, z, eps, out.inv_mass, rng);
      da.restart(eps);
    }
    windows.tick();
  }
  if (adapting) eps = da.smoothed();
  out.stepsize = eps;
  out.warmup_ms = detail::elapsed_ms(t_warm);

  const auto t_draw = clock::now();
  out.draws = Matrix(cfg.draws, D);
  out.lp.resize(cfg.draws);
  out.stats.reserve(cfg.draws);
  for (std::size_t it = 0; it < cfg.draws; ++it) {
    const auto r = kernel.transition(z, eps, out.inv_mass, rng);
    out.stats.push_back(
        {z.lp, r.accept_stat, eps, r.treedepth, r.n_leapfrog, r.divergent, r.energy});
    m.constrain(z.q, out.draws.row(it));
    out.lp[it] = z.lp;
  }
  out.draws_ms = detail::elapsed_ms(t_draw);
  return out;
}

/// All chains of one run, ordered by chain index. Threaded and sequential
/// execution give identical output.
inline std::vector<ChainOutput> adapt_run(const PosteriorModel& m, const SamplerConfig& cfg) {
  cfg.validate();
  std::vector<ChainOutput> chains(cfg.chains);
  if (cfg.parallel && cfg.chains > 1) {
    std::vector<std::exception_ptr> errors(cfg.chains);
    std::vector<std::thread> threads;
    threads.reserve(cfg.chains);
    for (std::size_t c = 0; c < cfg.chains; ++c)
      threads.emplace_back([&, c] {
        try {
          chains[c] = run_chain(m, cfg, c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t c = 0; c < cfg.chains; ++c) chains[c] = run_chain(m, cfg, c);
  }

  std::size_t div = 0, total = 0;
  for (const auto& ch : chains) {
    div += ch.divergences();
    total += ch.stats.size();
  }
  if (total > 0 && static_cast<double>(div) > 0.9 * static_cast<double>(total))
    throw AllDivergent(std::move(chains), static_cast<double>(div) / total);
  return chains;
}

}  // namespace ssmc
