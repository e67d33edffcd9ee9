#pragma once

// Posterior summaries (rank-normalized split R-hat, Geyer ESS, MCSE) and the
// two-run equivalence report, plus their JSON/CSV serializations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "ssmc/dataset.hpp"
#include "ssmc/error.hpp"
#include "ssmc/sampler.hpp"

namespace ssmc {

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q5 = 0.0, q50 = 0.0, q95 = 0.0;
  double ess_bulk = 0.0;
  double ess_mean = 0.0;
  double rhat = 1.0;
  double mcse_mean = 0.0;
  bool degenerate = false;
};

struct Summary {
  std::vector<ParamSummary> params;
  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;
  std::size_t divergences = 0;

  const ParamSummary& at(std::string_view name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw LayoutMismatch("no parameter '" + std::string(name) + "' in summary");
  }
};

/// Per-chain draws of one scalar quantity.
using ChainDraws = std::vector<Vector>;

namespace detail {

inline double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample variance with denominator n − 1.
inline double var_of(std::span<const double> x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Linear-interpolation quantile of sorted data (R type 7).
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline ChainDraws split_chains(const ChainDraws& chains) {
  ChainDraws out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + half);
    out.emplace_back(c.end() - half, c.end());
  }
  return out;
}

/// Pooled ranks (ties averaged) mapped through Φ⁻¹((r − 3/8)/(S + 1/4)).
inline ChainDraws rank_normalize(const ChainDraws& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i)
      all.emplace_back(chains[c][i], c * chains[0].size() + i);
  std::sort(all.begin(), all.end());
  const double S = static_cast<double>(all.size());
  std::vector<double> z(all.size());
  const boost::math::normal std_normal;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    const double v = boost::math::quantile(std_normal, (rank - 0.375) / (S + 0.25));
    for (std::size_t k = i; k < j; ++k) z[all[k].second] = v;
    i = j;
  }
  ChainDraws out(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    out[c].resize(chains[c].size());
    for (std::size_t i = 0; i < chains[c].size(); ++i) out[c][i] = z[c * chains[0].size() + i];
  }
  return out;
}

inline double classic_rhat(const ChainDraws& chains) {
  const double n = static_cast<double>(chains[0].size());
  Vector means, vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(var_of(c));
  }
  const double W = mean_of(vars);
  const double B_over_n = chains.size() > 1 ? var_of(means) : 0.0;
  if (W == 0.0) return B_over_n == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_hat = (n - 1.0) / n * W + B_over_n;
  return std::sqrt(var_hat / W);
}

}  // namespace detail

/// Rank-normalized split R-hat: the larger of the bulk and folded-tail
/// values, and never below classic split R-hat on the raw draws. Rank
/// normalization alone saturates near 1.8 for fully separated chains.
inline double rhat(const ChainDraws& chains) {
  const ChainDraws split = detail::split_chains(chains);
  const double raw = detail::classic_rhat(split);
  const double bulk = detail::classic_rhat(detail::rank_normalize(split));
  Vector pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  std::sort(pooled.begin(), pooled.end());
  const double med = detail::quantile_sorted(pooled, 0.5);
  ChainDraws folded = split;
  for (auto& c : folded)
    for (double& v : c) v = std::fabs(v - med);
  const double tail = detail::classic_rhat(detail::rank_normalize(folded));
  return std::max({raw, bulk, tail});
}

/// Multi-chain ESS with Geyer's initial monotone sequence. Autocovariances
/// are computed lag by lag only as far as the truncation needs. Result is
/// capped at 1.5× the total number of draws.
inline double ess(const ChainDraws& chains) {
  const std::size_t M = chains.size();
  const std::size_t n = chains[0].size();
  const double nd = static_cast<double>(n);
  Vector means(M), chain_var(M);
  for (std::size_t m = 0; m < M; ++m) {
    means[m] = detail::mean_of(chains[m]);
    chain_var[m] = detail::var_of(chains[m]);
  }
  const double mean_var = detail::mean_of(chain_var);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (M > 1) var_plus += detail::var_of(means);
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  // Mean over chains of the biased lag-t autocovariance.
  auto acov_mean = [&](std::size_t t) {
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      const auto& c = chains[m];
      double a = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) a += (c[i] - means[m]) * (c[i + t] - means[m]);
      s += a / nd;
    }
    return s / static_cast<double>(M);
  };
  auto rho = [&](std::size_t t) { return 1.0 - (mean_var - acov_mean(t)) / var_plus; };

  Vector r(n, 0.0);
  double even = 1.0;
  double odd = rho(1);
  r[0] = even;
  r[1] = odd;
  std::size_t s = 1;
  while (s + 4 < n && even + odd > 0.0) {
    even = rho(s + 1);
    odd = rho(s + 2);
    if (even + odd >= 0.0) {
      r[s + 1] = even;
      r[s + 2] = odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (even > 0.0 && max_s + 1 < n) r[max_s + 1] = even;
  for (std::size_t t = 1; t + 3 <= max_s; t += 2) {
    if (r[t + 1] + r[t + 2] > r[t - 1] + r[t]) {
      r[t + 1] = 0.5 * (r[t - 1] + r[t]);
      r[t + 2] = r[t + 1];
    }
  }
  const double total = static_cast<double>(M) * nd;
  double tau = -1.0 + r[max_s + 1 < n ? max_s + 1 : n - 1];
  for (std::size_t t = 0; t < max_s; ++t) tau += 2.0 * r[t];
  tau = std::max(tau, 1.0 / std::log10(total));
  return std::min(total / tau, 1.5 * total);
}

inline ChainDraws param_draws(const std::vector<ChainOutput>& chains, std::size_t k) {
  ChainDraws out(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const Matrix& d = chains[c].draws;
    out[c].resize(d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) out[c][i] = d(i, k);
  }
  return out;
}

inline ParamSummary summarize_param(std::string name, const ChainDraws& chains) {
  ParamSummary s;
  s.name = std::move(name);
  Vector pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  s.mean = detail::mean_of(pooled);
  s.sd = std::sqrt(detail::var_of(pooled));
  std::sort(pooled.begin(), pooled.end());
  s.q5 = detail::quantile_sorted(pooled, 0.05);
  s.q50 = detail::quantile_sorted(pooled, 0.50);
  s.q95 = detail::quantile_sorted(pooled, 0.95);
  if (pooled.front() == pooled.back()) {
    s.sd = 0.0;
    s.degenerate = true;
    s.rhat = 1.0;
    s.ess_bulk = s.ess_mean = std::numeric_limits<double>::quiet_NaN();
    s.mcse_mean = 0.0;
    return s;
  }
  const ChainDraws split = detail::split_chains(chains);
  s.rhat = rhat(chains);
  s.ess_bulk = ess(detail::rank_normalize(split));
  s.ess_mean = ess(split);
  s.mcse_mean = s.sd / std::sqrt(s.ess_mean);
  return s;
}

inline Summary summarize(const std::vector<ChainOutput>& chains) {
  if (chains.empty()) throw InsufficientDraws("no chains");
  const std::size_t n = chains[0].draws.rows();
  const std::size_t D = chains[0].draws.cols();
  for (const auto& c : chains) {
    if (c.draws.rows() != n) throw InsufficientDraws("chains have unequal lengths");
    if (c.draws.cols() != D || c.names != chains[0].names)
      throw LayoutMismatch("chains have different parameter layouts");
  }
  if (n < 4) throw InsufficientDraws("summaries need at least 4 draws per chain");
  Summary out;
  out.chains = chains.size();
  out.draws_per_chain = n;
  for (const auto& c : chains) out.divergences += c.divergences();
  for (std::size_t k = 0; k < D; ++k)
    out.params.push_back(summarize_param(chains[0].names[k], param_draws(chains, k)));
  return out;
}

// ───────────────────────────── comparison ─────────────────────────────

/// Asymptotic Kolmogorov survival function Q(λ) = 2 Σ (−1)^{j−1} e^{−2j²λ²}.
inline double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.18) {
    const double y = std::exp(-1.23370055013616983 / (lambda * lambda));
    const double cdf = 2.25675833419102515 * std::sqrt(-std::log(y)) *
                       (y + std::pow(y, 9) + std::pow(y, 25) + std::pow(y, 49));
    return 1.0 - cdf;
  }
  const double x = std::exp(-2.0 * lambda * lambda);
  return 2.0 * (x - std::pow(x, 4) + std::pow(x, 9));
}

struct KsResult {
  double statistic;
  double p_value;
};

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
inline KsResult ks_two_sample(Vector a, Vector b) {
  if (a.empty() || b.empty()) throw InsufficientDraws("KS test needs nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double D = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    D = std::max(D, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {D, kolmogorov_q((ne + 0.12 + 0.11 / ne) * D)};
}

struct ParamComparison {
  std::string name;
  double mean_a = 0.0, mean_b = 0.0;
  double mean_diff = 0.0;
  double combined_mcse = 0.0;
  double std_diff = 0.0;
  std::size_t thin_a = 1, thin_b = 1;
  double ks_statistic = 0.0;
  double ks_p_value = 1.0;
  bool mean_pass = true;
  bool ks_pass = true;
  bool pass() const noexcept { return mean_pass && ks_pass; }
};

struct ComparisonReport {
  std::vector<ParamComparison> params;
  double pass_fraction = 1.0;
  bool pass = true;

  static constexpr double mcse_multiplier = 3.0;
  static constexpr double ks_alpha = 0.01;
  static constexpr double required_fraction = 0.95;
};

namespace detail {

/// Every `thin`-th draw of each chain, thin = ceil(total / ess).
inline Vector thinned(const ChainDraws& chains, double ess_value, std::size_t& thin_out) {
  std::size_t total = 0;
  for (const auto& c : chains) total += c.size();
  std::size_t thin = 1;
  if (std::isfinite(ess_value) && ess_value > 0.0)
    thin = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(static_cast<double>(total) / ess_value)));
  thin_out = thin;
  Vector out;
  for (const auto& c : chains)
    for (std::size_t i = 0; i < c.size(); i += thin) out.push_back(c[i]);
  return out;
}

}  // namespace detail

/// Draws from two runs against each other, parameter by parameter: a mean
/// test at 3 combined MCSEs and a KS test on ESS-thinned draws.
inline ComparisonReport compare_posteriors(const std::vector<ChainOutput>& a,
                                           const std::vector<ChainOutput>& b) {
  if (a.empty() || b.empty()) throw InsufficientDraws("compare needs chains on both sides");
  if (a[0].names != b[0].names) throw LayoutMismatch("runs have different parameter layouts");
  const Summary sa = summarize(a), sb = summarize(b);
  ComparisonReport rep;
  std::size_t passed = 0;
  for (std::size_t k = 0; k < sa.params.size(); ++k) {
    const auto& pa = sa.params[k];
    const auto& pb = sb.params[k];
    ParamComparison c;
    c.name = pa.name;
    c.mean_a = pa.mean;
    c.mean_b = pb.mean;
    c.mean_diff = pa.mean - pb.mean;
    c.combined_mcse = std::hypot(pa.mcse_mean, pb.mcse_mean);
    c.std_diff = c.combined_mcse > 0.0 ? c.mean_diff / c.combined_mcse
                 : c.mean_diff == 0.0  ? 0.0
                                       : std::copysign(INFINITY, c.mean_diff);
    c.mean_pass = std::fabs(c.mean_diff) <= ComparisonReport::mcse_multiplier * c.combined_mcse;
    const auto da = param_draws(a, k), db = param_draws(b, k);
    const auto ks = ks_two_sample(detail::thinned(da, pa.ess_bulk, c.thin_a),
                                  detail::thinned(db, pb.ess_bulk, c.thin_b));
    c.ks_statistic = ks.statistic;
    c.ks_p_value = ks.p_value;
    c.ks_pass = ks.p_value >= ComparisonReport::ks_alpha;
    passed += c.pass();
    rep.params.push_back(std::move(c));
  }
  rep.pass_fraction = rep.params.empty()
                          ? 1.0
                          : static_cast<double>(passed) / static_cast<double>(rep.params.size());
  rep.pass = rep.pass_fraction >= ComparisonReport::required_fraction;
  return rep;
}

// ───────────────────────────── serialization ─────────────────────────────

namespace detail {
inline nlohmann::json num(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}
inline std::string csv_num(double v) { return std::isfinite(v) ? format_double(v) : "NA"; }
}  // namespace detail

inline nlohmann::json to_json(const Summary& s) {
  nlohmann::json j;
  j["chains"] = s.chains;
  j["draws_per_chain"] = s.draws_per_chain;
  j["divergences"] = s.divergences;
  auto& arr = j["parameters"] = nlohmann::json::array();
  for (const auto& p : s.params)
    arr.push_back({{"name", p.name},
                   {"mean", detail::num(p.mean)},
                   {"sd", detail::num(p.sd)},
                   {"q5", detail::num(p.q5)},
                   {"q50", detail::num(p.q50)},
                   {"q95", detail::num(p.q95)},
                   {"ess_bulk", detail::num(p.ess_bulk)},
                   {"ess_mean", detail::num(p.ess_mean)},
                   {"rhat", detail::num(p.rhat)},
                   {"mcse_mean", detail::num(p.mcse_mean)},
                   {"degenerate", p.degenerate}});
  return j;
}

inline void write_summary_csv(std::ostream& out, const Summary& s) {
  out << "name,mean,sd,q5,q50,q95,ess_bulk,ess_mean,rhat,mcse_mean,degenerate\n";
  for (const auto& p : s.params)
    out << p.name << ',' << detail::csv_num(p.mean) << ',' << detail::csv_num(p.sd) << ','
        << detail::csv_num(p.q5) << ',' << detail::csv_num(p.q50) << ','
        << detail::csv_num(p.q95) << ',' << detail::csv_num(p.ess_bulk) << ','
        << detail::csv_num(p.ess_mean) << ',' << detail::csv_num(p.rhat) << ','
        << detail::csv_num(p.mcse_mean) << ',' << (p.degenerate ? 1 : 0) << '\n';
}

inline nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json j;
  j["pass"] = r.pass;
  j["pass_fraction"] = r.pass_fraction;
  j["criteria"] = {{"mcse_multiplier", ComparisonReport::mcse_multiplier},
                   {"ks_alpha", ComparisonReport::ks_alpha},
                   {"required_fraction", ComparisonReport::required_fraction},
                   {"thinning", "every ceil(total_draws / ess_bulk)-th draw per chain"}};
  auto& arr = j["parameters"] = nlohmann::json::array();
  for (const auto& p : r.params)
    arr.push_back({{"name", p.name},
                   {"mean_a", detail::num(p.mean_a)},
                   {"mean_b", detail::num(p.mean_b)},
                   {"mean_diff", detail::num(p.mean_diff)},
                   {"combined_mcse", detail::num(p.combined_mcse)},
                   {"std_diff", detail::num(p.std_diff)},
                   {"thin_a", p.thin_a},
                   {"thin_b", p.thin_b},
                   {"ks_statistic", detail::num(p.ks_statistic)},
                   {"ks_p_value", detail::num(p.ks_p_value)},
                   {"mean_pass", p.mean_pass},
                   {"ks_pass", p.ks_pass},
                   {"pass", p.pass()}});
  return j;
}

inline void write_comparison_csv(std::ostream& out, const ComparisonReport& r) {
  out << "name,mean_a,mean_b,mean_diff,combined_mcse,std_diff,thin_a,thin_b,ks_statistic,"
         "ks_p_value,mean_pass,ks_pass,pass\n";
  for (const auto& p : r.params)
    out << p.name << ',' << detail::csv_num(p.mean_a) << ',' << detail::csv_num(p.mean_b)
        << ',' << detail::csv_num(p.mean_diff) << ',' << detail::csv_num(p.combined_mcse)
        << ',' << detail::csv_num(p.std_diff) << ',' << p.thin_a << ',' << p.thin_b << ','
        << detail::csv_num(p.ks_statistic) << ',' << detail::csv_num(p.ks_p_value) << ','
        << p.mean_pass << ',' << p.ks_pass << ',' << p.pass() << '\n';
}

/// One row per post-warm-up draw: chain (1-based), then constrained parameters.
inline void write_draws_csv(std::ostream& out, const std::vector<ChainOutput>& chains) {
  if (chains.empty()) return;
  out << "chain";
  for (const auto& n : chains[0].names) out << ',' << n;
  out << '\n';
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const Matrix& d = chains[c].draws;
    for (std::size_t i = 0; i < d.rows(); ++i) {
      out << (c + 1);
      for (double v : d.row(i)) out << ',' << format_double(v);
      out << '\n';
    }
  }
}

/// Reads write_draws_csv output back into per-chain draws (no sampler stats).
inline std::vector<ChainOutput> read_draws_csv(std::istream& in) {
  const auto t = detail::read_csv(in);
  if (t.header.empty() || t.header[0] != "chain")
    throw ParseError("draws CSV must start with a 'chain' column");
  std::vector<std::string> names(t.header.begin() + 1, t.header.end());
  std::vector<std::vector<const std::vector<double>*>> by_chain;
  for (const auto& row : t.rows) {
    const double c = row[0];
    if (c < 1 || c != std::floor(c)) throw ParseError("chain ids must be positive integers");
    const auto idx = static_cast<std::size_t>(c) - 1;
    if (idx >= by_chain.size()) by_chain.resize(idx + 1);
    by_chain[idx].push_back(&row);
  }
  std::vector<ChainOutput> chains;
  for (const auto& rows : by_chain) {
    if (rows.empty()) throw ParseError("chain ids must be contiguous from 1");
    ChainOutput ch;
    ch.names = names;
    ch.draws = Matrix(rows.size(), names.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < names.size(); ++k) ch.draws(i, k) = (*rows[i])[k + 1];
    chains.push_back(std::move(ch));
  }
  if (chains.empty()) throw EmptyData();
  return chains;
}

inline std::vector<ChainOutput> read_draws_csv(const std::string& path) {
  auto in = detail::open_input(path);
  return read_draws_csv(in);
}

inline void write_sampler_stats_csv(std::ostream& out, const std::vector<ChainOutput>& chains,
                                    bool include_warmup = false) {
  out << "chain,iteration,warmup,lp,accept_stat,stepsize,treedepth,n_leapfrog,divergent,"
         "energy\n";
  for (std::size_t c = 0; c < chains.size(); ++c) {
    std::size_t it = 0;
    auto emit = [&](const IterationStats& s, bool warm) {
      out << (c + 1) << ',' << ++it << ',' << warm << ',' << detail::csv_num(s.lp) << ','
          << format_double(s.accept_stat) << ',' << format_double(s.stepsize) << ','
          << s.treedepth << ',' << s.n_leapfrog << ',' << s.divergent << ','
          << detail::csv_num(s.energy) << '\n';
    };
    if (include_warmup)
      for (const auto& s : chains[c].warmup_stats) emit(s, true);
    for (const auto& s : chains[c].stats) emit(s, false);
  }
}

}  // namespace ssmc
