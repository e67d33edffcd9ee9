#pragma once

// Timing harness: repeated end-to-end sampling runs per
// (model, backend, size) cell.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmc/dataset.hpp"
#include "ssmc/diagnostics.hpp"
#include "ssmc/models.hpp"
#include "ssmc/sampler.hpp"
#include "ssmc/simulate.hpp"

namespace ssmc {

struct BenchCell {
  ModelKind model = ModelKind::regression;
  Backend backend = Backend::suffstat;
  std::size_t n = 100, p = 10, J = 0, d = 0;
};

struct BenchPlan {
  std::vector<BenchCell> cells;
  std::size_t reps = 5;
  std::size_t warmup = 500;
  std::size_t draws = 1000;
  std::size_t chains = 4;
  bool parallel_chains = false;
  int max_treedepth = 10;
  double target_accept = 0.8;
  std::uint64_t seed = 1;
  ModelPriors priors;

  void validate() const {
    if (reps < 1) throw ConfigError("reps must be >= 1");
    for (const auto& c : cells) {
      if (c.backend == Backend::suffstat_woodbury && c.model != ModelKind::factor)
        throw ConfigError("suffstat_woodbury applies to the factor model only");
      if (c.model == ModelKind::mixed && c.J < 1) throw ConfigError("mixed cell needs J >= 1");
      if (c.model == ModelKind::factor && c.d < 1) throw ConfigError("factor cell needs d >= 1");
    }
  }
};

struct BenchRow {
  BenchCell cell;
  std::size_t rep = 0;
  double setup_ms = 0.0;
  double sampling_ms = 0.0;  // warm-up + draws, wall clock
  double warmup_ms = 0.0;    // summed over chains
  double draws_ms = 0.0;     // summed over chains
  std::size_t divergences = 0;
  double mean_treedepth = 0.0;
  std::uint64_t checksum = 0;
  bool failed = false;
  std::string error;
};

struct BenchCellSummary {
  BenchCell cell;
  std::size_t completed = 0;
  double median_ms = 0.0, q25_ms = 0.0, q75_ms = 0.0;
  double median_draws_ms = 0.0;
  double median_setup_ms = 0.0;
  std::size_t divergences = 0;
  double mean_treedepth = 0.0;
  bool failed = false;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<BenchCellSummary> cells;

  bool all_failed() const noexcept {
    return !cells.empty() &&
           std::all_of(cells.begin(), cells.end(), [](const auto& c) { return c.failed; });
  }
};

/// R type-7 quantile of unsorted values.
inline double quantile(Vector v, double prob) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  return detail::quantile_sorted(v, prob);
}

inline std::vector<BenchCell> desk_grid() {
  using M = ModelKind;
  using B = Backend;
  std::vector<BenchCell> g;
  for (std::size_t n : {100, 1000, 10000})
    for (B b : {B::naive, B::suffstat}) g.push_back({M::regression, b, n, 10, 0, 0});
  for (std::size_t p : {50, 100})
    for (B b : {B::naive, B::suffstat}) g.push_back({M::regression, b, 1000, p, 0, 0});
  for (std::size_t J : {5, 50, 250})
    for (B b : {B::naive, B::suffstat}) g.push_back({M::mixed, b, 1000, 5, J, 0});
  for (auto [p, d] : {std::pair<std::size_t, std::size_t>{10, 3}, {20, 5}})
    for (B b : {B::naive, B::suffstat, B::suffstat_woodbury})
      g.push_back({M::factor, b, 1000, p, 0, d});
  for (std::size_t n : {100, 1000, 10000})
    for (B b : {B::naive, B::suffstat}) g.push_back({M::poisson, b, n, 10, 0, 0});
  return g;
}

/// Small cells covering every model and backend; finishes in a few minutes.
inline BenchPlan quick_plan() {
  using M = ModelKind;
  using B = Backend;
  BenchPlan plan;
  plan.reps = 1;
  plan.warmup = 200;
  plan.draws = 200;
  plan.chains = 2;
  for (std::size_t n : {100, 1000})
    for (B b : {B::naive, B::suffstat}) plan.cells.push_back({M::regression, b, n, 10, 0, 0});
  for (B b : {B::naive, B::suffstat}) plan.cells.push_back({M::mixed, b, 100, 5, 5, 0});
  for (B b : {B::naive, B::suffstat, B::suffstat_woodbury})
    plan.cells.push_back({M::factor, b, 100, 10, 0, 3});
  for (B b : {B::naive, B::suffstat}) plan.cells.push_back({M::poisson, b, 100, 10, 0, 0});
  return plan;
}

/// Runs every cell `reps` times. Data for a cell is drawn from plan.seed, so
/// cells that differ only in backend see identical data. Model construction
/// (including statistics) is timed as setup; sampling time covers adapt_run.
/// A cell whose sampler fails is recorded and the run continues.
inline BenchResult run_bench(const BenchPlan& plan,
                             const std::function<void(const BenchRow&)>& on_row = {}) {
  using clock = std::chrono::steady_clock;
  plan.validate();
  BenchResult result;
  for (const auto& cell : plan.cells) {
    SimSpec spec;
    spec.model = cell.model;
    spec.n = cell.n;
    spec.p = cell.p;
    spec.J = cell.J;
    spec.d = cell.d;
    spec.seed = plan.seed;
    Dataset data;
    Matrix Y;
    std::uint64_t sum = 0;
    std::string sim_error;
    try {
      if (cell.model == ModelKind::factor) {
        Y = sim_factor(spec);
        sum = checksum(Y);
      } else {
        data = simulate_dataset(spec);
        sum = checksum(data);
      }
    } catch (const Error& e) {
      sim_error = e.what();
    }

    BenchCellSummary cs;
    cs.cell = cell;
    Vector times, draw_times, setup_times;
    double depth_sum = 0.0;
    for (std::size_t rep = 0; rep < plan.reps; ++rep) {
      BenchRow row;
      row.cell = cell;
      row.rep = rep + 1;
      row.checksum = sum;
      try {
        if (!sim_error.empty()) throw Error(sim_error);
        const auto t0 = clock::now();
        const auto model = cell.model == ModelKind::factor
                               ? make_factor_model(cell.backend, Y, cell.d, plan.priors)
                               : make_model(cell.model, cell.backend, data, plan.priors);
        row.setup_ms = detail::elapsed_ms(t0);

        SamplerConfig cfg;
        cfg.warmup = plan.warmup;
        cfg.draws = plan.draws;
        cfg.chains = plan.chains;
        cfg.parallel = plan.parallel_chains;
        cfg.max_treedepth = plan.max_treedepth;
        cfg.target_accept = plan.target_accept;
        cfg.seed = plan.seed * 1000003ull + rep + 1;
        const auto t1 = clock::now();
        const auto chains = adapt_run(*model, cfg);
        row.sampling_ms = detail::elapsed_ms(t1);
        double depth = 0.0;
        for (const auto& ch : chains) {
          row.warmup_ms += ch.warmup_ms;
          row.draws_ms += ch.draws_ms;
          row.divergences += ch.divergences();
          depth += ch.mean_treedepth();
        }
        row.mean_treedepth = depth / static_cast<double>(chains.size());
        times.push_back(row.sampling_ms);
        draw_times.push_back(row.draws_ms);
        setup_times.push_back(row.setup_ms);
        cs.divergences += row.divergences;
        depth_sum += row.mean_treedepth;
      } catch (const Error& e) {
        row.failed = true;
        row.error = e.what();
      }
      if (on_row) on_row(row);
      result.rows.push_back(std::move(row));
    }
    cs.completed = times.size();
    cs.failed = times.empty();
    if (!cs.failed) {
      cs.median_ms = quantile(times, 0.5);
      cs.q25_ms = quantile(times, 0.25);
      cs.q75_ms = quantile(times, 0.75);
      cs.median_draws_ms = quantile(draw_times, 0.5);
      cs.median_setup_ms = quantile(setup_times, 0.5);
      cs.mean_treedepth = depth_sum / static_cast<double>(cs.completed);
    }
    result.cells.push_back(cs);
  }
  return result;
}

inline void write_bench_csv(std::ostream& out, const BenchResult& r) {
  out << "model,backend,n,p,J,d,rep,setup_ms,sampling_ms,warmup_ms,draws_ms,divergences,"
         "mean_treedepth,checksum,status\n";
  for (const auto& row : r.rows) {
    const auto& c = row.cell;
    out << to_string(c.model) << ',' << to_string(c.backend) << ',' << c.n << ',' << c.p << ','
        << c.J << ',' << c.d << ',' << row.rep << ',' << format_double(row.setup_ms) << ','
        << format_double(row.sampling_ms) << ',' << format_double(row.warmup_ms) << ','
        << format_double(row.draws_ms) << ',' << row.divergences << ','
        << format_double(row.mean_treedepth) << ',' << row.checksum << ','
        << (row.failed ? "failed" : "ok") << '\n';
  }
}

inline nlohmann::json to_json(const BenchResult& r, const BenchPlan& plan) {
  nlohmann::json j;
  j["reps"] = plan.reps;
  j["warmup"] = plan.warmup;
  j["draws"] = plan.draws;
  j["chains"] = plan.chains;
  j["parallel_chains"] = plan.parallel_chains;
  j["seed"] = plan.seed;
  auto& cells = j["cells"] = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json e = {{"model", to_string(c.cell.model)},
                        {"backend", to_string(c.cell.backend)},
                        {"n", c.cell.n},
                        {"p", c.cell.p},
                        {"J", c.cell.J},
                        {"d", c.cell.d},
                        {"completed", c.completed},
                        {"failed", c.failed}};
    if (!c.failed) {
      e["median_ms"] = c.median_ms;
      e["q25_ms"] = c.q25_ms;
      e["q75_ms"] = c.q75_ms;
      e["median_draws_ms"] = c.median_draws_ms;
      e["median_setup_ms"] = c.median_setup_ms;
      e["divergences"] = c.divergences;
      e["mean_treedepth"] = c.mean_treedepth;
    }
    for (const auto& row : r.rows)
      if (row.failed && row.cell.model == c.cell.model && row.cell.backend == c.cell.backend &&
          row.cell.n == c.cell.n && row.cell.p == c.cell.p && row.cell.J == c.cell.J &&
          row.cell.d == c.cell.d) {
        e["error"] = row.error;
        break;
      }
    cells.push_back(std::move(e));
  }
  return j;
}

}  // namespace ssmc
