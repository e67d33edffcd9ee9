// ssmc: simulate data, sample posteriors, run the timing grid, compare runs.
//
// Exit codes: 0 success, 2 usage error, 3 sampler failure, 4 comparison failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssmc/ssmc.hpp"

namespace fs = std::filesystem;
using namespace ssmc;

namespace {

constexpr int kOk = 0, kUsage = 2, kSamplerFailure = 3, kCompareFailure = 4;

struct UsageError : Error {
  using Error::Error;
};

template <class F>
void write_file(const fs::path& path, F&& fill) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  fill(out);
  if (!out) throw ConfigError("error writing '" + path.string() + "'");
}

fs::path prepare_out_dir(std::string dir) {
  if (const char* env = std::getenv("SSMC_OUT_DIR"); env && *env) dir = env;
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

struct SimArgs {
  std::string model = "regression";
  std::size_t n = 100, p = 0, J = 5, d = 3;
  std::uint64_t seed = 1;

  SimSpec spec() const {
    SimSpec s;
    s.model = parse_model(model);
    s.n = n;
    s.p = p;
    s.J = J;
    s.d = d;
    s.seed = seed;
    return s;
  }
};

struct PriorArgs {
  std::string b, sigma, sd_u, L_d, mu_psi, sigma_psi, mu_lt, sigma_lt;
  std::optional<double> fixed_sigma;

  ModelPriors resolve() const {
    ModelPriors mp;
    auto set = [](const std::string& text, PriorSpec& target) {
      if (!text.empty()) target = parse_prior(text);
    };
    set(b, mp.regression.b);
    set(b, mp.mixed.b);
    set(b, mp.poisson.b);
    set(sigma, mp.regression.sigma);
    set(sigma, mp.mixed.sigma);
    set(sd_u, mp.mixed.sd_u);
    set(L_d, mp.factor.L_d);
    set(mu_psi, mp.factor.mu_psi);
    set(sigma_psi, mp.factor.sigma_psi);
    set(mu_lt, mp.factor.mu_lt);
    set(sigma_lt, mp.factor.sigma_lt);
    if (fixed_sigma) {
      if (!(*fixed_sigma > 0.0)) throw UsageError("--fixed-sigma must be positive");
      mp.regression.fixed_sigma = fixed_sigma;
    }
    return mp;
  }
};

void add_sim_options(CLI::App* cmd, SimArgs& a, const std::string& seed_flag) {
  cmd->add_option("--model", a.model, "regression | mixed | factor | poisson");
  cmd->add_option("--n", a.n, "observations");
  cmd->add_option("--p", a.p, "covariates (factor: observed dimension); default 10, mixed 5");
  cmd->add_option("--J", a.J, "groups (mixed)");
  cmd->add_option("--d", a.d, "latent factors (factor)");
  cmd->add_option(seed_flag, a.seed, "data seed");
}

int cmd_simulate(const SimArgs& a, const std::string& out_path) {
  const SimSpec spec = a.spec();
  auto emit = [&](std::ostream& out) {
    if (spec.model == ModelKind::factor)
      write_factor_csv(out, sim_factor(spec));
    else
      write_dataset_csv(out, simulate_dataset(spec));
  };
  if (out_path.empty()) {
    emit(std::cout);
  } else {
    const fs::path p(out_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file(p, emit);
  }
  return kOk;
}

struct SampleArgs {
  SimArgs sim;
  std::string backend = "suffstat";
  std::string data;
  PriorArgs priors;
  SamplerConfig cfg;
  bool parallel = true;
  std::string out_dir = ".";
};

nlohmann::json run_info(const SampleArgs& a, std::uint64_t data_checksum,
                        const std::vector<ChainOutput>& chains) {
  nlohmann::json j = {{"model", a.sim.model},
                      {"backend", a.backend},
                      {"data", a.data.empty() ? "simulated" : a.data},
                      {"data_checksum", data_checksum},
                      {"seed", a.cfg.seed},
                      {"chains", a.cfg.chains},
                      {"warmup", a.cfg.warmup},
                      {"draws", a.cfg.draws},
                      {"target_accept", a.cfg.target_accept},
                      {"max_treedepth", a.cfg.max_treedepth}};
  auto& per_chain = j["chain_info"] = nlohmann::json::array();
  for (std::size_t c = 0; c < chains.size(); ++c)
    per_chain.push_back({{"chain", c + 1},
                         {"stepsize", chains[c].stepsize},
                         {"divergences", chains[c].divergences()},
                         {"mean_treedepth", chains[c].mean_treedepth()},
                         {"mean_accept_stat", chains[c].mean_accept_stat()},
                         {"warmup_ms", chains[c].warmup_ms},
                         {"draws_ms", chains[c].draws_ms}});
  return j;
}

int cmd_sample(SampleArgs a) {
  const ModelKind kind = parse_model(a.sim.model);
  const Backend backend = parse_backend(a.backend);
  const ModelPriors priors = a.priors.resolve();
  a.cfg.parallel = a.parallel;

  std::unique_ptr<PosteriorModel> model;
  std::uint64_t sum = 0;
  if (kind == ModelKind::factor) {
    const Matrix Y = a.data.empty() ? sim_factor(a.sim.spec()) : read_factor_csv(a.data);
    sum = checksum(Y);
    model = make_factor_model(backend, Y, a.sim.d, priors);
  } else {
    const Dataset d = a.data.empty() ? simulate_dataset(a.sim.spec()) : read_dataset_csv(a.data);
    sum = checksum(d);
    model = make_model(kind, backend, d, priors);
  }
  a.cfg.validate();
  const fs::path dir = prepare_out_dir(a.out_dir);

  std::vector<ChainOutput> chains;
  try {
    chains = adapt_run(*model, a.cfg);
  } catch (const AllDivergent& e) {
    write_file(dir / "sampler_stats.csv",
               [&](std::ostream& o) { write_sampler_stats_csv(o, e.chains(), true); });
    auto info = run_info(a, sum, e.chains());
    info["error"] = e.what();
    write_file(dir / "failure.json", [&](std::ostream& o) { o << info.dump(2) << '\n'; });
    std::cerr << "ssmc sample: " << e.what() << "\n  diagnostics written to "
              << (dir / "sampler_stats.csv").string() << '\n';
    return kSamplerFailure;
  } catch (const Error& e) {
    std::cerr << "ssmc sample: sampler failure: " << e.what() << '\n';
    return kSamplerFailure;
  }

  const Summary summary = summarize(chains);
  write_file(dir / "draws.csv", [&](std::ostream& o) { write_draws_csv(o, chains); });
  write_file(dir / "sampler_stats.csv",
             [&](std::ostream& o) { write_sampler_stats_csv(o, chains); });
  auto j = to_json(summary);
  j["run"] = run_info(a, sum, chains);
  write_file(dir / "summary.json", [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  write_file(dir / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, summary); });
  std::cerr << "ssmc sample: " << summary.params.size() << " parameters, "
            << summary.divergences << " divergences; output in " << dir.string() << '\n';
  return kOk;
}

struct BenchArgs {
  bool quick = false;
  std::optional<std::size_t> reps, warmup, draws, chains;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_treedepth;
  std::optional<double> target_accept;
  bool parallel = false;
  std::vector<std::string> cells;
  PriorArgs priors;
  std::string out_dir = ".";
};

/// "model:backend:n:p:J:d", e.g. "factor:suffstat_woodbury:1000:20:0:5".
BenchCell parse_cell(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = text.find(':', start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (parts.size() != 6)
    throw UsageError("cell '" + text + "' must look like model:backend:n:p:J:d");
  auto count = [&](const std::string& s) {
    const double v = parse_double(s);
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
      throw UsageError("cell '" + text + "': sizes must be nonnegative integers");
    return static_cast<std::size_t>(v);
  };
  return {parse_model(parts[0]), parse_backend(parts[1]), count(parts[2]), count(parts[3]),
          count(parts[4]), count(parts[5])};
}

int cmd_bench(const BenchArgs& a) {
  BenchPlan plan;
  if (a.quick) {
    plan = quick_plan();
  } else {
    plan.cells = desk_grid();
  }
  if (!a.cells.empty()) {
    plan.cells.clear();
    for (const auto& c : a.cells) plan.cells.push_back(parse_cell(c));
  }
  if (a.reps) plan.reps = *a.reps;
  if (a.warmup) plan.warmup = *a.warmup;
  if (a.draws) plan.draws = *a.draws;
  if (a.chains) plan.chains = *a.chains;
  if (a.seed) plan.seed = *a.seed;
  if (a.max_treedepth) plan.max_treedepth = *a.max_treedepth;
  if (a.target_accept) plan.target_accept = *a.target_accept;
  plan.parallel_chains = a.parallel;
  plan.priors = a.priors.resolve();
  plan.validate();
  {
    SamplerConfig probe;
    probe.warmup = plan.warmup;
    probe.chains = plan.chains;
    probe.target_accept = plan.target_accept;
    probe.max_treedepth = plan.max_treedepth;
    probe.validate();
  }
  const fs::path dir = prepare_out_dir(a.out_dir);

  const BenchResult result = run_bench(plan, [](const BenchRow& r) {
    std::cerr << to_string(r.cell.model) << '/' << to_string(r.cell.backend) << " n=" << r.cell.n
              << " p=" << r.cell.p << " J=" << r.cell.J << " d=" << r.cell.d << " rep " << r.rep
              << ": "
              << (r.failed ? "FAILED (" + r.error + ")" : format_double(r.sampling_ms) + " ms")
              << '\n';
  });
  write_file(dir / "bench.csv", [&](std::ostream& o) { write_bench_csv(o, result); });
  write_file(dir / "bench.json",
             [&](std::ostream& o) { o << to_json(result, plan).dump(2) << '\n'; });
  return result.all_failed() ? kSamplerFailure : kOk;
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& out_dir) {
  const auto ra = read_draws_csv(a);
  const auto rb = read_draws_csv(b);
  const ComparisonReport rep = compare_posteriors(ra, rb);
  const fs::path dir = prepare_out_dir(out_dir);
  write_file(dir / "comparison.json",
             [&](std::ostream& o) { o << to_json(rep).dump(2) << '\n'; });
  write_file(dir / "comparison.csv", [&](std::ostream& o) { write_comparison_csv(o, rep); });
  std::size_t passed = 0;
  for (const auto& p : rep.params) passed += p.pass();
  std::cout << (rep.pass ? "PASS" : "FAIL") << ": " << passed << '/' << rep.params.size()
            << " parameters agree\n";
  return rep.pass ? kOk : kCompareFailure;
}

/// Splices `--config FILE` entries in front of the command-line flags so
/// that flags given on the command line win.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  if (args.size() < 2) return args;
  CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[1]);
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::vector<std::string> rest;
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty()) return args;
  std::vector<std::string> out{args[0], args[1]};
  for (const auto& [key, value] : parse_config_file(path)) {
    if (key == "config" || !sub->get_option_no_throw("--" + key))
      throw UsageError(path + ": unknown key '" + key + "' for '" + args[1] + "'");
    out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian sampling with sufficient-statistic likelihoods"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_unused;

  SimArgs sim;
  std::string sim_out;
  auto* simulate = app.add_subcommand("simulate", "write a simulated dataset as CSV");
  add_sim_options(simulate, sim, "--seed");
  simulate->add_option("--out", sim_out, "output CSV (default: stdout)");
  simulate->add_option("--config", config_unused, "key = value file");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "run NUTS on one model");
  add_sim_options(sample, sa.sim, "--sim-seed");
  sample->add_option("--backend", sa.backend, "naive | suffstat | suffstat_woodbury");
  sample->add_option("--data", sa.data, "dataset CSV (default: simulate)");
  sample->add_option("--seed", sa.cfg.seed, "sampler seed");
  sample->add_option("--chains", sa.cfg.chains);
  sample->add_option("--warmup", sa.cfg.warmup);
  sample->add_option("--draws", sa.cfg.draws);
  sample->add_option("--target-accept", sa.cfg.target_accept);
  sample->add_option("--max-treedepth", sa.cfg.max_treedepth);
  sample->add_option("--init-radius", sa.cfg.init_radius);
  sample->add_flag("--parallel,!--sequential", sa.parallel, "run chains on threads");
  sample->add_option("--out-dir", sa.out_dir);
  sample->add_option("--config", config_unused, "key = value file");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "time the (model, backend, size) grid");
  bench->add_flag("--quick", ba.quick, "small smoke grid");
  bench->add_option("--reps", ba.reps);
  bench->add_option("--warmup", ba.warmup);
  bench->add_option("--draws", ba.draws);
  bench->add_option("--chains", ba.chains);
  bench->add_option("--seed", ba.seed);
  bench->add_option("--max-treedepth", ba.max_treedepth);
  bench->add_option("--target-accept", ba.target_accept);
  bench->add_flag("--parallel,!--sequential", ba.parallel, "run chains on threads");
  bench->add_option("--cell", ba.cells, "model:backend:n:p:J:d (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  bench->add_option("--out-dir", ba.out_dir);
  bench->add_option("--config", config_unused, "key = value file");

  for (CLI::App* cmd : {sample, bench}) {
    PriorArgs& pr = cmd == sample ? sa.priors : ba.priors;
    cmd->add_option("--prior-b", pr.b, "e.g. normal(0,10)");
    cmd->add_option("--prior-sigma", pr.sigma, "e.g. half_student_t(3,0,3.7)");
    cmd->add_option("--prior-sd-u", pr.sd_u);
    cmd->add_option("--prior-L-d", pr.L_d);
    cmd->add_option("--prior-mu-psi", pr.mu_psi);
    cmd->add_option("--prior-sigma-psi", pr.sigma_psi);
    cmd->add_option("--prior-mu-lt", pr.mu_lt);
    cmd->add_option("--prior-sigma-lt", pr.sigma_lt);
    cmd->add_option("--fixed-sigma", pr.fixed_sigma, "regression: pin sigma");
  }

  std::string cmp_a, cmp_b, cmp_out = ".";
  auto* compare = app.add_subcommand("compare", "compare two draws CSVs");
  compare->add_option("a", cmp_a, "first draws CSV")->required();
  compare->add_option("b", cmp_b, "second draws CSV")->required();
  compare->add_option("--out-dir", cmp_out);
  compare->add_option("--config", config_unused, "key = value file");

  try {
    const auto args = expand_config(app, std::vector<std::string>(argv, argv + argc));
    std::vector<const char*> cargs;
    for (const auto& s : args) cargs.push_back(s.c_str());
    try {
      app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? kOk : kUsage;
    }

    if (*simulate) return cmd_simulate(sim, sim_out);
    if (*sample) return cmd_sample(sa);
    if (*bench) return cmd_bench(ba);
    if (*compare) return cmd_compare(cmp_a, cmp_b, cmp_out);
  } catch (const Error& e) {
    std::cerr << "ssmc: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "ssmc: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
