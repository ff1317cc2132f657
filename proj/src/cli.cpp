#include "bprouter/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "bprouter/bench.hpp"
#include "bprouter/config.hpp"
#include "bprouter/metrics.hpp"
#include "bprouter/tuner.hpp"

namespace bprouter {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : "NA";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw InputError(std::string(what) + " not found: " + path);
}

json read_json(const std::string& path, const char* what) {
  require_file(path, what);
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(std::string(what) + " " + path + " is not valid JSON: " + e.what());
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + dir);
}

// Options every experiment subcommand takes.
struct Common {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::string out;
  int seeds = 0;
  std::uint64_t base_seed = 0;
  bool base_seed_given = false;
  int jobs = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("-c,--config", c.configs, "JSON config file; repeatable, later files win");
  cmd->add_option("--set", c.sets, "Override a config key (key=value); repeatable");
  if (with_out) cmd->add_option("-o,--out", c.out, "Output directory")->required();
  cmd->add_option("--seeds", c.seeds, "Number of seeds (overrides the scenario)")->check(CLI::PositiveNumber);
  cmd->add_option_function<std::uint64_t>(
      "--base-seed",
      [&c](const std::uint64_t& v) {
        c.base_seed = v;
        c.base_seed_given = true;
      },
      "First seed");
  cmd->add_option("-j,--jobs", c.jobs, "Worker threads for seed fan-out")->check(CLI::PositiveNumber);
}

ExperimentConfig load_config(const Common& c, const EnvLookup& env) {
  ExperimentConfig cfg;
  try {
    for (const auto& path : c.configs) {
      require_file(path, "config file");
      cfg.load_file(path);
    }
    cfg.apply_env(env);
    cfg.apply_overrides(c.sets);
    (void)cfg.router();
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
  return cfg;
}

std::vector<std::uint64_t> seed_list(const Common& c, int fallback_count, std::uint64_t fallback_base) {
  const int n = c.seeds > 0 ? c.seeds : fallback_count;
  const std::uint64_t base = c.base_seed_given ? c.base_seed : fallback_base;
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(base + static_cast<std::uint64_t>(i));
  return out;
}

// Runs f(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename F>
void fan_out(std::size_t n, int jobs, F f) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

json manifest(const std::string& sub, const Common& c, const std::string& scenario,
              const std::vector<std::uint64_t>& seeds, const ExperimentConfig& cfg) {
  return {{"subcommand", sub},
          {"config", c.configs},
          {"scenario", scenario.empty() ? json(nullptr) : json(scenario)},
          {"out", c.out},
          {"seeds", seeds},
          {"overrides", c.sets},
          {"resolved_config", cfg.doc()}};
}

std::string ci_cell(const json& stat, int end) {
  if (stat.is_null() || stat.at("ci").is_null()) return "NA";
  return num(stat.at("ci").at(end).get<double>());
}

// --- simulate --------------------------------------------------------------

struct SimulateArgs {
  Common common;
  std::string scenario;
  std::size_t window = 50;
  std::size_t resamples = 10000;
  bool snapshots = false;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out, const EnvLookup& env) {
  const auto cfg = load_config(a.common, env);
  Scenario sc;
  try {
    sc = read_json(a.scenario, "scenario file").get<Scenario>();
    sc.validate();
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError("scenario " + a.scenario + ": " + e.what());
  }
  // An explicit budget in the layered config beats the scenario's.
  const auto& b = cfg.doc().at("pacer").at("budget_per_request");
  if (!b.is_null()) sc.budget = b.get<double>();
  const auto seeds = seed_list(a.common, sc.n_seeds, sc.base_seed);

  Source source;
  RunConfig run;
  try {
    source = cfg.source();
    run = cfg.run_config(source);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  run.keep_snapshot = a.snapshots;
  ensure_dir(a.common.out);

  std::vector<SeedTrace> traces(seeds.size());
  fan_out(seeds.size(), a.common.jobs, [&](std::size_t i) {
    traces[i] = run_seed(sc, source, run, seeds[i]);
    const auto stem = a.common.out + "/trace_seed" + std::to_string(seeds[i]);
    write_trace_jsonl(traces[i], stem + ".jsonl");
    if (traces[i].final_snapshot) {
      write_file_atomic(a.common.out + "/snapshot_seed" + std::to_string(seeds[i]) + ".json",
                        traces[i].final_snapshot->dump(1) + "\n");
    }
  });

  json summary = write_report(traces, a.common.out, a.window, a.resamples);
  write_file_atomic(a.common.out + "/manifest.json",
                    manifest("simulate", a.common, a.scenario, seeds, cfg).dump(2) + "\n");
  json brief{{"status", "ok"}, {"scenario", sc.name}, {"seeds", seeds.size()}, {"out", a.common.out}};
  brief["phases"] = json::array();
  for (const auto& ph : summary.at("aggregate").at("phases")) {
    brief["phases"].push_back({{"phase", ph.at("phase")},
                               {"mean_reward", ph.at("mean_reward").at("mean")},
                               {"compliance", ph.at("compliance").is_null() ? json(nullptr)
                                                                             : ph.at("compliance").at("mean")}});
  }
  out << brief.dump() << '\n';
  return kExitOk;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  Common common;
  std::vector<double> budgets;
  std::vector<double> range;
  int length = 600;
  bool unconstrained = false;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out, const EnvLookup& env) {
  const auto cfg = load_config(a.common, env);
  std::vector<double> budgets = a.budgets;
  if (!a.range.empty()) {
    if (a.range.size() != 3) throw InputError("--range takes LO HI COUNT");
    budgets = log_spaced(a.range[0], a.range[1], static_cast<int>(a.range[2]));
  }
  if (budgets.empty()) budgets = {3.0e-4, 6.6e-4, 1.9e-3};
  std::sort(budgets.begin(), budgets.end());
  for (double v : budgets) {
    if (!(v > 0.0)) throw InputError("budgets must be positive");
  }
  if (a.unconstrained) budgets.push_back(std::numeric_limits<double>::infinity());
  const auto seeds = seed_list(a.common, 5, 0);

  Source source;
  RunConfig run;
  try {
    source = cfg.source();
    run = cfg.run_config(source);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  ensure_dir(a.common.out);

  std::vector<std::vector<BudgetPoint>> per_seed(seeds.size());
  fan_out(seeds.size(), a.common.jobs, [&](std::size_t i) {
    per_seed[i] = run_budget_sweep(budgets, a.length, source, run, {seeds[i]});
  });

  std::ostringstream csv;
  csv << "budget,seed,mean_cost,mean_reward,compliance\n";
  json points = json::array();
  std::vector<double> auc;
  const double lo = budgets.front();
  double hi = lo;
  for (double v : budgets) {
    if (std::isfinite(v)) hi = v;
  }
  for (const auto& pts : per_seed) {
    std::vector<CostRewardPoint> cr;
    for (const auto& p : pts) {
      const double comp = std::isfinite(p.budget) ? p.mean_cost / p.budget : std::nan("");
      csv << num(p.budget) << ',' << p.seed << ',' << num(p.mean_cost) << ',' << num(p.mean_reward) << ','
          << num(comp) << '\n';
      points.push_back({{"budget", std::isfinite(p.budget) ? json(p.budget) : json(nullptr)},
                        {"seed", p.seed},
                        {"mean_cost", p.mean_cost},
                        {"mean_reward", p.mean_reward}});
      cr.push_back({p.mean_cost, p.mean_reward});
    }
    auc.push_back(frontier_auc(pareto_frontier(cr), lo, hi));
  }
  write_file_atomic(a.common.out + "/sweep.csv", csv.str());
  json summary{{"budgets", json::array()}, {"seeds", seeds}, {"points", points}, {"frontier_auc", auc}};
  for (double v : budgets) summary["budgets"].push_back(std::isfinite(v) ? json(v) : json(nullptr));
  summary["frontier_auc_mean"] = mean_of(auc);
  summary["frontier_auc_ci"] = auc.size() >= 2 ? json({bootstrap_ci(auc).low, bootstrap_ci(auc).high}) : json(nullptr);
  write_file_atomic(a.common.out + "/sweep.json", summary.dump(2) + "\n");
  write_file_atomic(a.common.out + "/manifest.json", manifest("sweep", a.common, "", seeds, cfg).dump(2) + "\n");
  out << json{{"status", "ok"}, {"points", points.size()}, {"frontier_auc_mean", summary["frontier_auc_mean"]}}.dump()
      << '\n';
  return kExitOk;
}

// --- tune ------------------------------------------------------------------

struct TuneArgs {
  Common common;
  std::string grid;
  std::vector<double> t_adapts;
};

json cell_json(const GridCell& c) {
  return {{"alpha", c.alpha}, {"gamma", c.gamma}, {"n_eff", c.n_eff}, {"auc", c.auc()}, {"p2_reward", c.p2_reward()}};
}

int cmd_tune(const TuneArgs& a, std::ostream& out, const EnvLookup& env) {
  const auto cfg = load_config(a.common, env);
  GridSpec spec;
  try {
    spec = read_json(a.grid, "grid file").get<GridSpec>();
    if (a.common.seeds > 0) spec.seeds = seed_list(a.common, 0, 0);
    spec.validate();
  } catch (const InputError&) {
    throw;
  } catch (const std::exception& e) {
    throw InputError("grid " + a.grid + ": " + e.what());
  }
  std::vector<double> horizons = a.t_adapts;
  if (horizons.empty()) horizons = {spec.t_adapt};

  Source source;
  RunConfig run;
  try {
    source = cfg.source();
    run = cfg.run_config(source);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  ensure_dir(a.common.out);

  json rows = json::array();
  for (double t : horizons) {
    GridSpec s = spec;
    s.t_adapt = t;
    const auto cells = evaluate_grid(s, source, run);
    const auto knee = select_knee(cells);
    const auto best = select_max_auc(cells);
    const auto stab = knee_bootstrap_stability(cells, s.bootstrap_iterations, 0);
    const auto tag = "t" + num(t);
    write_file_atomic(a.common.out + "/grid_" + tag + ".csv", grid_to_csv(cells));
    write_file_atomic(a.common.out + "/grid_" + tag + ".json", grid_to_json(cells).dump(2) + "\n");
    rows.push_back({{"t_adapt", t},
                    {"knee", cell_json(cells[knee])},
                    {"max_auc", cell_json(cells[best])},
                    {"stability",
                     {{"iterations", stab.iterations},
                      {"knee_fraction", stab.knee_fraction},
                      {"modal", cell_json(cells[stab.modal])},
                      {"modal_fraction", stab.modal_fraction},
                      {"within_one_gamma_fraction", stab.within_one_gamma_fraction}}}});
  }
  json report{{"grid", spec}, {"rows", rows}};
  write_file_atomic(a.common.out + "/knee_report.json", report.dump(2) + "\n");
  write_file_atomic(a.common.out + "/manifest.json",
                    manifest("tune", a.common, a.grid, spec.seeds, cfg).dump(2) + "\n");
  out << json{{"status", "ok"}, {"rows", rows}}.dump() << '\n';
  return kExitOk;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string out;
  std::vector<int> dims{26, 385};
  std::vector<std::string> variants;
  int cycles = 4500;
  int warmup = 500;
  std::uint64_t seed = 0;
  int equivalence_cycles = 1000;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  std::vector<BenchVariant> variants;
  try {
    if (a.variants.empty()) {
      variants = {BenchVariant::kFullRouter, BenchVariant::kBareSM, BenchVariant::kCachedInverse,
                  BenchVariant::kPerRouteInverse};
    }
    for (const auto& v : a.variants) variants.push_back(parse_variant(v));
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  if (!a.out.empty()) ensure_dir(a.out);
  std::ostringstream csv;
  csv << bench_csv_header() << '\n';
  json results = json::array();
  json equivalence = json::array();
  for (int d : a.dims) {
    for (auto v : variants) {
      BenchConfig cfg;
      cfg.dim = d;
      cfg.variant = v;
      cfg.measured_cycles = a.cycles;
      cfg.warmup_cycles = a.warmup;
      cfg.seed = a.seed;
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
      }
      const auto r = run_bench(cfg);
      csv << bench_csv_row(r) << '\n';
      results.push_back(bench_to_json(r));
    }
    const auto eq = check_equivalence(d, 3, a.equivalence_cycles, a.seed);
    equivalence.push_back({{"dim", d},
                           {"cycles", a.equivalence_cycles},
                           {"decisions_identical", eq.decisions_identical},
                           {"max_theta_diff", eq.max_theta_diff}});
  }
  json doc{{"machine", machine_metadata()}, {"results", results}, {"equivalence", equivalence}};
  if (!a.out.empty()) {
    write_file_atomic(a.out + "/bench.csv", csv.str());
    write_file_atomic(a.out + "/bench.json", doc.dump(2) + "\n");
  }
  out << doc.dump() << '\n';
  return kExitOk;
}

// --- report ----------------------------------------------------------------

struct ReportArgs {
  std::string traces;
  std::string out;
  std::size_t window = 50;
  std::size_t resamples = 10000;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  if (!fs::is_directory(a.traces)) throw InputError("trace directory not found: " + a.traces);
  const auto paths = find_traces(a.traces);
  if (paths.empty()) throw InputError("no trace_*.jsonl files in " + a.traces);
  std::vector<SeedTrace> traces;
  for (const auto& p : paths) {
    try {
      traces.push_back(read_trace_jsonl(p));
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
  }
  std::sort(traces.begin(), traces.end(), [](const SeedTrace& x, const SeedTrace& y) { return x.seed < y.seed; });
  const std::string dir = a.out.empty() ? a.traces : a.out;
  ensure_dir(dir);
  write_report(traces, dir, a.window, a.resamples);
  out << json{{"status", "ok"}, {"traces", traces.size()}, {"out", dir}}.dump() << '\n';
  return kExitOk;
}

// --- snapshot-inspect ------------------------------------------------------

int cmd_snapshot(const std::string& path, std::ostream& out) {
  const json doc = read_json(path, "snapshot file");
  std::unique_ptr<Router> r;
  try {
    r = Router::from_snapshot(doc);
  } catch (const std::exception& e) {
    throw InputError("snapshot " + path + ": " + e.what());
  }
  json arms = json::array();
  for (const auto& v : r->arms()) {
    arms.push_back({{"id", v.id},
                    {"price", v.price},
                    {"c_tilde", v.c_tilde},
                    {"n_updates", v.state->n_updates()},
                    {"last_update", v.state->last_update()},
                    {"last_played", v.state->last_played()},
                    {"floor_lifts", v.state->floor_lifts()},
                    {"theta_norm", v.state->theta().norm()}});
  }
  json burn = json::array();
  for (const auto& [id, left] : r->burn_in_queue()) burn.push_back({{"arm", id}, {"remaining", left}});
  json info{{"format_version", Router::kFormatVersion},
            {"dim", r->config().dim},
            {"step", r->step()},
            {"lambda", r->lambda()},
            {"cost_ema", r->cost_ema()},
            {"pending", r->pending()},
            {"discarded_feedback", r->discarded_feedback()},
            {"ceiling_overrides", r->ceiling_overrides()},
            {"evicted", r->evicted()},
            {"burn_in", burn},
            {"arms", arms}};
  out << info.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << content;
    if (!f) throw std::runtime_error("failed writing " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move file into place: " + path);
}

std::vector<std::string> find_traces(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("trace_", 0) == 0 && e.path().extension() == ".jsonl") {
      out.push_back(e.path().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

json write_report(const std::vector<SeedTrace>& traces, const std::string& dir, std::size_t window,
                  std::size_t resamples) {
  const json agg = aggregate_report(traces, resamples);
  json per_seed = json::array();
  std::ostringstream seeds_csv;
  seeds_csv << "seed,phase,mean_reward,mean_cost,compliance,ceiling_violations,cumulative_regret\n";
  for (const auto& t : traces) {
    const auto s = summarize(t);
    json j = summary_to_json(s, t.arms);
    j["seed"] = t.seed;
    per_seed.push_back(std::move(j));
    for (std::size_t p = 0; p < t.phases.size(); ++p) {
      seeds_csv << t.seed << ',' << p + 1 << ',' << num(s.mean_reward[p]) << ',' << num(s.mean_cost[p]) << ','
                << (s.compliance.empty() ? std::string("NA") : num(s.compliance[p])) << ','
                << s.ceiling_violations << ',' << num(s.cumulative_regret) << '\n';
    }
  }

  std::ostringstream phases;
  phases << "phase,mean_reward,reward_ci_low,reward_ci_high,mean_cost,compliance,compliance_ci_low,"
            "compliance_ci_high\n";
  for (const auto& ph : agg.at("phases")) {
    const auto& comp = ph.at("compliance");
    phases << ph.at("phase").get<int>() << ',' << num(ph.at("mean_reward").at("mean").get<double>()) << ','
           << ci_cell(ph.at("mean_reward"), 0) << ',' << ci_cell(ph.at("mean_reward"), 1) << ','
           << num(ph.at("mean_cost").at("mean").get<double>()) << ','
           << (comp.is_null() ? std::string("NA") : num(comp.at("mean").get<double>())) << ','
           << ci_cell(comp, 0) << ',' << ci_cell(comp, 1) << '\n';
  }

  std::ostringstream win;
  const auto& arms = traces.front().arms;
  win << "seed,window,end_step,mean_reward,mean_cost";
  for (const auto& id : arms) win << ",share_" << id;
  win << '\n';
  for (const auto& t : traces) {
    const auto w = windowed(t, window);
    for (std::size_t i = 0; i < w.reward.size(); ++i) {
      win << t.seed << ',' << i << ',' << std::min((i + 1) * window, t.steps.size()) << ',' << num(w.reward[i])
          << ',' << num(w.cost[i]);
      for (const auto& id : arms) {
        const auto it = std::find(w.arms.begin(), w.arms.end(), id);
        win << ',' << (it == w.arms.end() ? std::string("0") : num(w.share[i][static_cast<std::size_t>(it - w.arms.begin())]));
      }
      win << '\n';
    }
  }

  json summary{{"aggregate", agg}, {"per_seed", per_seed}, {"window", window}};
  if (traces.size() < 2) summary["ci_note"] = "single seed: confidence intervals omitted";
  write_file_atomic(dir + "/summary.json", summary.dump(2) + "\n");
  write_file_atomic(dir + "/phases.csv", phases.str());
  write_file_atomic(dir + "/seeds.csv", seeds_csv.str());
  write_file_atomic(dir + "/windows.csv", win.str());
  return summary;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"Budget-paced contextual bandit router: experiments and tools", "bprouter"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "bprouter 1.0");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario and write traces plus a summary");
  add_common(simulate, sim.common);
  simulate->add_option("-s,--scenario", sim.scenario, "Scenario JSON file")->required();
  simulate->add_option("--window", sim.window, "Window length for time series")->check(CLI::PositiveNumber);
  simulate->add_option("--resamples", sim.resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
  simulate->add_flag("--snapshots", sim.snapshots, "Also write the final router snapshot per seed");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Budget sweep and cost-reward frontier");
  add_common(sweep, sw.common);
  sweep->add_option("--budgets", sw.budgets, "Budgets in $/request");
  sweep->add_option("--range", sw.range, "LO HI COUNT, log-spaced budgets")->expected(3);
  sweep->add_option("--length", sw.length, "Prompts per run")->check(CLI::PositiveNumber);
  sweep->add_flag("--unconstrained", sw.unconstrained, "Add an unpaced run");

  TuneArgs tn;
  auto* tune = app.add_subcommand("tune", "Grid search over alpha and gamma with knee selection");
  add_common(tune, tn.common);
  tune->add_option("-g,--grid", tn.grid, "Grid spec JSON file")->required();
  tune->add_option("--t-adapt", tn.t_adapts, "Adaptation horizons; one report row each");

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Latency microbenchmark");
  bench->add_option("-o,--out", bn.out, "Output directory");
  bench->add_option("--dim", bn.dims, "Context dimensions")->check(CLI::PositiveNumber);
  bench->add_option("--variant", bn.variants, "full_router, bare_sm, cached_inverse, per_route_inverse");
  bench->add_option("--cycles", bn.cycles, "Measured cycles")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bn.warmup, "Warmup cycles")->check(CLI::NonNegativeNumber);
  bench->add_option("--seed", bn.seed, "Stream seed");
  bench->add_option("--equivalence-cycles", bn.equivalence_cycles, "Cycles for the equivalence check")
      ->check(CLI::PositiveNumber);

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Tables and series from a directory of traces");
  report->add_option("traces", rp.traces, "Directory holding trace_*.jsonl")->required();
  report->add_option("-o,--out", rp.out, "Output directory (default: the trace directory)");
  report->add_option("--window", rp.window, "Window length")->check(CLI::PositiveNumber);
  report->add_option("--resamples", rp.resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);

  std::string snap_path;
  auto* snap = app.add_subcommand("snapshot-inspect", "Summarize a router snapshot");
  snap->add_option("snapshot", snap_path, "Snapshot JSON file")->required();

  std::vector<std::string> argv_store = args;
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, out, env);
    if (*sweep) return cmd_sweep(sw, out, env);
    if (*tune) return cmd_tune(tn, out, env);
    if (*bench) return cmd_bench(bn, out);
    if (*report) return cmd_report(rp, out);
    if (*snap) return cmd_snapshot(snap_path, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr, [](const char* name) { return std::getenv(name); });
}

}  // namespace bprouter
