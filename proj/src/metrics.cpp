#include "bprouter/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace bprouter {

std::vector<double> regret_series(const std::vector<double>& oracle, const std::vector<double>& rewards) {
  if (oracle.size() != rewards.size()) throw std::invalid_argument("oracle must cover every step");
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    acc += oracle[i] - rewards[i];
    out[i] = acc;
  }
  return out;
}

std::vector<double> regret_series(const SeedTrace& trace) {
  std::vector<double> oracle, rewards;
  for (const auto& s : trace.steps) {
    oracle.push_back(s.oracle_reward);
    rewards.push_back(s.reward);
  }
  return regret_series(oracle, rewards);
}

double regret_at(const std::vector<double>& series, std::size_t k) {
  if (series.empty() || k == 0) return 0.0;
  return series[std::min(k, series.size()) - 1];
}

namespace {

template <typename F>
std::vector<double> per_phase_mean(const SeedTrace& trace, F value) {
  const std::size_t n = trace.phases.size();
  std::vector<double> sum(n, 0.0), count(n, 0.0);
  for (const auto& s : trace.steps) {
    sum.at(static_cast<std::size_t>(s.phase)) += value(s);
    count[static_cast<std::size_t>(s.phase)] += 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) sum[i] = count[i] > 0 ? sum[i] / count[i] : 0.0;
  return sum;
}

}  // namespace

std::vector<double> phase_mean_reward(const SeedTrace& trace) {
  return per_phase_mean(trace, [](const StepLog& s) { return s.reward; });
}

std::vector<double> phase_mean_cost(const SeedTrace& trace) {
  return per_phase_mean(trace, [](const StepLog& s) { return s.cost; });
}

std::vector<double> compliance(const SeedTrace& trace, double budget) {
  if (!(budget > 0.0)) throw std::invalid_argument("compliance needs a positive budget");
  auto out = phase_mean_cost(trace);
  for (auto& c : out) c /= budget;
  return out;
}

double phase_selection_fraction(const SeedTrace& trace, int phase, const std::string& arm) {
  const int idx = trace.arm_index(arm);
  double hit = 0.0, n = 0.0;
  for (const auto& s : trace.steps) {
    if (s.phase != phase) continue;
    n += 1.0;
    if (s.arm == idx) hit += 1.0;
  }
  return n > 0 ? hit / n : 0.0;
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean of an empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty sample");
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Interval bootstrap_ci(const std::vector<double>& values, double level, std::size_t resamples, std::uint64_t seed,
                      Statistic stat) {
  if (values.size() < 2) throw std::invalid_argument("bootstrap needs at least two values");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  if (resamples < 1) throw std::invalid_argument("bootstrap needs at least one resample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> stats(resamples);
  std::vector<double> sample(values.size());
  for (auto& out : stats) {
    for (auto& v : sample) v = values[pick(rng)];
    out = stat == Statistic::kMean ? mean_of(sample) : median(sample);
  }
  std::sort(stats.begin(), stats.end());
  // Linear interpolation between order statistics.
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(stats.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, stats.size() - 1);
    return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
  };
  const double tail = 0.5 * (1.0 - level);
  return {quantile(tail), quantile(1.0 - tail)};
}

CatastrophicReport catastrophic_flags(const std::vector<double>& regrets, double pooled_median) {
  CatastrophicReport r;
  r.threshold = 2.0 * pooled_median;
  for (double v : regrets) {
    const bool flag = v > r.threshold;
    r.flags.push_back(flag);
    r.count += flag;
  }
  return r;
}

WindowSeries windowed(const SeedTrace& trace, std::size_t window) {
  if (window < 1) throw std::invalid_argument("window must be at least 1");
  WindowSeries w;
  w.window = window;
  w.arms = trace.arms;
  for (std::size_t start = 0; start < trace.steps.size(); start += window) {
    const std::size_t end = std::min(start + window, trace.steps.size());
    const double n = static_cast<double>(end - start);
    std::vector<double> share(trace.arms.size(), 0.0);
    double r = 0.0, c = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      share[static_cast<std::size_t>(trace.steps[i].arm)] += 1.0 / n;
      r += trace.steps[i].reward;
      c += trace.steps[i].cost;
    }
    w.share.push_back(std::move(share));
    w.reward.push_back(r / n);
    w.cost.push_back(c / n);
  }
  return w;
}

double trailing_share(const SeedTrace& trace, const std::string& arm, std::size_t span) {
  const int idx = trace.arm_index(arm);
  const std::size_t n = std::min(span, trace.steps.size());
  if (n == 0) return 0.0;
  double hit = 0.0;
  for (std::size_t i = trace.steps.size() - n; i < trace.steps.size(); ++i) hit += trace.steps[i].arm == idx;
  return hit / static_cast<double>(n);
}

double recovery_ratio(const SeedTrace& trace) {
  if (trace.phases.size() < 3) throw std::invalid_argument("recovery ratio needs three phases");
  const auto r = phase_mean_reward(trace);
  return r[2] / r[0];
}

TraceSummary summarize(const SeedTrace& trace, const std::vector<std::size_t>& regret_steps) {
  TraceSummary s;
  const auto series = regret_series(trace);
  s.cumulative_regret = series.empty() ? 0.0 : series.back();
  for (auto k : regret_steps) s.regret_at[k] = regret_at(series, k);
  s.mean_reward = phase_mean_reward(trace);
  s.mean_cost = phase_mean_cost(trace);
  if (trace.budget) s.compliance = compliance(trace, *trace.budget);
  if (trace.phases.size() >= 3) s.recovery_ratio = recovery_ratio(trace);
  for (std::size_t p = 0; p < trace.phases.size(); ++p) {
    std::vector<double> share;
    for (const auto& a : trace.arms) share.push_back(phase_selection_fraction(trace, static_cast<int>(p), a));
    s.phase_share.push_back(std::move(share));
  }
  for (const auto& st : trace.steps) {
    s.ceiling_violations += st.ceiling_violation;
    s.forced += st.forced;
  }
  return s;
}

nlohmann::json summary_to_json(const TraceSummary& s, const std::vector<std::string>& arms) {
  nlohmann::json regret_at = nlohmann::json::object();
  for (const auto& [k, v] : s.regret_at) regret_at["R@" + std::to_string(k)] = v;
  nlohmann::json shares = nlohmann::json::array();
  for (const auto& phase : s.phase_share) {
    nlohmann::json m = nlohmann::json::object();
    for (std::size_t i = 0; i < arms.size(); ++i) m[arms[i]] = phase[i];
    shares.push_back(std::move(m));
  }
  return {{"cumulative_regret", s.cumulative_regret},
          {"regret_at", regret_at},
          {"mean_reward", s.mean_reward},
          {"mean_cost", s.mean_cost},
          {"compliance", s.compliance.empty() ? nlohmann::json(nullptr) : nlohmann::json(s.compliance)},
          {"recovery_ratio", s.recovery_ratio ? nlohmann::json(*s.recovery_ratio) : nlohmann::json(nullptr)},
          {"selection_share", shares},
          {"ceiling_violations", s.ceiling_violations},
          {"forced_pulls", s.forced}};
}

nlohmann::json aggregate_report(const std::vector<SeedTrace>& traces, std::size_t resamples) {
  if (traces.empty()) throw std::invalid_argument("report needs at least one trace");
  const std::size_t phases = traces.front().phases.size();
  std::vector<TraceSummary> sums;
  for (const auto& t : traces) {
    if (t.phases.size() != phases) throw std::invalid_argument("traces disagree on phase count");
    sums.push_back(summarize(t));
  }
  auto stat = [&](const std::vector<double>& v) {
    nlohmann::json j{{"mean", mean_of(v)}};
    if (v.size() >= 2) {
      const auto ci = bootstrap_ci(v, 0.95, resamples);
      j["ci"] = {ci.low, ci.high};
    } else {
      j["ci"] = nullptr;
    }
    return j;
  };
  nlohmann::json out;
  out["n_seeds"] = traces.size();
  out["arms"] = traces.front().arms;
  out["phases"] = nlohmann::json::array();
  for (std::size_t p = 0; p < phases; ++p) {
    std::vector<double> reward, cost, comp;
    for (const auto& s : sums) {
      reward.push_back(s.mean_reward[p]);
      cost.push_back(s.mean_cost[p]);
      if (!s.compliance.empty()) comp.push_back(s.compliance[p]);
    }
    nlohmann::json ph{{"phase", p + 1}, {"mean_reward", stat(reward)}, {"mean_cost", stat(cost)}};
    ph["compliance"] = comp.empty() ? nlohmann::json(nullptr) : stat(comp);
    out["phases"].push_back(std::move(ph));
  }
  std::vector<double> regret, r200;
  for (const auto& s : sums) {
    regret.push_back(s.cumulative_regret);
    r200.push_back(s.regret_at.at(200));
  }
  out["cumulative_regret"] = stat(regret);
  out["R@200"] = stat(r200);
  const auto cat = catastrophic_flags(regret, median(regret));
  out["catastrophic_seeds"] = cat.count;
  if (phases >= 3) {
    std::vector<double> rec;
    for (const auto& s : sums) rec.push_back(*s.recovery_ratio);
    out["recovery_ratio"] = stat(rec);
  }
  return out;
}

}  // namespace bprouter
