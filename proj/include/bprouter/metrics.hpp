#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bprouter/simulator.hpp"

namespace bprouter {

/// Cumulative oracle regret, one entry per step.
std::vector<double> regret_series(const SeedTrace& trace);
std::vector<double> regret_series(const std::vector<double>& oracle, const std::vector<double>& rewards);
/// Cumulative regret after step k (1-based); the last value when k exceeds the trace.
double regret_at(const std::vector<double>& series, std::size_t k);

/// Phase mean cost divided by the budget, one entry per phase.
std::vector<double> compliance(const SeedTrace& trace, double budget);
std::vector<double> phase_mean_reward(const SeedTrace& trace);
std::vector<double> phase_mean_cost(const SeedTrace& trace);
/// Fraction of a phase's steps that chose `arm`.
double phase_selection_fraction(const SeedTrace& trace, int phase, const std::string& arm);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

enum class Statistic { kMean, kMedian };

/// Percentile bootstrap over per-seed values.
Interval bootstrap_ci(const std::vector<double>& values, double level = 0.95, std::size_t resamples = 10000,
                      std::uint64_t seed = 0, Statistic stat = Statistic::kMean);

double median(std::vector<double> values);
double mean_of(const std::vector<double>& values);

struct CatastrophicReport {
  std::vector<bool> flags;
  std::size_t count = 0;
  double threshold = 0.0;
};

/// Flags regret strictly above 2x the pooled median.
CatastrophicReport catastrophic_flags(const std::vector<double>& regrets, double pooled_median);

/// Non-overlapping windows of `window` steps (the last may be shorter):
/// per-arm selection fraction, mean reward and mean cost.
struct WindowSeries {
  std::size_t window = 50;
  std::vector<std::string> arms;
  std::vector<std::vector<double>> share;  ///< [window][arm]
  std::vector<double> reward;
  std::vector<double> cost;
};
WindowSeries windowed(const SeedTrace& trace, std::size_t window = 50);

/// Selection fraction of `arm` over the last `span` steps.
double trailing_share(const SeedTrace& trace, const std::string& arm, std::size_t span);

/// Phase-3 over phase-1 mean reward.
double recovery_ratio(const SeedTrace& trace);

struct TraceSummary {
  double cumulative_regret = 0.0;
  std::map<std::size_t, double> regret_at;
  std::vector<double> mean_reward;
  std::vector<double> mean_cost;
  std::vector<double> compliance;  ///< empty when unconstrained
  std::optional<double> recovery_ratio;
  std::vector<std::vector<double>> phase_share;  ///< [phase][arm]
  std::int64_t ceiling_violations = 0;
  std::int64_t forced = 0;
};

TraceSummary summarize(const SeedTrace& trace, const std::vector<std::size_t>& regret_steps = {200});
nlohmann::json summary_to_json(const TraceSummary& s, const std::vector<std::string>& arms);

/// Cross-seed report: per-phase means with percentile intervals (omitted for
/// a single seed, marked by "ci": null).
nlohmann::json aggregate_report(const std::vector<SeedTrace>& traces, std::size_t resamples = 10000);

}  // namespace bprouter
