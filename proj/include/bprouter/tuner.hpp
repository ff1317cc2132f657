#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bprouter/simulator.hpp"

namespace bprouter {

/// Pseudo-observation count whose prior reaches parity with online evidence
/// after `t_adapt` steps under discount gamma. Equals t_adapt at gamma = 1.
double neff_from_horizon(double gamma, double t_adapt);
/// Inverse of neff_from_horizon.
double horizon_from_neff(double gamma, double n_eff);

struct CostRewardPoint {
  double cost = 0.0;
  double reward = 0.0;
};

/// Points not dominated in (lower cost, higher reward), sorted by cost, with
/// exact duplicates removed.
std::vector<CostRewardPoint> pareto_frontier(const std::vector<CostRewardPoint>& points);

/// Area under a cost-sorted frontier on a log-cost axis mapped to [0, 1] by
/// [log lo, log hi]. The curve is extended flat to both ends of the axis, so
/// a single point scores its own reward.
double frontier_auc(const std::vector<CostRewardPoint>& frontier, double cost_lo, double cost_hi);
/// Same on an axis that is already normalized.
double frontier_auc_normalized(const std::vector<CostRewardPoint>& frontier);

struct KneeResult {
  std::size_t index = 0;
  double distance = 0.0;
  std::vector<double> distances;
};

/// Knee of a frontier in (auc, p2) space: after min-max normalization of both
/// axes, the point farthest from the chord joining the lowest-AUC and
/// highest-AUC points. Ties (and a degenerate chord) go to higher AUC.
KneeResult knee_point(const std::vector<std::pair<double, double>>& points);

/// Indices of points not dominated when both coordinates are maximized.
std::vector<std::size_t> pareto_maximize(const std::vector<std::pair<double, double>>& points);

struct GridCell {
  double alpha = 0.0;
  double gamma = 1.0;
  std::size_t alpha_index = 0;
  std::size_t gamma_index = 0;
  double n_eff = 0.0;
  std::vector<double> auc_per_seed;
  std::vector<double> p2_per_seed;

  double auc() const;
  double p2_reward() const;
};

/// Knee over cell means: Pareto filter, then knee_point. Returns a cell index.
std::size_t select_knee(const std::vector<GridCell>& cells);
std::size_t select_max_auc(const std::vector<GridCell>& cells);

struct StabilityReport {
  std::size_t knee = 0;
  std::size_t iterations = 0;
  /// Selections per cell.
  std::vector<std::size_t> counts;
  std::size_t modal = 0;
  double modal_fraction = 0.0;
  /// Resamples that picked the full-sample knee.
  double knee_fraction = 0.0;
  /// Resamples within one gamma-grid step of the knee at the same alpha.
  double within_one_gamma_fraction = 0.0;
};

/// Seed-level bootstrap: resample seed indices with replacement (shared by
/// every cell), recompute both objective means, and re-select the knee.
StabilityReport knee_bootstrap_stability(const std::vector<GridCell>& cells, std::size_t iterations = 2000,
                                         std::uint64_t seed = 0);

struct GridSpec {
  std::vector<double> alphas{0.01, 0.025, 0.063, 0.16, 0.4, 1.0};
  std::vector<double> gammas{0.994, 0.995, 0.996, 0.997, 0.998, 0.999, 1.0};
  double t_adapt = 500.0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> budgets{3.0e-4, 6.6e-4, 1.9e-3};
  int sweep_length = 600;
  std::string degrade_arm = "mistral-large";
  double degrade_target = 0.50;
  int degrade_phase_length = 300;
  /// Budget for the degradation objective; nullopt runs unconstrained.
  std::optional<double> degrade_budget = 6.6e-4;
  std::size_t bootstrap_iterations = 2000;

  void validate() const;
};

void to_json(nlohmann::json& doc, const GridSpec& spec);
void from_json(const nlohmann::json& doc, GridSpec& spec);

/// Scores every (alpha, gamma) cell on both objectives. `base` supplies the
/// router/pacer defaults and priors; alpha, gamma and n_eff are overridden.
std::vector<GridCell> evaluate_grid(const GridSpec& spec, const Source& source, const RunConfig& base);

nlohmann::json grid_to_json(const std::vector<GridCell>& cells);
std::string grid_to_csv(const std::vector<GridCell>& cells);

}  // namespace bprouter
