#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bprouter/arm_stats.hpp"
#include "bprouter/cost_model.hpp"
#include "bprouter/pacer.hpp"
#include "bprouter/router.hpp"

namespace bprouter {

struct PromptRecord {
  std::string prompt_id;
  Vector context;
  std::map<std::string, double> rewards;
  std::map<std::string, double> costs;
  /// Best arm for this prompt when known (synthetic sources fill it in).
  std::string oracle_arm;
};

/// Full-information offline table: every arm's reward and realized cost for
/// every prompt.
class RewardCostMatrix {
 public:
  RewardCostMatrix() = default;
  RewardCostMatrix(std::vector<std::string> arm_ids, std::vector<PromptRecord> prompts);

  const std::vector<std::string>& arm_ids() const { return arm_ids_; }
  const std::vector<PromptRecord>& prompts() const { return prompts_; }
  std::size_t size() const { return prompts_.size(); }
  int dim() const;
  bool has_arm(const std::string& id) const;

  /// Best reward over `arms` (all arms when empty) for prompt i.
  double oracle_reward(std::size_t i, const std::vector<std::string>& arms = {}) const;
  double mean_reward(const std::string& arm) const;
  double mean_cost(const std::string& arm) const;

  /// Throws when a prompt misses an arm, rewards leave [0, 1], costs are
  /// negative, or contexts disagree on dimension.
  void validate() const;

  /// Line-delimited JSON: {prompt_id, context, rewards: {id: r}, costs: {id: usd}}.
  static RewardCostMatrix load_jsonl(const std::string& path);
  void save_jsonl(const std::string& path) const;
  static RewardCostMatrix from_jsonl(std::istream& in);
  void to_jsonl(std::ostream& out) const;

 private:
  std::vector<std::string> arm_ids_;
  std::vector<PromptRecord> prompts_;
};

struct SyntheticArm {
  std::string id;
  /// True weights; the last entry is the bias weight.
  Vector weights;
  ModelPricing pricing;
  double cost_per_request = 0.0;
  /// Log-normal multiplicative noise on realized cost (mean preserving).
  double cost_log_sigma = 0.0;
};

/// Contexts are i.i.d. standard normal in d-1 dimensions, l2-normalized, with
/// a unit bias appended. Rewards are clip(w^T x + noise, 0, 1).
struct SyntheticPortfolioSpec {
  int dim = 26;
  double noise_scale = 0.05;
  std::vector<SyntheticArm> arms;

  std::vector<ModelPricing> registry() const;
};

void to_json(nlohmann::json& doc, const SyntheticPortfolioSpec& spec);
void from_json(const nlohmann::json& doc, SyntheticPortfolioSpec& spec);

RewardCostMatrix generate_synthetic(const SyntheticPortfolioSpec& spec, std::size_t n, std::uint64_t seed);
Vector sample_context(int dim, std::mt19937_64& rng);

/// Zero-noise mean of clip(bias + w^T x, 0, 1) under the context generator,
/// by quadrature over the projection of a uniform direction onto w.
double expected_clipped_reward(const Vector& weights);

/// Sets every arm's bias weight so its zero-noise mean reward equals the
/// target, accounting for clipping.
void calibrate_bias(SyntheticPortfolioSpec& spec, const std::vector<double>& target_means);

/// Three-tier portfolio with the budget/mid/frontier cost structure
/// (2.9e-5, 5.3e-4, 1.5e-2 $/req) and mean rewards (0.793, 0.923, 0.932).
SyntheticPortfolioSpec tiered_portfolio(int dim = 26, std::uint64_t seed = 7);
/// An extra arm for onboarding studies: a "good" arm has a contextual niche
/// and a mean close to the mid tier, a "bad" arm is uniformly poor.
SyntheticArm onboarding_arm(const std::string& id, bool good, double cost_per_request,
                            int dim = 26, std::uint64_t seed = 11);

// --- Perturbations -----------------------------------------------------------

/// Reprices an arm for the phase. Realized costs scale by new/old price.
struct PriceSet {
  ModelPricing pricing;
};
/// Shifts the arm's rewards so its mean over the phase's prompts equals the
/// target, then clips to [0, 1].
struct RewardMeanShift {
  std::string arm;
  double target_mean = 0.0;
};
struct AddArm {
  ModelPricing pricing;
  /// "cold", "heuristic" or "prior" (needs a prior for the arm).
  std::string init = "cold";
  double n_eff = 0.0;
  double bias_reward = 0.5;
};
struct RemoveArm {
  std::string arm;
};
using Perturbation = std::variant<PriceSet, RewardMeanShift, AddArm, RemoveArm>;

/// PriceSet and RewardMeanShift hold for the phase that lists them; the
/// environment reverts at the next boundary. AddArm/RemoveArm persist.
struct Phase {
  int length = 0;
  std::vector<Perturbation> perturbations;
};

enum class PromptOrder {
  /// Phases 1..2 consume fresh prompts; phases 3+ replay phase 1's prompts.
  kReusePhaseOne,
  /// Every phase consumes fresh prompts; running out is an error.
  kFresh,
  /// Consume sequentially and wrap around.
  kCycle,
};

struct Scenario {
  std::string name = "scenario";
  std::vector<Phase> phases;
  /// Dollars per request; nullopt means unconstrained.
  std::optional<double> budget;
  int n_seeds = 1;
  std::uint64_t base_seed = 0;
  PromptOrder order = PromptOrder::kReusePhaseOne;
  bool shuffle = true;
  /// Arms registered at step 0; empty means every registry arm not added by
  /// a later AddArm.
  std::vector<std::string> initial_arms;

  void validate() const;
  int total_length() const;
};

void to_json(nlohmann::json& doc, const Scenario& sc);
void from_json(const nlohmann::json& doc, Scenario& sc);

// --- Priors -------------------------------------------------------------------

/// Recipe for offline priors built from a matrix. `reward_swap` maps an arm
/// to the arm whose rewards its prior is fitted on (used to invert priors).
struct PriorRecipe {
  /// "all", "random" (first `count` of a seeded shuffle) or "head".
  std::string subset = "all";
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> reward_swap;
  /// Restrict to prompts whose id starts with this prefix (domain subsets).
  std::string id_prefix;
};

std::map<std::string, WarmupPrior> build_priors(const RewardCostMatrix& offline, const PriorRecipe& recipe);

// --- Running -------------------------------------------------------------------

enum class InitMode { kCold, kPrior, kHeuristic };

struct RunConfig {
  RouterConfig router;
  PacerConfig pacer;
  InitMode init = InitMode::kCold;
  double n_eff = 1164.0;
  double heuristic_bias = 0.5;
  std::map<std::string, WarmupPrior> priors;
  /// Feedback arrives this many routes after the decision (0 = immediate).
  int feedback_delay = 0;
  /// Store the router snapshot at the end of each seed.
  bool keep_snapshot = false;
};

struct Source {
  RewardCostMatrix matrix;
  std::vector<ModelPricing> registry;

  const ModelPricing& pricing(const std::string& id) const;
};

struct StepLog {
  Step step = 0;
  int phase = 0;
  std::size_t prompt = 0;
  int arm = 0;  ///< index into SeedTrace::arms
  double reward = 0.0;
  double cost = 0.0;
  double oracle_reward = 0.0;
  double lambda = 0.0;
  double cost_ema = 0.0;
  double price = 0.0;
  double ceiling = 0.0;
  double c_tilde = 0.0;
  int eligible = 0;
  bool forced = false;
  bool fallback = false;
  /// Chosen price above an active ceiling outside burn-in and fallback.
  bool ceiling_violation = false;
};

struct PhaseInfo {
  int length = 0;
  /// Realized post-shift mean reward per shifted arm.
  std::map<std::string, double> shifted_means;
};

struct SeedTrace {
  std::uint64_t seed = 0;
  std::optional<double> budget;
  std::vector<std::string> arms;
  std::vector<PhaseInfo> phases;
  std::vector<std::size_t> permutation;
  std::vector<StepLog> steps;
  /// Router state after the last step, when requested.
  std::optional<nlohmann::json> final_snapshot;

  int arm_index(const std::string& id) const;
};

SeedTrace run_seed(const Scenario& sc, const Source& source, const RunConfig& cfg, std::uint64_t seed);
std::vector<SeedTrace> run_scenario(const Scenario& sc, const Source& source, const RunConfig& cfg);

struct BudgetPoint {
  double budget = 0.0;  ///< +inf for the unconstrained run
  std::uint64_t seed = 0;
  double mean_cost = 0.0;
  double mean_reward = 0.0;
};

/// One single-phase closed-loop run per (budget, seed). Budgets must be sorted
/// ascending; +inf disables the pacer.
std::vector<BudgetPoint> run_budget_sweep(const std::vector<double>& budgets, int phase_length,
                                          const Source& source, const RunConfig& cfg,
                                          const std::vector<std::uint64_t>& seeds);

/// Log-spaced budgets between lo and hi inclusive.
std::vector<double> log_spaced(double lo, double hi, int count);

struct RecoveryPoint {
  double target = 0.0;
  double severity = 0.0;  ///< (phase-1 reward - target) / phase-1 reward
  std::vector<double> ratios;  ///< per-seed phase-3 / phase-1 reward
};

/// Three-phase degradation sweep over target means for one arm.
std::vector<RecoveryPoint> run_recovery_sweep(const std::vector<double>& targets, const std::string& arm,
                                              int phase_length, int phase3_length, PromptOrder order,
                                              std::optional<double> budget, const Source& source,
                                              const RunConfig& cfg, int n_seeds, std::uint64_t base_seed);

nlohmann::json trace_to_json_lines(const SeedTrace& trace);
void write_trace_jsonl(const SeedTrace& trace, const std::string& path);
SeedTrace read_trace_jsonl(const std::string& path);

}  // namespace bprouter
