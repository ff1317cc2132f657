#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bprouter/arm_stats.hpp"
#include "bprouter/cost_model.hpp"
#include "bprouter/pacer.hpp"

namespace bprouter {

enum class RequestId : std::uint64_t {};

struct RouterConfig {
  double alpha = 0.01;
  double gamma = 0.997;
  double v_max = 200.0;
  int dim = 26;
  int burn_in_pulls = 20;
  std::uint64_t seed = 0;
  double lambda0 = 1.0;
  RewardPolicy reward_policy = RewardPolicy::kReject;
  CostBounds cost_bounds{};
  /// Tokens per request used to turn token rates into per-request prices.
  double expected_tokens = 1000.0;
  /// Unresolved decisions older than this many steps are evicted.
  Step pending_ttl = 5000;

  void validate() const;
};

void to_json(nlohmann::json& doc, const RouterConfig& cfg);
void from_json(const nlohmann::json& doc, RouterConfig& cfg);

struct ScoreBreakdown {
  double exploit = 0.0;
  double explore = 0.0;
  double penalty = 0.0;
  double total() const { return exploit + explore - penalty; }
};

struct RouteDecision {
  RequestId request_id{};
  std::string arm_id;
  ScoreBreakdown score;
  double lambda_at_decision = 0.0;
  /// Router step after the decision (first decision is step 1).
  Step step_index = 0;
  /// Per-request price of the chosen arm and the active ceiling (+inf if none).
  double price = 0.0;
  double ceiling = 0.0;
  std::size_t eligible_count = 0;
  bool forced_burn_in = false;
  bool fallback = false;
  /// Chosen price exceeded an active ceiling (burn-in or never-empty fallback).
  bool ceiling_override = false;
};

struct FeedbackRecord {
  RequestId request_id{};
  double reward = 0.0;
  double realized_cost = 0.0;
};

enum class FeedbackOutcome {
  kApplied,
  /// Never issued, already resolved, or evicted. Router state unchanged.
  kUnknownRequest,
  /// The arm was deleted while the decision was pending.
  kDiscarded,
};

/// Initialization choice for a newly registered arm.
struct ColdStart {};
struct PriorStart {
  WarmupPrior prior;
  double n_eff = 0.0;
};
struct HeuristicStart {
  double n_eff = 0.0;
  double bias_reward = 0.5;
};
using ArmInit = std::variant<ColdStart, PriorStart, HeuristicStart>;

/// Read-only view of one registered arm.
struct ArmView {
  std::string id;
  ModelPricing pricing;
  double c_tilde = 0.0;
  double price = 0.0;
  const ArmState* state = nullptr;
};

/// Budget-paced, staleness-inflated LinUCB router.
///
/// route() and feedback() are serialized by an internal mutex. The step
/// counter advances on route(). Contexts are cached per request so feedback
/// may arrive late; forgetting is keyed to the arm's statistics age, not to
/// the arrival time.
class Router {
 public:
  Router(const RouterConfig& cfg, const PacerConfig& pacer_cfg);

  Router(const Router&) = delete;
  Router& operator=(const Router&) = delete;

  RouteDecision route(const Vector& x);
  FeedbackOutcome feedback(const FeedbackRecord& f);

  /// Registers a model. Burn-in pulls are queued FIFO behind any arm still
  /// in burn-in; `burn_in` overrides the configured count for this arm.
  void add_arm(const ModelPricing& pricing, const ArmInit& init = ColdStart{},
               std::optional<int> burn_in = std::nullopt);
  void delete_arm(const std::string& model_id);
  /// Replaces an arm's pricing and re-derives its normalized cost and price.
  void set_pricing(const ModelPricing& pricing);

  nlohmann::json snapshot() const;
  /// Replaces the whole state from a snapshot. On error the router is left
  /// untouched.
  void restore(const nlohmann::json& doc);
  static std::unique_ptr<Router> from_snapshot(const nlohmann::json& doc);

  std::vector<ArmView> arms() const;
  std::optional<ArmView> arm(const std::string& model_id) const;
  std::vector<std::string> arm_ids() const;
  std::size_t size() const;
  Step step() const;
  double lambda() const;
  double cost_ema() const;
  const RouterConfig& config() const { return cfg_; }
  std::size_t pending() const;
  /// Remaining forced pulls per arm, in burn-in order.
  std::vector<std::pair<std::string, int>> burn_in_queue() const;

  std::int64_t discarded_feedback() const;
  std::int64_t ceiling_overrides() const;
  std::int64_t evicted() const;

  /// Scores one arm for `x` at the current step without mutating anything.
  ScoreBreakdown score(const std::string& model_id, const Vector& x) const;

  static constexpr int kFormatVersion = 1;

 private:
  struct Arm {
    std::string id;
    ModelPricing pricing;
    double c_tilde = 0.0;
    double price = 0.0;
    ArmState state;
  };
  struct Pending {
    std::string arm_id;
    Vector context;
    Step issued = 0;
  };
  struct BurnIn {
    std::string arm_id;
    int remaining = 0;
  };

  struct State {
    Pacer pacer;
    std::vector<Arm> arms;
    std::deque<BurnIn> burn_in;
    std::map<std::uint64_t, Pending> pending;
    std::mt19937_64 rng;
    Step t = 0;
    std::uint64_t next_request = 1;
    std::int64_t discarded = 0;
    std::int64_t overrides = 0;
    std::int64_t evicted = 0;
  };

  Arm make_arm(const ModelPricing& pricing, const ArmInit& init) const;
  void reprice(Arm& arm) const;
  ScoreBreakdown score_locked(const Arm& arm, const Vector& x) const;
  Arm* find(const std::string& id);
  const Arm* find(const std::string& id) const;
  void check_context(const Vector& x) const;
  void evict_stale();
  nlohmann::json snapshot_locked() const;
  static State parse_state(const nlohmann::json& doc, const RouterConfig& cfg);

  RouterConfig cfg_;
  State st_;
  mutable std::mutex mu_;
};

}  // namespace bprouter
