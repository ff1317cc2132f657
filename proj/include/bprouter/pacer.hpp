#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

namespace bprouter {

struct PacerConfig {
  /// Dollars per request; ignored when pacing is disabled.
  double budget_per_request = std::numeric_limits<double>::infinity();
  double eta = 0.05;
  double alpha_ema = 0.05;
  double lambda_cap = 5.0;
  double lambda_c = 0.3;
  bool pacing_enabled = true;
};

/// Result of the hard-ceiling filter. `indices` refer to the price list that
/// was passed in, in the same order.
struct EligibleSet {
  std::vector<std::size_t> indices;
  /// c_max / (1 + lambda); +inf when the ceiling is inactive.
  double ceiling = std::numeric_limits<double>::infinity();
  /// True when every arm was above the ceiling and the cheapest one was kept.
  bool fallback = false;
};

/// Projected dual ascent on the per-request cost rate.
///
///   c_bar  <- (1 - alpha_ema) c_bar + alpha_ema c_t
///   lambda <- clamp(lambda + eta (c_bar / B - 1), 0, lambda_cap)
///
/// The EMA is applied first and the dual step uses the new c_bar. With pacing
/// disabled lambda stays at 0 and only the static weight lambda_c is used.
class Pacer {
 public:
  explicit Pacer(const PacerConfig& cfg);

  void observe_cost(double cost);
  EligibleSet eligible(std::span<const double> prices) const;
  double penalty(double c_tilde) const { return (cfg_.lambda_c + lambda_) * c_tilde; }

  double lambda() const { return lambda_; }
  double cost_ema() const { return cost_ema_; }
  const PacerConfig& config() const { return cfg_; }
  bool active() const { return cfg_.pacing_enabled; }

  nlohmann::json to_json() const;
  static Pacer from_json(const nlohmann::json& doc);

 private:
  PacerConfig cfg_;
  double lambda_ = 0.0;
  double cost_ema_ = 0.0;
};

void to_json(nlohmann::json& doc, const PacerConfig& cfg);
void from_json(const nlohmann::json& doc, PacerConfig& cfg);

}  // namespace bprouter
