#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace bprouter {

/// Per-token pricing for one model. Rates are dollars per 1k tokens.
struct ModelPricing {
  std::string model_id;
  std::optional<double> input_rate;
  std::optional<double> output_rate;
  /// Dollars per request, for sources that bill per request.
  std::optional<double> per_request_cost_hint;

  bool has_rates() const { return input_rate.has_value() && output_rate.has_value(); }
  /// Throws std::invalid_argument when a rate is negative or nothing is priced.
  void validate() const;
};

/// Market bounds for log normalization, dollars per 1k tokens.
struct CostBounds {
  double floor = 1e-4;
  double ceil = 0.10;
};

/// Equal-weight blend of input and output rates (1:1 token ratio).
double blended_rate(const ModelPricing& pricing);

/// Log-scaled unit cost in [0, 1]; rates at or below the floor are free and
/// rates above the ceiling saturate at 1.
double normalize_cost(double rate, const CostBounds& bounds = {});

/// Dollars per request used by the hard ceiling: the hint when present,
/// otherwise the blended rate times `expected_tokens` / 1000.
double price_per_request(const ModelPricing& pricing, double expected_tokens);

/// Rate (per 1k tokens) fed to normalize_cost. Falls back to the per-request
/// hint spread over `expected_tokens` when no token rates are configured.
double unit_rate(const ModelPricing& pricing, double expected_tokens);

void to_json(nlohmann::json& doc, const ModelPricing& pricing);
void from_json(const nlohmann::json& doc, ModelPricing& pricing);

/// Registry file: a JSON array (or {"models": [...]}) of
/// {model_id, input_rate_per_1k, output_rate_per_1k, per_request_cost_hint?}.
std::vector<ModelPricing> load_registry(const std::string& path);
std::vector<ModelPricing> parse_registry(const nlohmann::json& doc);

}  // namespace bprouter
