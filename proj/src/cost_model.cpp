#include "bprouter/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace bprouter {

void ModelPricing::validate() const {
  if (model_id.empty()) throw std::invalid_argument("pricing entry without model_id");
  auto check = [&](const std::optional<double>& v, const char* what) {
    if (v && (!std::isfinite(*v) || *v < 0.0)) {
      throw std::invalid_argument(model_id + ": " + what + " must be a non-negative number");
    }
  };
  check(input_rate, "input rate");
  check(output_rate, "output rate");
  check(per_request_cost_hint, "per-request cost hint");
  if (input_rate.has_value() != output_rate.has_value()) {
    throw std::invalid_argument(model_id + ": input and output rates must be given together");
  }
  if (!has_rates() && !per_request_cost_hint) {
    throw std::invalid_argument(model_id + ": no rates and no per-request cost hint");
  }
}

double blended_rate(const ModelPricing& pricing) {
  if (!pricing.has_rates()) {
    throw std::invalid_argument(pricing.model_id + ": blended rate needs both token rates");
  }
  return 0.5 * (*pricing.input_rate + *pricing.output_rate);
}

double normalize_cost(double rate, const CostBounds& bounds) {
  if (!(bounds.floor > 0.0) || !(bounds.ceil > bounds.floor)) {
    throw std::invalid_argument("cost bounds need 0 < floor < ceil");
  }
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw std::invalid_argument("cost normalization needs a positive finite rate");
  }
  if (rate <= bounds.floor) return 0.0;
  if (rate >= bounds.ceil) return 1.0;
  const double c = (std::log(rate) - std::log(bounds.floor)) /
                   (std::log(bounds.ceil) - std::log(bounds.floor));
  return std::clamp(c, 0.0, 1.0);
}

double price_per_request(const ModelPricing& pricing, double expected_tokens) {
  if (pricing.per_request_cost_hint) return *pricing.per_request_cost_hint;
  return blended_rate(pricing) * expected_tokens / 1000.0;
}

double unit_rate(const ModelPricing& pricing, double expected_tokens) {
  if (pricing.has_rates()) return blended_rate(pricing);
  if (pricing.per_request_cost_hint && expected_tokens > 0.0) {
    return *pricing.per_request_cost_hint * 1000.0 / expected_tokens;
  }
  throw std::invalid_argument(pricing.model_id + ": cannot derive a unit rate");
}

void to_json(nlohmann::json& doc, const ModelPricing& pricing) {
  doc = nlohmann::json{{"model_id", pricing.model_id}};
  if (pricing.input_rate) doc["input_rate_per_1k"] = *pricing.input_rate;
  if (pricing.output_rate) doc["output_rate_per_1k"] = *pricing.output_rate;
  if (pricing.per_request_cost_hint) doc["per_request_cost_hint"] = *pricing.per_request_cost_hint;
}

void from_json(const nlohmann::json& doc, ModelPricing& pricing) {
  pricing = ModelPricing{};
  pricing.model_id = doc.at("model_id").get<std::string>();
  if (doc.contains("input_rate_per_1k")) pricing.input_rate = doc.at("input_rate_per_1k").get<double>();
  if (doc.contains("output_rate_per_1k")) pricing.output_rate = doc.at("output_rate_per_1k").get<double>();
  if (doc.contains("per_request_cost_hint")) {
    pricing.per_request_cost_hint = doc.at("per_request_cost_hint").get<double>();
  }
  pricing.validate();
}

std::vector<ModelPricing> parse_registry(const nlohmann::json& doc) {
  const auto& list = doc.is_object() ? doc.at("models") : doc;
  if (!list.is_array()) throw std::invalid_argument("registry must be a list of models");
  std::vector<ModelPricing> out;
  for (const auto& entry : list) {
    auto p = entry.get<ModelPricing>();
    for (const auto& seen : out) {
      if (seen.model_id == p.model_id) throw std::invalid_argument("duplicate model_id " + p.model_id);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ModelPricing> load_registry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open registry file " + path);
  return parse_registry(nlohmann::json::parse(in));
}

}  // namespace bprouter
