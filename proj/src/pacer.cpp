#include "bprouter/pacer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bprouter {

namespace {

void validate(const PacerConfig& cfg) {
  if (cfg.pacing_enabled && !(cfg.budget_per_request > 0.0 && std::isfinite(cfg.budget_per_request))) {
    throw std::invalid_argument("pacing needs a positive finite budget per request");
  }
  if (!(cfg.eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");
  if (!(cfg.alpha_ema > 0.0 && cfg.alpha_ema <= 1.0)) {
    throw std::invalid_argument("alpha_ema must lie in (0, 1]");
  }
  if (!(cfg.lambda_cap >= 0.0)) throw std::invalid_argument("lambda_cap must be non-negative");
  if (!(cfg.lambda_c >= 0.0)) throw std::invalid_argument("lambda_c must be non-negative");
}

}  // namespace

Pacer::Pacer(const PacerConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  cost_ema_ = cfg_.pacing_enabled ? cfg_.budget_per_request : 0.0;
}

void Pacer::observe_cost(double cost) {
  if (!(cost >= 0.0) || !std::isfinite(cost)) {
    throw std::invalid_argument("realized cost must be non-negative");
  }
  cost_ema_ = (1.0 - cfg_.alpha_ema) * cost_ema_ + cfg_.alpha_ema * cost;
  if (!cfg_.pacing_enabled) return;
  const double step = cfg_.eta * (cost_ema_ / cfg_.budget_per_request - 1.0);
  lambda_ = std::clamp(lambda_ + step, 0.0, cfg_.lambda_cap);
}

EligibleSet Pacer::eligible(std::span<const double> prices) const {
  if (prices.empty()) throw std::invalid_argument("empty portfolio");
  EligibleSet out;
  if (!(lambda_ > 0.0)) {
    out.indices.resize(prices.size());
    for (std::size_t i = 0; i < prices.size(); ++i) out.indices[i] = i;
    return out;
  }
  const double c_max = *std::max_element(prices.begin(), prices.end());
  out.ceiling = c_max / (1.0 + lambda_);
  for (std::size_t i = 0; i < prices.size(); ++i) {
    if (prices[i] <= out.ceiling) out.indices.push_back(i);
  }
  if (out.indices.empty()) {
    const auto cheapest = std::min_element(prices.begin(), prices.end()) - prices.begin();
    out.indices.push_back(static_cast<std::size_t>(cheapest));
    out.fallback = true;
  }
  return out;
}

void to_json(nlohmann::json& doc, const PacerConfig& cfg) {
  doc = nlohmann::json{{"eta", cfg.eta},
                       {"alpha_ema", cfg.alpha_ema},
                       {"lambda_cap", cfg.lambda_cap},
                       {"lambda_c", cfg.lambda_c},
                       {"pacing_enabled", cfg.pacing_enabled}};
  if (std::isfinite(cfg.budget_per_request)) {
    doc["budget_per_request"] = cfg.budget_per_request;
  } else {
    doc["budget_per_request"] = nullptr;
  }
}

void from_json(const nlohmann::json& doc, PacerConfig& cfg) {
  cfg = PacerConfig{};
  if (doc.contains("budget_per_request") && !doc.at("budget_per_request").is_null()) {
    cfg.budget_per_request = doc.at("budget_per_request").get<double>();
  }
  cfg.eta = doc.value("eta", cfg.eta);
  cfg.alpha_ema = doc.value("alpha_ema", cfg.alpha_ema);
  cfg.lambda_cap = doc.value("lambda_cap", cfg.lambda_cap);
  cfg.lambda_c = doc.value("lambda_c", cfg.lambda_c);
  cfg.pacing_enabled = doc.value("pacing_enabled", cfg.pacing_enabled);
}

nlohmann::json Pacer::to_json() const {
  return {{"config", cfg_}, {"lambda", lambda_}, {"cost_ema", cost_ema_}};
}

Pacer Pacer::from_json(const nlohmann::json& doc) {
  Pacer p(doc.at("config").get<PacerConfig>());
  const double lambda = doc.at("lambda").get<double>();
  const double ema = doc.at("cost_ema").get<double>();
  if (!(lambda >= 0.0 && lambda <= p.cfg_.lambda_cap) || !(ema >= 0.0)) {
    throw std::invalid_argument("pacer snapshot out of range");
  }
  p.lambda_ = lambda;
  p.cost_ema_ = ema;
  return p;
}

}  // namespace bprouter
