#include <doctest.h>

#include <cmath>
#include <random>

#include "bprouter/cost_model.hpp"

using namespace bprouter;

TEST_CASE("blended rate") {
  const ModelPricing llama{"llama", 0.0001, 0.0001, std::nullopt};
  CHECK(blended_rate(llama) == doctest::Approx(0.0001));
  const ModelPricing half{"half", 0.0, 0.004, std::nullopt};
  CHECK(blended_rate(half) == doctest::Approx(0.002));
  const ModelPricing a{"a", 0.3, 0.7, std::nullopt};
  const ModelPricing b{"b", 0.7, 0.3, std::nullopt};
  CHECK(blended_rate(a) == blended_rate(b));
  CHECK_THROWS_AS(blended_rate(ModelPricing{"hint", std::nullopt, std::nullopt, 1e-3}), std::invalid_argument);
}

TEST_CASE("normalized cost endpoints") {
  const CostBounds cb;
  CHECK(normalize_cost(0.0001, cb) == 0.0);
  CHECK(normalize_cost(0.10, cb) == 1.0);
  CHECK(std::abs(normalize_cost(std::sqrt(cb.floor * cb.ceil), cb) - 0.5) <= 1e-15);
  CHECK(normalize_cost(1e-6, cb) == 0.0);
  CHECK(normalize_cost(5.0, cb) == 1.0);
  CHECK_THROWS_AS(normalize_cost(0.0, cb), std::invalid_argument);
  CHECK_THROWS_AS(normalize_cost(-1.0, cb), std::invalid_argument);
  CHECK_THROWS_AS(normalize_cost(0.01, CostBounds{0.1, 0.01}), std::invalid_argument);
}

TEST_CASE("portfolio normalized costs") {
  const ModelPricing mistral{"mistral-large", 0.0005, 0.0015, std::nullopt};
  const ModelPricing gemini{"gemini-2.5-pro", 0.00125, 0.01, std::nullopt};
  CHECK(normalize_cost(blended_rate(mistral)) == doctest::Approx(0.333).epsilon(1e-3));
  CHECK(normalize_cost(blended_rate(gemini)) == doctest::Approx(0.583).epsilon(1e-3));
}

TEST_CASE("normalized cost is monotone") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> logr(std::log(1e-6), std::log(1.0));
  std::vector<double> rates(10000);
  for (auto& r : rates) r = std::exp(logr(rng));
  std::sort(rates.begin(), rates.end());
  double prev = -1.0;
  for (double r : rates) {
    const double c = normalize_cost(r);
    CHECK(c >= prev);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
    prev = c;
  }
}

TEST_CASE("per-request price and unit rate") {
  const ModelPricing rated{"r", 0.001, 0.003, std::nullopt};
  CHECK(price_per_request(rated, 500.0) == doctest::Approx(0.001));
  const ModelPricing hinted{"h", 0.001, 0.003, 0.02};
  CHECK(price_per_request(hinted, 500.0) == doctest::Approx(0.02));
  CHECK(unit_rate(hinted, 500.0) == doctest::Approx(0.002));
  const ModelPricing only_hint{"o", std::nullopt, std::nullopt, 0.002};
  CHECK(unit_rate(only_hint, 1000.0) == doctest::Approx(0.002));
}

TEST_CASE("pricing validation") {
  CHECK_THROWS_AS(ModelPricing({"", 0.1, 0.1, std::nullopt}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(ModelPricing({"x", -0.1, 0.1, std::nullopt}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(ModelPricing({"x", 0.1, std::nullopt, std::nullopt}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(ModelPricing({"x", std::nullopt, std::nullopt, std::nullopt}).validate(), std::invalid_argument);
  CHECK_NOTHROW(ModelPricing({"x", std::nullopt, std::nullopt, 0.01}).validate());
}

TEST_CASE("registry parsing") {
  const auto doc = nlohmann::json::parse(R"({"models": [
    {"model_id": "a", "input_rate_per_1k": 0.001, "output_rate_per_1k": 0.002},
    {"model_id": "b", "input_rate_per_1k": 0.01, "output_rate_per_1k": 0.02, "per_request_cost_hint": 0.03}]})");
  const auto reg = parse_registry(doc);
  REQUIRE(reg.size() == 2);
  CHECK(reg[1].per_request_cost_hint.value() == doctest::Approx(0.03));
  nlohmann::json back = reg[0];
  CHECK(back.get<ModelPricing>().model_id == "a");

  auto dup = doc;
  dup["models"][1]["model_id"] = "a";
  CHECK_THROWS_AS(parse_registry(dup), std::invalid_argument);
  CHECK_THROWS(load_registry("/nonexistent/registry.json"));
  CHECK_NOTHROW(load_registry(std::string(BPROUTER_SOURCE_DIR) + "/configs/registry.json"));
}
