#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "bprouter/metrics.hpp"
#include "bprouter/simulator.hpp"

using namespace bprouter;

namespace {

const SyntheticPortfolioSpec& portfolio() {
  static const SyntheticPortfolioSpec spec = tiered_portfolio();
  return spec;
}

const Source& tiered_source() {
  static const Source src{generate_synthetic(portfolio(), 2000, 1), portfolio().registry()};
  return src;
}

RunConfig cold_config() {
  RunConfig cfg;
  cfg.init = InitMode::kCold;
  return cfg;
}

Scenario one_phase(int length, std::optional<double> budget) {
  Scenario sc;
  sc.phases = {Phase{length, {}}};
  sc.budget = budget;
  sc.order = PromptOrder::kCycle;
  return sc;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  const auto a = generate_synthetic(portfolio(), 300, 5);
  const auto b = generate_synthetic(portfolio(), 300, 5);
  std::ostringstream sa, sb;
  a.to_jsonl(sa);
  b.to_jsonl(sb);
  CHECK(sa.str() == sb.str());
  const auto c = generate_synthetic(portfolio(), 300, 6);
  std::ostringstream sc;
  c.to_jsonl(sc);
  CHECK(sa.str() != sc.str());
}

TEST_CASE("tiered portfolio hits the target reward means") {
  const auto m = generate_synthetic(portfolio(), 20000, 3);
  CHECK(m.mean_reward("llama-3.1-8b") == doctest::Approx(0.793).epsilon(0.01));
  CHECK(m.mean_reward("mistral-large") == doctest::Approx(0.923).epsilon(0.01));
  CHECK(m.mean_reward("gemini-2.5-pro") == doctest::Approx(0.932).epsilon(0.01));
  CHECK(m.mean_cost("llama-3.1-8b") == doctest::Approx(2.9e-5).epsilon(0.05));
  CHECK(m.mean_cost("gemini-2.5-pro") == doctest::Approx(1.5e-2).epsilon(0.05));
  m.validate();
}

TEST_CASE("clipped-reward quadrature agrees with Monte Carlo") {
  std::mt19937_64 rng(21);
  for (double scale : {0.2, 0.6, 1.2}) {
    Vector w = Vector::Zero(26);
    w(0) = scale;
    w(7) = 0.3 * scale;
    w(25) = 0.8;
    double mc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) mc += std::clamp(w.dot(sample_context(26, rng)), 0.0, 1.0);
    CHECK(expected_clipped_reward(w) == doctest::Approx(mc / n).epsilon(0.004));
  }
}

TEST_CASE("identical noiseless arms give zero regret") {
  SyntheticPortfolioSpec spec;
  spec.dim = 6;
  spec.noise_scale = 0.0;
  Vector w = Vector::Zero(6);
  w(0) = 0.2;
  w(5) = 0.5;
  for (const char* id : {"a", "b"}) spec.arms.push_back({id, w, {id, std::nullopt, std::nullopt, 1e-3}, 1e-3, 0.0});
  const auto m = generate_synthetic(spec, 100, 2);
  for (const auto& p : m.prompts()) CHECK(p.rewards.at("a") == p.rewards.at("b"));
  RunConfig cfg = cold_config();
  cfg.router.dim = 6;
  const auto t = run_seed(one_phase(100, std::nullopt), {m, spec.registry()}, cfg, 0);
  CHECK(regret_series(t).back() == 0.0);
}

TEST_CASE("inert extensions reduce to plain LinUCB") {
  RunConfig cfg = cold_config();
  cfg.router.gamma = 1.0;
  cfg.router.alpha = 0.1;
  cfg.pacer.lambda_c = 0.0;
  const auto& src = tiered_source();
  const std::uint64_t seed = 4;
  const auto t = run_seed(one_phase(300, std::nullopt), src, cfg, seed);

  const int d = 26;
  const auto& ids = t.arms;
  std::vector<Matrix> a(ids.size(), Matrix::Identity(d, d));
  std::vector<Vector> b(ids.size(), Vector::Zero(d));
  std::mt19937_64 rng(seed);
  for (const auto& s : t.steps) {
    const auto& p = src.matrix.prompts()[s.prompt];
    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> ties;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Matrix inv = a[k].inverse();
      const double score = (inv * b[k]).dot(p.context) + 0.1 * std::sqrt(p.context.dot(inv * p.context));
      if (score > best + 1e-12) {
        best = score;
        ties.assign(1, k);
      } else if (std::abs(score - best) <= 1e-12) {
        ties.push_back(k);
      }
    }
    std::size_t pick = ties.front();
    if (ties.size() > 1) pick = ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
    REQUIRE(static_cast<int>(pick) == s.arm);
    a[pick] += p.context * p.context.transpose();
    b[pick] += p.rewards.at(ids[pick]) * p.context;
  }
}

TEST_CASE("price drop to the floor is scoped to its phase") {
  Scenario sc;
  const ModelPricing floor{"gemini-2.5-pro", 0.0001, 0.0001, 2.6667e-4};
  sc.phases = {Phase{608, {}}, Phase{608, {PriceSet{floor}}}, Phase{608, {}}};
  RunConfig cfg = cold_config();
  cfg.router.alpha = 0.2;
  const auto t = run_seed(sc, tiered_source(), cfg, 1);
  const int g = t.arm_index("gemini-2.5-pro");
  std::array<int, 3> seen{0, 0, 0};
  for (const auto& s : t.steps) {
    if (s.arm != g) continue;
    ++seen[static_cast<std::size_t>(s.phase)];
    if (s.phase == 1) {
      CHECK(s.c_tilde == 0.0);
      CHECK(s.price == doctest::Approx(2.6667e-4));
    } else {
      CHECK(s.c_tilde == doctest::Approx(0.5833).epsilon(1e-3));
    }
  }
  CHECK(seen[1] > 0);
  CHECK(seen[2] > 0);
}

TEST_CASE("mean shift targets the phase mean with clipping") {
  Scenario sc;
  sc.phases = {Phase{500, {}}, Phase{500, {RewardMeanShift{"mistral-large", 0.75}}}, Phase{500, {}}};
  const auto t = run_seed(sc, tiered_source(), cold_config(), 2);
  REQUIRE(t.phases[1].shifted_means.count("mistral-large"));
  CHECK(t.phases[1].shifted_means.at("mistral-large") == doctest::Approx(0.75).epsilon(0.02));
  for (const auto& s : t.steps) {
    CHECK(s.reward >= 0.0);
    CHECK(s.reward <= 1.0);
  }
}

TEST_CASE("budget sweep") {
  const auto inf = std::numeric_limits<double>::infinity();
  const auto sweep = run_budget_sweep({inf}, 300, tiered_source(), cold_config(), {0});
  const auto free = run_seed(one_phase(300, std::nullopt), tiered_source(), cold_config(), 0);
  REQUIRE(sweep.size() == 1);
  CHECK(sweep[0].mean_cost == doctest::Approx(phase_mean_cost(free)[0]));

  const auto three = run_budget_sweep({3.0e-4, 6.6e-4, 1.9e-3}, 300, tiered_source(), cold_config(), {0, 1});
  CHECK(three.size() == 6);
  for (const auto& p : three) CHECK(p.mean_cost / p.budget > 0.0);
  CHECK_THROWS_AS(run_budget_sweep({}, 300, tiered_source(), cold_config(), {0}), std::invalid_argument);
}

TEST_CASE("single-arm portfolio pays its own cost") {
  const auto& full = tiered_source();
  Scenario sc = one_phase(200, 1e-5);
  sc.initial_arms = {"mistral-large"};
  const auto t = run_seed(sc, full, cold_config(), 3);
  double expect = 0.0;
  for (const auto& s : t.steps) expect += full.matrix.prompts()[s.prompt].costs.at("mistral-large");
  CHECK(phase_mean_cost(t)[0] == doctest::Approx(expect / 200.0));
}

TEST_CASE("onboarding adds the arm with burn-in") {
  auto spec = portfolio();
  spec.arms.push_back(onboarding_arm("gemini-2.5-flash", true, 2e-4));
  const Source src{generate_synthetic(spec, 1000, 1), spec.registry()};
  Scenario sc;
  sc.phases = {Phase{100, {}}, Phase{100, {AddArm{spec.arms.back().pricing}}}};
  const auto t = run_seed(sc, src, cold_config(), 0);
  CHECK(t.arms.size() == 4);
  for (int i = 100; i < 120; ++i) {
    CHECK(t.steps[static_cast<std::size_t>(i)].forced);
    CHECK(t.steps[static_cast<std::size_t>(i)].arm == 3);
  }
  CHECK(onboarding_arm("x", true, 2e-4).pricing.per_request_cost_hint.value() == 2e-4);
  CHECK(expected_clipped_reward(onboarding_arm("x", true, 2e-4).weights) == doctest::Approx(0.90).epsilon(0.005));
  CHECK(expected_clipped_reward(onboarding_arm("x", false, 2e-4).weights) == doctest::Approx(0.60).epsilon(0.005));
}

TEST_CASE("feedback delay keeps the run valid") {
  RunConfig cfg = cold_config();
  cfg.feedback_delay = 25;
  const auto t = run_seed(one_phase(400, 6.6e-4), tiered_source(), cfg, 0);
  CHECK(t.steps.size() == 400);
}

TEST_CASE("scenario json round trip and validation") {
  Scenario sc;
  sc.name = "rt";
  sc.budget = 3e-4;
  sc.n_seeds = 3;
  sc.order = PromptOrder::kFresh;
  sc.phases = {Phase{10, {PriceSet{{"a", 0.1, 0.1, std::nullopt}}, RewardMeanShift{"b", 0.4}}},
               Phase{5, {AddArm{{"c", std::nullopt, std::nullopt, 1e-3}, "heuristic", 50.0, 0.6}, RemoveArm{"a"}}}};
  const nlohmann::json doc = sc;
  const auto back = doc.get<Scenario>();
  CHECK(nlohmann::json(back) == doc);

  CHECK_THROWS_AS(nlohmann::json::parse(R"({"phases": []})").get<Scenario>(), std::invalid_argument);
  CHECK_THROWS(nlohmann::json::parse(R"({"phases": [{"length": 5, "perturbations": [{"type": "bogus"}]}]})")
                   .get<Scenario>());
  CHECK_THROWS(nlohmann::json::parse(R"({"order": "sideways", "phases": [{"length": 5}]})").get<Scenario>());
}

TEST_CASE("fresh order runs out of prompts") {
  Scenario sc = one_phase(5000, std::nullopt);
  sc.order = PromptOrder::kFresh;
  CHECK_THROWS_AS(run_seed(sc, tiered_source(), cold_config(), 0), std::invalid_argument);
}

TEST_CASE("matrix and trace files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "bprouter_sim_test";
  std::filesystem::create_directories(dir);
  const auto m = generate_synthetic(portfolio(), 50, 9);
  m.save_jsonl((dir / "m.jsonl").string());
  const auto back = RewardCostMatrix::load_jsonl((dir / "m.jsonl").string());
  CHECK(back.size() == 50);
  CHECK(back.prompts()[7].rewards == m.prompts()[7].rewards);
  CHECK((back.prompts()[7].context - m.prompts()[7].context).cwiseAbs().maxCoeff() == 0.0);

  Scenario sc;
  sc.budget = 3e-4;
  sc.phases = {Phase{120, {}}, Phase{80, {RewardMeanShift{"mistral-large", 0.6}}}};
  const auto t = run_seed(sc, tiered_source(), cold_config(), 5);
  write_trace_jsonl(t, (dir / "trace_seed5.jsonl").string());
  const auto r = read_trace_jsonl((dir / "trace_seed5.jsonl").string());
  CHECK(r.seed == 5);
  CHECK(r.arms == t.arms);
  REQUIRE(r.steps.size() == t.steps.size());
  CHECK(r.steps[150].reward == t.steps[150].reward);
  CHECK(r.steps[150].lambda == t.steps[150].lambda);
  CHECK(r.phases[1].shifted_means == t.phases[1].shifted_means);
  CHECK_THROWS(read_trace_jsonl((dir / "missing.jsonl").string()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("priors come from the offline matrix") {
  const auto off = generate_synthetic(portfolio(), 500, 99);
  const auto all = build_priors(off, {});
  CHECK(all.size() == 3);
  CHECK(all.at("llama-3.1-8b").bias_mass() == doctest::Approx(500.0));
  PriorRecipe head;
  head.subset = "head";
  head.count = 40;
  CHECK(build_priors(off, head).at("llama-3.1-8b").bias_mass() == doctest::Approx(40.0));
  PriorRecipe swap;
  swap.reward_swap = {{"llama-3.1-8b", "gemini-2.5-pro"}};
  const auto swapped = build_priors(off, swap);
  CHECK((swapped.at("llama-3.1-8b").theta - all.at("gemini-2.5-pro").theta).cwiseAbs().maxCoeff() < 1e-12);
  PriorRecipe bad;
  bad.subset = "odd";
  CHECK_THROWS_AS(build_priors(off, bad), std::invalid_argument);
}

TEST_CASE("recovery sweep shape") {
  RunConfig cfg = cold_config();
  const auto pts = run_recovery_sweep({0.8, 0.5}, "mistral-large", 200, 200, PromptOrder::kFresh, 6.6e-4,
                                      tiered_source(), cfg, 2, 0);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].ratios.size() == 2);
  CHECK(pts[1].severity > pts[0].severity);
}
