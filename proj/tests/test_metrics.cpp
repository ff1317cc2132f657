#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "bprouter/metrics.hpp"
#include "bprouter/simulator.hpp"

using namespace bprouter;

namespace {

// Trace over a matrix for a fixed policy: pick(prompt index) -> arm index.
template <typename Pick>
SeedTrace replay(const RewardCostMatrix& m, std::size_t n, Pick pick, std::optional<double> budget = {}) {
  SeedTrace t;
  t.arms = m.arm_ids();
  t.budget = budget;
  t.phases = {PhaseInfo{static_cast<int>(n), {}}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = m.prompts()[i];
    StepLog s;
    s.step = static_cast<Step>(i + 1);
    s.prompt = i;
    s.arm = pick(i);
    s.reward = p.rewards.at(t.arms[static_cast<std::size_t>(s.arm)]);
    s.cost = p.costs.at(t.arms[static_cast<std::size_t>(s.arm)]);
    s.oracle_reward = m.oracle_reward(i);
    t.steps.push_back(s);
  }
  return t;
}

const RewardCostMatrix& matrix() {
  static const auto m = generate_synthetic(tiered_portfolio(), 1000, 4);
  return m;
}

}  // namespace

TEST_CASE("oracle policy has zero regret") {
  const auto& m = matrix();
  const auto t = replay(m, 500, [&](std::size_t i) {
    const auto& p = m.prompts()[i];
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (p.rewards.at(m.arm_ids()[k]) > p.rewards.at(m.arm_ids()[best])) best = k;
    return best;
  });
  for (double r : regret_series(t)) CHECK(r == 0.0);
}

TEST_CASE("single-arm regret is exact") {
  const auto& m = matrix();
  const auto t = replay(m, 400, [](std::size_t) { return 1; });
  double expect = 0.0;
  for (std::size_t i = 0; i < 400; ++i) expect += m.oracle_reward(i) - m.prompts()[i].rewards.at("mistral-large");
  CHECK(regret_series(t).back() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(regret_at(regret_series(t), 200) == doctest::Approx(regret_series(t)[199]));
  CHECK(regret_at(regret_series(t), 5000) == regret_series(t).back());
}

TEST_CASE("uniform-random regret matches its closed form") {
  const auto& m = matrix();
  const std::size_t n = 1000;
  double expect = 0.0, var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = m.prompts()[i];
    double mean = 0.0, sq = 0.0;
    for (const auto& id : m.arm_ids()) mean += p.rewards.at(id) / 3.0;
    for (const auto& id : m.arm_ids()) sq += (p.rewards.at(id) - mean) * (p.rewards.at(id) - mean) / 3.0;
    expect += m.oracle_reward(i) - mean;
    var += sq;
  }
  std::vector<double> finals;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::uniform_int_distribution<int> arm(0, 2);
    finals.push_back(regret_series(replay(m, n, [&](std::size_t) { return arm(rng); })).back());
  }
  CHECK(std::abs(mean_of(finals) - expect) <= 3.0 * std::sqrt(var / 20.0));
}

TEST_CASE("compliance") {
  const auto& m = matrix();
  SeedTrace t = replay(m, 100, [](std::size_t) { return 0; });
  for (auto& s : t.steps) s.cost = 3e-4;
  CHECK(compliance(t, 3e-4)[0] == doctest::Approx(1.0));
  for (auto& s : t.steps) s.cost = 2.9e-5;
  CHECK(compliance(t, 3.0e-4)[0] == doctest::Approx(0.0967).epsilon(1e-3));

  const auto real = replay(m, 300, [](std::size_t i) { return static_cast<int>(i % 3); });
  double ratio = 0.0;
  for (const auto& s : real.steps) ratio += s.cost / 6.6e-4;
  CHECK(compliance(real, 6.6e-4)[0] == doctest::Approx(ratio / 300.0).epsilon(1e-12));
  CHECK_THROWS_AS(compliance(real, 0.0), std::invalid_argument);
}

TEST_CASE("pacer-off spends more than pacer-on on the drift scenario") {
  const auto spec = tiered_portfolio();
  const Source src{generate_synthetic(spec, 2000, 1), spec.registry()};
  RunConfig on;
  on.init = InitMode::kPrior;
  on.priors = build_priors(generate_synthetic(spec, 2000, 99), {});
  RunConfig off = on;
  off.pacer.pacing_enabled = false;
  Scenario sc;
  sc.budget = 3e-4;
  sc.phases = {Phase{600, {}},
               Phase{600, {PriceSet{{"gemini-2.5-pro", 0.0001, 0.0001, 2.6667e-4}}}},
               Phase{600, {}}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = run_seed(sc, src, on, seed);
    const auto b = run_seed(sc, src, off, seed);
    CHECK(compliance(b, 3e-4)[0] > compliance(a, 3e-4)[0]);
  }
}

TEST_CASE("bootstrap intervals") {
  const auto c = bootstrap_ci({0.4, 0.4, 0.4, 0.4}, 0.95, 200, 1);
  CHECK(c.low == 0.4);
  CHECK(c.high == 0.4);

  const std::vector<double> v{1.0, 2.0, 5.0, 7.0};
  const auto one = bootstrap_ci(v, 0.95, 1, 3);
  CHECK(one.low == one.high);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, 3);
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += v[pick(rng)];
  CHECK(one.low == doctest::Approx(s / 4.0));

  CHECK_THROWS_AS(bootstrap_ci({1.0}), std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_ci({1.0, 2.0}, 1.5), std::invalid_argument);
  const auto med = bootstrap_ci({1.0, 2.0, 3.0, 100.0}, 0.9, 500, 2, Statistic::kMedian);
  CHECK(med.low >= 1.0);
  CHECK(med.high <= 100.0);
  CHECK(med.low < med.high);
}

TEST_CASE("bootstrap coverage") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> z(2.0, 1.0);
  int covered = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> sample(1000);
    for (auto& x : sample) x = z(rng);
    const auto ci = bootstrap_ci(sample, 0.95, 400, static_cast<std::uint64_t>(rep));
    covered += ci.low <= 2.0 && 2.0 <= ci.high;
  }
  CHECK(covered / 200.0 >= 0.90);
  CHECK(covered / 200.0 <= 0.99);
}

TEST_CASE("bootstrap width shrinks with more seeds") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  auto width = [&](int n) {
    double w = 0.0;
    for (int rep = 0; rep < 30; ++rep) {
      std::vector<double> s(static_cast<std::size_t>(n));
      for (auto& x : s) x = z(rng);
      const auto ci = bootstrap_ci(s, 0.95, 500, static_cast<std::uint64_t>(rep));
      w += ci.high - ci.low;
    }
    return w / 30;
  };
  CHECK(width(80) < width(5));
}

TEST_CASE("catastrophic seeds") {
  CHECK(catastrophic_flags({3, 3, 3, 3}, median({3, 3, 3, 3})).count == 0);
  std::vector<double> r{2, 2, 2, 2, 6};
  const auto rep = catastrophic_flags(r, median(r));
  CHECK(rep.count == 1);
  CHECK(rep.flags.back());

  // Twenty seeds across three conditions, flags against the pooled median.
  std::mt19937_64 rng(8);
  std::lognormal_distribution<double> ln(0.0, 0.8);
  std::vector<double> pooled;
  std::vector<std::vector<double>> cond(3, std::vector<double>(20));
  for (auto& c : cond)
    for (auto& v : c) pooled.push_back(v = ln(rng));
  const double med = median(pooled);
  for (const auto& c : cond) {
    std::size_t brute = 0;
    for (double v : c) brute += v > 2.0 * med;
    CHECK(catastrophic_flags(c, med).count == brute);
  }
}

TEST_CASE("windowed shares") {
  const auto& m = matrix();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> arm(0, 2);
  const auto t = replay(m, 437, [&](std::size_t) { return arm(rng); });
  const auto w = windowed(t, 50);
  CHECK(w.share.size() == 9);
  for (const auto& row : w.share) {
    CHECK(row.size() == 3);
    CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0));
  }
  int last = 0;
  for (std::size_t i = 237; i < 437; ++i) last += t.steps[i].arm == 2;
  CHECK(trailing_share(t, "gemini-2.5-pro", 200) == doctest::Approx(last / 200.0));
  CHECK_THROWS_AS(windowed(t, 0), std::invalid_argument);
}

TEST_CASE("summaries and aggregate report") {
  const auto spec = tiered_portfolio();
  const Source src{generate_synthetic(spec, 1000, 1), spec.registry()};
  RunConfig cfg;
  Scenario sc;
  sc.budget = 6.6e-4;
  sc.phases = {Phase{250, {}}, Phase{250, {RewardMeanShift{"mistral-large", 0.7}}}, Phase{250, {}}};
  sc.n_seeds = 3;
  const auto traces = run_scenario(sc, src, cfg);
  const auto s = summarize(traces[0]);
  CHECK(s.mean_reward.size() == 3);
  CHECK(s.compliance.size() == 3);
  CHECK(s.recovery_ratio.value() == doctest::Approx(s.mean_reward[2] / s.mean_reward[0]));
  const auto agg = aggregate_report(traces, 500);
  CHECK(agg.at("n_seeds") == 3);
  CHECK(agg.at("phases").size() == 3);
  CHECK(agg.at("phases")[0].at("compliance").at("ci").is_array());
  CHECK(agg.contains("recovery_ratio"));
  const auto single = aggregate_report({traces[0]}, 500);
  CHECK(single.at("phases")[0].at("compliance").at("ci").is_null());
  CHECK_THROWS_AS(aggregate_report({}), std::invalid_argument);
  CHECK(summary_to_json(s, traces[0].arms).at("selection_share").size() == 3);
}
