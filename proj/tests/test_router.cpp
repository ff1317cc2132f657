#include <doctest.h>

#include <cmath>
#include <random>

#include "bprouter/router.hpp"
#include "bprouter/simulator.hpp"

using namespace bprouter;

namespace {

RouterConfig rcfg(int d, double gamma, double alpha = 0.1) {
  RouterConfig c;
  c.dim = d;
  c.gamma = gamma;
  c.alpha = alpha;
  c.seed = 42;
  return c;
}

PacerConfig unpaced(double lambda_c = 0.3) {
  PacerConfig p;
  p.pacing_enabled = false;
  p.lambda_c = lambda_c;
  return p;
}

PacerConfig paced(double budget) {
  PacerConfig p;
  p.budget_per_request = budget;
  return p;
}

ModelPricing hinted(const std::string& id, double price) {
  return ModelPricing{id, std::nullopt, std::nullopt, price};
}

const std::vector<ModelPricing> kPortfolio{
    {"llama-3.1-8b", 0.0001, 0.0001, 2.9e-5},
    {"mistral-large", 0.0005, 0.0015, 5.3e-4},
    {"gemini-2.5-pro", 0.00125, 0.01, 1.5e-2},
};

double sq(const Vector& x, const Matrix& m) { return x.dot(m * x); }

}  // namespace

TEST_CASE("identical cold arms tie and the tie-break is uniform") {
  Router r(rcfg(4, 1.0), unpaced(0.0));
  for (const char* id : {"a", "b", "c"}) r.add_arm(hinted(id, 1e-3), ColdStart{}, 0);
  std::mt19937_64 rng(1);
  std::map<std::string, int> counts;
  const Vector x = sample_context(4, rng);
  for (int i = 0; i < 1000; ++i) ++counts[r.route(x).arm_id];
  double chi2 = 0.0;
  for (const auto& [id, n] : counts) chi2 += (n - 1000.0 / 3) * (n - 1000.0 / 3) / (1000.0 / 3);
  CHECK(counts.size() == 3);
  CHECK(chi2 < 13.82);  // chi-square, 2 dof, p = 0.001
}

TEST_CASE("staleness inflation") {
  const double alpha = 0.1;
  std::mt19937_64 rng(2);
  const Vector x = sample_context(5, rng);
  const double base = alpha * std::sqrt(x.squaredNorm());

  SUBCASE("fresh arm is undivided") {
    Router r(rcfg(5, 0.997, alpha), unpaced());
    r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
    r.route(x);
    CHECK(r.score("a", x).explore == doctest::Approx(base));
  }
  SUBCASE("cap at v_max") {
    Router r(rcfg(5, 0.997, alpha), unpaced());
    r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
    r.add_arm(hinted("b", 1e-3), ColdStart{}, 3000);
    for (int i = 0; i < 3000; ++i) CHECK(r.route(x).arm_id == "b");
    CHECK(r.score("a", x).explore / base == doctest::Approx(std::sqrt(200.0)));
  }
  SUBCASE("half-life doubles the variance") {
    Router r(rcfg(5, 0.997, alpha), unpaced());
    r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
    r.add_arm(hinted("b", 1e-3), ColdStart{}, 231);
    for (int i = 0; i < 231; ++i) r.route(x);
    const double ratio = r.score("a", x).explore / base;
    CHECK(ratio * ratio == doctest::Approx(2.0).epsilon(0.002));
  }
}

TEST_CASE("score decomposition") {
  Router r(rcfg(26, 0.997, 0.01), unpaced(0.3));
  for (const auto& p : kPortfolio) r.add_arm(p, ColdStart{}, 0);
  const auto views = r.arms();
  CHECK(views[0].c_tilde == 0.0);
  CHECK(views[1].c_tilde == doctest::Approx(1.0 / 3.0));
  std::mt19937_64 rng(3);
  const Vector x = sample_context(26, rng);
  const auto s = r.score("gemini-2.5-pro", x);
  CHECK(s.penalty == doctest::Approx(0.3 * views[2].c_tilde));
  CHECK(s.exploit == 0.0);
  CHECK(s.total() == doctest::Approx(s.exploit + s.explore - s.penalty));
}

TEST_CASE("feedback decays by the statistics age") {
  Router r(rcfg(4, 0.99), unpaced());
  r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
  std::mt19937_64 rng(4);
  auto oracle = ArmState::cold(4, 1.0);
  Step last = 0;
  for (int i = 0; i < 30; ++i) {
    const Vector x = sample_context(4, rng);
    const auto d = r.route(x);
    const int gap = i % 3;
    for (int k = 0; k < gap; ++k) r.route(x);  // never answered
    oracle.apply_forgetting(0.99, r.step() - last);
    oracle.absorb(x, 0.25, r.step());
    last = r.step();
    CHECK(r.feedback({d.request_id, 0.25, 1e-3}) == FeedbackOutcome::kApplied);
    CHECK((r.arm("a")->state->theta() - oracle.theta()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("delayed feedback matches immediate feedback at the same step") {
  std::mt19937_64 rng(5);
  const Vector x1 = sample_context(6, rng);
  std::vector<Vector> others;
  for (int i = 0; i < 100; ++i) others.push_back(sample_context(6, rng));

  Router delayed(rcfg(6, 0.997), unpaced());
  delayed.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
  const auto first = delayed.route(x1);
  for (const auto& x : others) delayed.route(x);
  delayed.feedback({first.request_id, 0.9, 1e-3});

  Router immediate(rcfg(6, 0.997), unpaced());
  immediate.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
  for (const auto& x : others) immediate.route(x);
  const auto last = immediate.route(x1);
  immediate.feedback({last.request_id, 0.9, 1e-3});

  CHECK(delayed.step() == immediate.step());
  const auto& a = delayed.arm("a")->state->theta();
  const auto& b = immediate.arm("a")->state->theta();
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("unknown feedback leaves state untouched") {
  Router r(rcfg(4, 0.997), unpaced());
  r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
  std::mt19937_64 rng(6);
  const auto d = r.route(sample_context(4, rng));
  const auto before = r.snapshot();
  CHECK(r.feedback({RequestId{999}, 0.5, 1e-3}) == FeedbackOutcome::kUnknownRequest);
  CHECK(r.snapshot() == before);
  CHECK_THROWS_AS(r.feedback({d.request_id, 1.5, 1e-3}), std::invalid_argument);
  CHECK(r.snapshot() == before);
  CHECK(r.feedback({d.request_id, 0.5, 1e-3}) == FeedbackOutcome::kApplied);
  CHECK(r.feedback({d.request_id, 0.5, 1e-3}) == FeedbackOutcome::kUnknownRequest);
}

TEST_CASE("burn-in") {
  std::mt19937_64 rng(7);
  Router r(rcfg(26, 0.997), unpaced());
  for (const auto& p : kPortfolio) r.add_arm(p, ColdStart{}, 0);
  for (int i = 0; i < 10; ++i) r.route(sample_context(26, rng));
  r.add_arm(hinted("new", 2e-4));
  for (int i = 0; i < 20; ++i) {
    const auto d = r.route(sample_context(26, rng));
    CHECK(d.arm_id == "new");
    CHECK(d.forced_burn_in);
  }
  CHECK_FALSE(r.route(sample_context(26, rng)).forced_burn_in);

  Router z(rcfg(26, 0.997), unpaced());
  for (const auto& p : kPortfolio) z.add_arm(p, ColdStart{}, 0);
  z.add_arm(hinted("new", 2e-4), ColdStart{}, 0);
  CHECK(z.burn_in_queue().empty());
  CHECK_FALSE(z.route(sample_context(26, rng)).forced_burn_in);
  CHECK_THROWS_AS(z.add_arm(hinted("new", 1e-4)), std::invalid_argument);
  CHECK_THROWS_AS(z.add_arm(hinted("neg", 1e-4), ColdStart{}, -1), std::invalid_argument);
}

TEST_CASE("ceiling holds through a cheap arm's burn-in") {
  std::mt19937_64 rng(8);
  Router r(rcfg(26, 0.997), paced(3e-4));
  for (const auto& p : kPortfolio) r.add_arm(p, ColdStart{}, 0);
  for (int i = 0; i < 200; ++i) {
    const auto d = r.route(sample_context(26, rng));
    r.feedback({d.request_id, 0.8, 1e-3});  // overspend so lambda rises
  }
  REQUIRE(r.lambda() > 0.0);
  r.add_arm(ModelPricing{"gemini-2.5-flash", 0.0002, 0.0006, 2e-4});
  for (int i = 0; i < 20; ++i) {
    const auto d = r.route(sample_context(26, rng));
    CHECK(d.forced_burn_in);
    CHECK(d.price <= d.ceiling);
    CHECK_FALSE(d.ceiling_override);
    r.feedback({d.request_id, 0.8, d.price});
  }
  CHECK(r.ceiling_overrides() == 0);
}

TEST_CASE("deleting arms") {
  std::mt19937_64 rng(9);
  Router r(rcfg(26, 0.997), paced(3e-4));
  for (const auto& p : kPortfolio) r.add_arm(p, ColdStart{}, 0);
  const auto pending = r.route(sample_context(26, rng));
  r.delete_arm(pending.arm_id);
  CHECK(r.feedback({pending.request_id, 0.5, 1e-4}) == FeedbackOutcome::kDiscarded);
  CHECK(r.feedback({pending.request_id, 0.5, 1e-4}) == FeedbackOutcome::kUnknownRequest);
  CHECK(r.discarded_feedback() == 1);
  for (int i = 0; i < 300; ++i) CHECK(r.route(sample_context(26, rng)).arm_id != pending.arm_id);
  CHECK_THROWS_AS(r.delete_arm("nope"), std::invalid_argument);
}

TEST_CASE("removing the most expensive arm lowers the ceiling") {
  std::mt19937_64 rng(10);
  Router r(rcfg(26, 0.997), paced(1e-4));
  for (const auto& p : kPortfolio) r.add_arm(p, ColdStart{}, 0);
  r.add_arm(hinted("mid", 2e-3), ColdStart{}, 0);
  for (int i = 0; i < 50; ++i) {
    const auto d = r.route(sample_context(26, rng));
    r.feedback({d.request_id, 0.5, 1e-2});
  }
  const double lambda = r.lambda();
  REQUIRE(lambda > 0.0);
  auto survivors = [&](const Router& rr) {
    std::vector<std::string> out;
    double c_max = 0.0;
    for (const auto& a : rr.arms()) c_max = std::max(c_max, a.price);
    for (const auto& a : rr.arms())
      if (a.price <= c_max / (1.0 + lambda)) out.push_back(a.id);
    return std::make_pair(c_max / (1.0 + lambda), out);
  };
  const auto before = survivors(r);
  CHECK(r.route(sample_context(26, rng)).ceiling == doctest::Approx(before.first));
  r.delete_arm("gemini-2.5-pro");
  const auto after = survivors(r);
  CHECK(after.first == doctest::Approx(2e-3 / (1.0 + lambda)));
  const auto d = r.route(sample_context(26, rng));
  CHECK(d.ceiling == doctest::Approx(after.first).epsilon(1e-9));
  CHECK(d.eligible_count == after.second.size());
}

TEST_CASE("repricing updates normalized cost") {
  Router r(rcfg(4, 0.997), unpaced());
  r.add_arm(ModelPricing{"g", 0.00125, 0.01, std::nullopt}, ColdStart{}, 0);
  CHECK(r.arm("g")->c_tilde == doctest::Approx(0.5833).epsilon(1e-3));
  r.set_pricing(ModelPricing{"g", 0.0001, 0.0001, std::nullopt});
  CHECK(r.arm("g")->c_tilde == 0.0);
  CHECK_THROWS_AS(r.set_pricing(ModelPricing{"zz", 0.1, 0.1, std::nullopt}), std::invalid_argument);
}

TEST_CASE("context validation") {
  Router r(rcfg(4, 0.997), unpaced());
  CHECK_THROWS_AS(r.route(Vector::Ones(4)), std::logic_error);
  r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
  CHECK_THROWS_AS(r.route(Vector::Ones(3)), std::invalid_argument);
  Vector nobias = Vector::Ones(4);
  nobias(3) = 0.5;
  CHECK_THROWS_AS(r.route(nobias), std::invalid_argument);
}

TEST_CASE("snapshot replay") {
  std::mt19937_64 rng(11);
  Router r(rcfg(26, 0.997, 0.05), paced(6.6e-4));
  for (const auto& p : kPortfolio) r.add_arm(p, ColdStart{}, 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const auto d = r.route(sample_context(26, rng));
    if (i % 7) r.feedback({d.request_id, u(rng), d.price});
  }
  r.add_arm(hinted("late", 1e-4));
  const auto snap = r.snapshot();
  auto copy = Router::from_snapshot(snap);
  CHECK(copy->snapshot() == snap);

  std::mt19937_64 a_rng(12), b_rng(12);
  for (int i = 0; i < 100; ++i) {
    const auto da = r.route(sample_context(26, a_rng));
    const auto db = copy->route(sample_context(26, b_rng));
    CHECK(da.arm_id == db.arm_id);
    CHECK(da.request_id == db.request_id);
    const double rew = u(rng);
    r.feedback({da.request_id, rew, da.price});
    copy->feedback({db.request_id, rew, db.price});
  }
}

TEST_CASE("empty and corrupt snapshots") {
  Router empty(rcfg(4, 0.997), unpaced());
  const auto restored = Router::from_snapshot(empty.snapshot());
  CHECK(restored->size() == 0);

  Router r(rcfg(4, 0.997), unpaced());
  r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
  const auto good = r.snapshot();
  auto bad = good;
  bad["arms"][0]["state"]["b"] = "garbage";
  CHECK_THROWS_AS(r.restore(bad), std::invalid_argument);
  CHECK(r.snapshot() == good);
  bad = good;
  bad["format_version"] = 0;
  CHECK_THROWS_AS(r.restore(bad), std::invalid_argument);
  CHECK_THROWS_AS(Router::from_snapshot(nlohmann::json::array()), std::invalid_argument);
  CHECK(r.snapshot() == good);
}

TEST_CASE("stale pending decisions are evicted") {
  RouterConfig c = rcfg(4, 0.997);
  c.pending_ttl = 10;
  Router r(c, unpaced());
  r.add_arm(hinted("a", 1e-3), ColdStart{}, 0);
  std::mt19937_64 rng(13);
  const auto old = r.route(sample_context(4, rng));
  for (int i = 0; i < 20; ++i) r.route(sample_context(4, rng));
  CHECK(r.evicted() >= 1);
  CHECK(r.feedback({old.request_id, 0.5, 1e-3}) == FeedbackOutcome::kUnknownRequest);
  // Survivors were issued within the last ttl+1 steps, plus the newest route.
  CHECK(r.pending() <= static_cast<std::size_t>(c.pending_ttl) + 2);
}

TEST_CASE("prior and heuristic starts") {
  std::mt19937_64 rng(14);
  PriorBuilder b(4);
  for (int i = 0; i < 200; ++i) b.add(sample_context(4, rng), 0.7);
  const auto prior = b.build("t");
  Router r(rcfg(4, 0.997), unpaced());
  r.add_arm(hinted("p", 1e-3), PriorStart{prior, 1164.0}, 0);
  r.add_arm(hinted("h", 1e-3), HeuristicStart{1164.0, 0.5}, 0);
  const Vector x = sample_context(4, rng);
  CHECK(r.score("p", x).exploit == doctest::Approx(0.7).epsilon(1e-3));
  CHECK(r.score("h", x).exploit == doctest::Approx(0.5));
  CHECK(sq(x, r.arm("h")->state->inverse()) < x.squaredNorm());
}
