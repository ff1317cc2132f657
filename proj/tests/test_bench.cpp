#include <doctest.h>

#include "bprouter/bench.hpp"

using namespace bprouter;

TEST_CASE("variant names round trip") {
  for (auto v : {BenchVariant::kFullRouter, BenchVariant::kBareSM, BenchVariant::kCachedInverse,
                 BenchVariant::kPerRouteInverse}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("turbo"), std::invalid_argument);
}

TEST_CASE("percentile interpolates") {
  CHECK(percentile({1, 2, 3, 4, 5}, 0.5) == 3);
  CHECK(percentile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(percentile({7}, 0.95) == 7);
}

TEST_CASE("all variants agree on a shared stream") {
  for (int d : {8, 26}) {
    const auto eq = check_equivalence(d, 3, 600, 5);
    CHECK(eq.decisions_identical);
    CHECK(eq.max_theta_diff <= 1e-6);
  }
}

TEST_CASE("bench run reports sane numbers") {
  BenchConfig cfg;
  cfg.measured_cycles = 300;
  cfg.warmup_cycles = 50;
  for (auto v : {BenchVariant::kFullRouter, BenchVariant::kBareSM, BenchVariant::kCachedInverse,
                 BenchVariant::kPerRouteInverse}) {
    cfg.variant = v;
    const auto r = run_bench(cfg);
    CHECK(r.decisions.size() == 350);
    CHECK(r.route_p50_us > 0.0);
    CHECK(r.route_p95_us >= r.route_p50_us);
    CHECK(r.update_p95_us >= r.update_p50_us);
    CHECK(r.throughput_rps > 0.0);
    CHECK(bench_to_json(r).at("variant") == variant_name(v));
  }
  cfg.measured_cycles = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(machine_metadata().contains("compiler"));
}

TEST_CASE("shared selection path and update cost ordering") {
  BenchConfig cfg;
  cfg.measured_cycles = 1500;
  cfg.warmup_cycles = 200;
  cfg.variant = BenchVariant::kBareSM;
  const auto sm = run_bench(cfg);
  cfg.variant = BenchVariant::kCachedInverse;
  const auto ci = run_bench(cfg);
  CHECK(ci.route_p50_us / sm.route_p50_us < 2.0);
  CHECK(sm.route_p50_us / ci.route_p50_us < 2.0);
  CHECK(ci.update_p50_us > sm.update_p50_us);
}
