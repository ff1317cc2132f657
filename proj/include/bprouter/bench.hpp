#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bprouter/arm_stats.hpp"

namespace bprouter {

enum class BenchVariant {
  /// Router::route + Router::feedback with forgetting, pacing and bookkeeping.
  kFullRouter,
  /// LinUCB selection with Sherman-Morrison updates and nothing else.
  kBareSM,
  /// Same selection; the update re-inverts A from scratch.
  kCachedInverse,
  /// Update only accumulates A and b; every route inverts all K matrices.
  kPerRouteInverse,
};

const char* variant_name(BenchVariant v);
BenchVariant parse_variant(const std::string& name);

struct BenchConfig {
  int dim = 26;
  int arms = 3;
  BenchVariant variant = BenchVariant::kFullRouter;
  int measured_cycles = 4500;
  int warmup_cycles = 500;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  /// Full-router settings that make it numerically identical to plain
  /// LinUCB (gamma = 1, no pacing, no cost weight). Off for timing runs.
  bool inert_router = false;

  void validate() const;
};

struct BenchResult {
  BenchConfig config;
  double route_p50_us = 0.0;
  double route_p95_us = 0.0;
  double update_p50_us = 0.0;
  double update_p95_us = 0.0;
  double cycle_p50_us = 0.0;
  double throughput_rps = 0.0;
  /// Chosen arm per cycle (warmup included).
  std::vector<int> decisions;
  /// Final theta per arm.
  std::vector<Vector> thetas;
};

BenchResult run_bench(const BenchConfig& cfg);

struct EquivalenceReport {
  bool decisions_identical = true;
  double max_theta_diff = 0.0;
  std::size_t first_divergence = 0;  ///< cycle index, meaningful when not identical
};

/// Runs all four variants on the same stream (inert router) and compares
/// decisions and final posteriors against bare_sm.
EquivalenceReport check_equivalence(int dim, int arms, int cycles, std::uint64_t seed, double alpha = 0.1);

double percentile(std::vector<double> values, double q);

nlohmann::json machine_metadata();
nlohmann::json bench_to_json(const BenchResult& r);
std::string bench_csv_header();
std::string bench_csv_row(const BenchResult& r);

}  // namespace bprouter
