#include "bprouter/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <unistd.h>

#include "bprouter/router.hpp"
#include "bprouter/simulator.hpp"

namespace bprouter {

const char* variant_name(BenchVariant v) {
  switch (v) {
    case BenchVariant::kFullRouter: return "full_router";
    case BenchVariant::kBareSM: return "bare_sm";
    case BenchVariant::kCachedInverse: return "cached_inverse";
    case BenchVariant::kPerRouteInverse: return "per_route_inverse";
  }
  return "full_router";
}

BenchVariant parse_variant(const std::string& name) {
  for (auto v : {BenchVariant::kFullRouter, BenchVariant::kBareSM, BenchVariant::kCachedInverse,
                 BenchVariant::kPerRouteInverse}) {
    if (name == variant_name(v)) return v;
  }
  throw std::invalid_argument("unknown bench variant " + name);
}

void BenchConfig::validate() const {
  if (dim < 2) throw std::invalid_argument("bench dimension must be at least 2");
  if (arms < 1) throw std::invalid_argument("bench needs at least one arm");
  if (measured_cycles < 1 || warmup_cycles < 0) throw std::invalid_argument("bench cycle counts out of range");
  if (!(alpha >= 0.0)) throw std::invalid_argument("bench alpha must be non-negative");
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

using Clock = std::chrono::steady_clock;

double micros(Clock::duration d) { return std::chrono::duration<double, std::micro>(d).count(); }

/// Reward stream: one random weight vector per arm, rewards clipped to [0, 1].
struct Stream {
  std::vector<Vector> weights;
  std::mt19937_64 rng;
  std::normal_distribution<double> noise{0.0, 0.05};

  Stream(int dim, int arms, std::uint64_t seed) : rng(seed) {
    std::normal_distribution<double> normal;
    for (int a = 0; a < arms; ++a) {
      Vector w(dim);
      for (int i = 0; i < dim - 1; ++i) w(i) = normal(rng);
      w.head(dim - 1) *= 0.3 / w.head(dim - 1).norm();
      w(dim - 1) = 0.5 + 0.1 * a / std::max(1, arms - 1);
      weights.push_back(std::move(w));
    }
  }
  Vector context(int dim) { return sample_context(dim, rng); }
  double reward(int arm, const Vector& x) {
    return std::clamp(weights[static_cast<std::size_t>(arm)].dot(x) + noise(rng), 0.0, 1.0);
  }
};

/// Plain LinUCB over K arms; the variant only changes where inversions happen.
class BareLinUCB {
 public:
  BareLinUCB(int dim, int arms, double alpha, std::uint64_t seed, BenchVariant variant)
      : alpha_(alpha), variant_(variant), rng_(seed) {
    for (int a = 0; a < arms; ++a) {
      arms_.push_back({Matrix::Identity(dim, dim), Matrix::Identity(dim, dim), Vector::Zero(dim), Vector::Zero(dim)});
    }
  }

  int route(const Vector& x) {
    double best = -std::numeric_limits<double>::infinity();
    ties_.clear();
    for (std::size_t a = 0; a < arms_.size(); ++a) {
      auto& arm = arms_[a];
      if (variant_ == BenchVariant::kPerRouteInverse) {
        const int d = static_cast<int>(x.size());
        arm.a_inv = arm.a.llt().solve(Matrix::Identity(d, d));
        arm.theta.noalias() = arm.a_inv * arm.b;
      }
      const double s = arm.theta.dot(x) + alpha_ * std::sqrt(std::max(x.dot(arm.a_inv * x), 0.0));
      if (s > best) {
        best = s;
        ties_.assign(1, static_cast<int>(a));
      } else if (s == best) {
        ties_.push_back(static_cast<int>(a));
      }
    }
    if (ties_.size() == 1) return ties_.front();
    std::uniform_int_distribution<std::size_t> pick(0, ties_.size() - 1);
    return ties_[pick(rng_)];
  }

  void update(int a, const Vector& x, double r) {
    auto& arm = arms_[static_cast<std::size_t>(a)];
    arm.a.noalias() += x * x.transpose();
    arm.b.noalias() += r * x;
    switch (variant_) {
      case BenchVariant::kBareSM: {
        const Vector u = arm.a_inv * x;
        arm.a_inv.noalias() -= (u / (1.0 + x.dot(u))) * u.transpose();
        arm.theta.noalias() = arm.a_inv * arm.b;
        break;
      }
      case BenchVariant::kCachedInverse: {
        const int d = static_cast<int>(x.size());
        arm.a_inv = arm.a.llt().solve(Matrix::Identity(d, d));
        arm.theta.noalias() = arm.a_inv * arm.b;
        break;
      }
      default:
        break;
    }
  }

  std::vector<Vector> thetas() const {
    std::vector<Vector> out;
    for (const auto& a : arms_) out.push_back(a.a.llt().solve(a.b));
    return out;
  }

 private:
  struct Arm {
    Matrix a;
    Matrix a_inv;
    Vector b;
    Vector theta;
  };
  double alpha_;
  BenchVariant variant_;
  std::mt19937_64 rng_;
  std::vector<Arm> arms_;
  std::vector<int> ties_;
};

}  // namespace

BenchResult run_bench(const BenchConfig& cfg) {
  cfg.validate();
  BenchResult res;
  res.config = cfg;
  Stream stream(cfg.dim, cfg.arms, cfg.seed ^ 0x5bd1e995ULL);
  const int total = cfg.warmup_cycles + cfg.measured_cycles;

  std::vector<double> route_us, update_us, cycle_us;
  route_us.reserve(static_cast<std::size_t>(cfg.measured_cycles));
  update_us.reserve(static_cast<std::size_t>(cfg.measured_cycles));
  cycle_us.reserve(static_cast<std::size_t>(cfg.measured_cycles));
  Clock::duration measured{};

  auto record = [&](int cycle, Clock::time_point t0, Clock::time_point t1, Clock::time_point t2) {
    if (cycle < cfg.warmup_cycles) return;
    route_us.push_back(micros(t1 - t0));
    update_us.push_back(micros(t2 - t1));
    cycle_us.push_back(micros(t2 - t0));
    measured += t2 - t0;
  };

  if (cfg.variant == BenchVariant::kFullRouter) {
    RouterConfig rc;
    rc.dim = cfg.dim;
    rc.alpha = cfg.alpha;
    rc.seed = cfg.seed;
    rc.burn_in_pulls = 0;
    PacerConfig pc;
    std::vector<double> prices{2.9e-5, 5.3e-4, 1.5e-2};
    if (cfg.inert_router) {
      rc.gamma = 1.0;
      pc.pacing_enabled = false;
      pc.lambda_c = 0.0;
    } else {
      pc.budget_per_request = 6.6e-4;
    }
    Router router(rc, pc);
    for (int a = 0; a < cfg.arms; ++a) {
      ModelPricing p;
      p.model_id = "arm" + std::to_string(a);
      p.per_request_cost_hint = prices[static_cast<std::size_t>(a) % prices.size()];
      router.add_arm(p);
    }
    for (int c = 0; c < total; ++c) {
      const Vector x = stream.context(cfg.dim);
      const auto t0 = Clock::now();
      const RouteDecision d = router.route(x);
      const auto t1 = Clock::now();
      const int arm = std::stoi(d.arm_id.substr(3));
      const double r = stream.reward(arm, x);
      const auto t1b = Clock::now();
      router.feedback({d.request_id, r, d.price});
      const auto t2 = Clock::now();
      record(c, t0, t1, t2 - (t1b - t1));
      res.decisions.push_back(arm);
    }
    for (const auto& v : router.arms()) res.thetas.push_back(v.state->theta());
  } else {
    BareLinUCB bandit(cfg.dim, cfg.arms, cfg.alpha, cfg.seed, cfg.variant);
    for (int c = 0; c < total; ++c) {
      const Vector x = stream.context(cfg.dim);
      const auto t0 = Clock::now();
      const int arm = bandit.route(x);
      const auto t1 = Clock::now();
      const double r = stream.reward(arm, x);
      const auto t1b = Clock::now();
      bandit.update(arm, x, r);
      const auto t2 = Clock::now();
      record(c, t0, t1, t2 - (t1b - t1));
      res.decisions.push_back(arm);
    }
    res.thetas = bandit.thetas();
  }

  res.route_p50_us = percentile(route_us, 0.50);
  res.route_p95_us = percentile(route_us, 0.95);
  res.update_p50_us = percentile(update_us, 0.50);
  res.update_p95_us = percentile(update_us, 0.95);
  res.cycle_p50_us = percentile(cycle_us, 0.50);
  const double secs = std::chrono::duration<double>(measured).count();
  res.throughput_rps = secs > 0.0 ? cfg.measured_cycles / secs : 0.0;
  return res;
}

EquivalenceReport check_equivalence(int dim, int arms, int cycles, std::uint64_t seed, double alpha) {
  BenchConfig base;
  base.dim = dim;
  base.arms = arms;
  base.measured_cycles = cycles;
  base.warmup_cycles = 0;
  base.seed = seed;
  base.alpha = alpha;
  base.inert_router = true;
  base.variant = BenchVariant::kBareSM;
  const BenchResult ref = run_bench(base);

  EquivalenceReport rep;
  for (auto v : {BenchVariant::kFullRouter, BenchVariant::kCachedInverse, BenchVariant::kPerRouteInverse}) {
    BenchConfig cfg = base;
    cfg.variant = v;
    const BenchResult r = run_bench(cfg);
    for (std::size_t i = 0; i < ref.decisions.size(); ++i) {
      if (r.decisions[i] != ref.decisions[i]) {
        if (rep.decisions_identical || i < rep.first_divergence) rep.first_divergence = i;
        rep.decisions_identical = false;
        break;
      }
    }
    for (std::size_t a = 0; a < ref.thetas.size(); ++a) {
      rep.max_theta_diff = std::max(rep.max_theta_diff, (r.thetas[a] - ref.thetas[a]).cwiseAbs().maxCoeff());
    }
  }
  return rep;
}

nlohmann::json machine_metadata() {
  char host[256] = {0};
  gethostname(host, sizeof(host) - 1);
  return {{"hostname", host},
          {"hardware_concurrency", std::thread::hardware_concurrency()},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
#ifdef NDEBUG
          {"assertions", false},
#else
          {"assertions", true},
#endif
          {"pointer_bits", sizeof(void*) * 8}};
}

nlohmann::json bench_to_json(const BenchResult& r) {
  return {{"variant", variant_name(r.config.variant)},
          {"d", r.config.dim},
          {"K", r.config.arms},
          {"measured_cycles", r.config.measured_cycles},
          {"warmup_cycles", r.config.warmup_cycles},
          {"route_p50_us", r.route_p50_us},
          {"route_p95_us", r.route_p95_us},
          {"update_p50_us", r.update_p50_us},
          {"update_p95_us", r.update_p95_us},
          {"cycle_p50_us", r.cycle_p50_us},
          {"throughput_rps", r.throughput_rps}};
}

std::string bench_csv_header() {
  return "variant,d,K,route_p50_us,route_p95_us,update_p50_us,update_p95_us,cycle_p50_us,throughput_rps";
}

std::string bench_csv_row(const BenchResult& r) {
  std::ostringstream out;
  out << variant_name(r.config.variant) << ',' << r.config.dim << ',' << r.config.arms << ',' << r.route_p50_us
      << ',' << r.route_p95_us << ',' << r.update_p50_us << ',' << r.update_p95_us << ',' << r.cycle_p50_us << ','
      << r.throughput_rps;
  return out.str();
}

}  // namespace bprouter
