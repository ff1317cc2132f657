#include "bprouter/router.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bprouter {

void RouterConfig::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(v_max >= 1.0)) throw std::invalid_argument("v_max must be at least 1");
  if (dim < 2) throw std::invalid_argument("context dimension must be at least 2");
  if (burn_in_pulls < 0) throw std::invalid_argument("burn_in_pulls must be non-negative");
  if (!(lambda0 > 0.0)) throw std::invalid_argument("lambda0 must be positive");
  if (!(expected_tokens > 0.0)) throw std::invalid_argument("expected_tokens must be positive");
  if (pending_ttl < 0) throw std::invalid_argument("pending_ttl must be non-negative");
  if (!(cost_bounds.floor > 0.0 && cost_bounds.ceil > cost_bounds.floor)) {
    throw std::invalid_argument("cost bounds need 0 < floor < ceil");
  }
}

void to_json(nlohmann::json& doc, const RouterConfig& cfg) {
  doc = nlohmann::json{
      {"alpha", cfg.alpha},
      {"gamma", cfg.gamma},
      {"v_max", cfg.v_max},
      {"d", cfg.dim},
      {"burn_in_pulls", cfg.burn_in_pulls},
      {"seed", cfg.seed},
      {"lambda0", cfg.lambda0},
      {"reward_policy", cfg.reward_policy == RewardPolicy::kClamp ? "clamp" : "reject"},
      {"cost_floor", cfg.cost_bounds.floor},
      {"cost_ceil", cfg.cost_bounds.ceil},
      {"expected_tokens", cfg.expected_tokens},
      {"pending_ttl", cfg.pending_ttl},
  };
}

void from_json(const nlohmann::json& doc, RouterConfig& cfg) {
  cfg = RouterConfig{};
  cfg.alpha = doc.value("alpha", cfg.alpha);
  cfg.gamma = doc.value("gamma", cfg.gamma);
  cfg.v_max = doc.value("v_max", cfg.v_max);
  cfg.dim = doc.value("d", cfg.dim);
  cfg.burn_in_pulls = doc.value("burn_in_pulls", cfg.burn_in_pulls);
  cfg.seed = doc.value("seed", cfg.seed);
  cfg.lambda0 = doc.value("lambda0", cfg.lambda0);
  const auto policy = doc.value("reward_policy", std::string("reject"));
  if (policy == "clamp") {
    cfg.reward_policy = RewardPolicy::kClamp;
  } else if (policy == "reject") {
    cfg.reward_policy = RewardPolicy::kReject;
  } else {
    throw std::invalid_argument("unknown reward_policy " + policy);
  }
  cfg.cost_bounds.floor = doc.value("cost_floor", cfg.cost_bounds.floor);
  cfg.cost_bounds.ceil = doc.value("cost_ceil", cfg.cost_bounds.ceil);
  cfg.expected_tokens = doc.value("expected_tokens", cfg.expected_tokens);
  cfg.pending_ttl = doc.value("pending_ttl", cfg.pending_ttl);
}

Router::Router(const RouterConfig& cfg, const PacerConfig& pacer_cfg)
    : cfg_(cfg), st_{Pacer(pacer_cfg), {}, {}, {}, std::mt19937_64(cfg.seed)} {
  cfg_.validate();
}

Router::Arm* Router::find(const std::string& id) {
  for (auto& a : st_.arms)
    if (a.id == id) return &a;
  return nullptr;
}

const Router::Arm* Router::find(const std::string& id) const {
  for (const auto& a : st_.arms)
    if (a.id == id) return &a;
  return nullptr;
}

void Router::check_context(const Vector& x) const {
  if (x.size() != cfg_.dim) throw std::invalid_argument("context dimension mismatch");
  if (!x.allFinite()) throw std::invalid_argument("context has non-finite entries");
  if (std::abs(x(cfg_.dim - 1) - 1.0) > 1e-12) {
    throw std::invalid_argument("context must end with a unit bias component");
  }
}

void Router::reprice(Arm& arm) const {
  arm.pricing.validate();
  arm.c_tilde = normalize_cost(unit_rate(arm.pricing, cfg_.expected_tokens), cfg_.cost_bounds);
  arm.price = price_per_request(arm.pricing, cfg_.expected_tokens);
}

Router::Arm Router::make_arm(const ModelPricing& pricing, const ArmInit& init) const {
  ArmState state = std::visit(
      [&](const auto& how) -> ArmState {
        using T = std::decay_t<decltype(how)>;
        if constexpr (std::is_same_v<T, ColdStart>) {
          return ArmState::cold(cfg_.dim, cfg_.lambda0);
        } else if constexpr (std::is_same_v<T, PriorStart>) {
          if (how.prior.dim() != cfg_.dim) throw std::invalid_argument("prior dimension mismatch");
          return ArmState::from_prior(how.prior, how.n_eff, cfg_.lambda0);
        } else {
          return ArmState::heuristic(cfg_.dim, how.n_eff, how.bias_reward, cfg_.lambda0);
        }
      },
      init);
  Arm arm{pricing.model_id, pricing, 0.0, 0.0, std::move(state)};
  reprice(arm);
  return arm;
}

void Router::add_arm(const ModelPricing& pricing, const ArmInit& init, std::optional<int> burn_in) {
  const int pulls = burn_in.value_or(cfg_.burn_in_pulls);
  if (pulls < 0) throw std::invalid_argument("burn-in pulls must be non-negative");
  std::lock_guard lock(mu_);
  if (find(pricing.model_id)) throw std::invalid_argument("duplicate arm " + pricing.model_id);
  Arm arm = make_arm(pricing, init);
  arm.state.stamp(st_.t);
  st_.arms.push_back(std::move(arm));
  if (pulls > 0) st_.burn_in.push_back({pricing.model_id, pulls});
}

void Router::delete_arm(const std::string& model_id) {
  std::lock_guard lock(mu_);
  auto it = std::find_if(st_.arms.begin(), st_.arms.end(),
                         [&](const Arm& a) { return a.id == model_id; });
  if (it == st_.arms.end()) throw std::invalid_argument("unknown arm " + model_id);
  if (st_.arms.size() < 2) throw std::invalid_argument("cannot remove the last arm");
  st_.arms.erase(it);
  std::erase_if(st_.burn_in, [&](const BurnIn& b) { return b.arm_id == model_id; });
}

void Router::set_pricing(const ModelPricing& pricing) {
  std::lock_guard lock(mu_);
  Arm* arm = find(pricing.model_id);
  if (!arm) throw std::invalid_argument("unknown arm " + pricing.model_id);
  Arm updated = *arm;
  updated.pricing = pricing;
  reprice(updated);
  *arm = std::move(updated);
}

ScoreBreakdown Router::score_locked(const Arm& arm, const Vector& x) const {
  const Step dt = st_.t - std::max(arm.state.last_update(), arm.state.last_played());
  const double decay = std::pow(cfg_.gamma, static_cast<double>(dt));
  const double divisor = std::max(decay, 1.0 / cfg_.v_max);
  const double v = arm.state.variance(x) / divisor;
  ScoreBreakdown s;
  s.exploit = arm.state.predict(x);
  s.explore = cfg_.alpha * std::sqrt(std::max(v, 0.0));
  s.penalty = st_.pacer.penalty(arm.c_tilde);
  return s;
}

ScoreBreakdown Router::score(const std::string& model_id, const Vector& x) const {
  std::lock_guard lock(mu_);
  check_context(x);
  const Arm* arm = find(model_id);
  if (!arm) throw std::invalid_argument("unknown arm " + model_id);
  return score_locked(*arm, x);
}

void Router::evict_stale() {
  const Step horizon = st_.t - cfg_.pending_ttl;
  while (!st_.pending.empty() && st_.pending.begin()->second.issued < horizon) {
    st_.pending.erase(st_.pending.begin());
    ++st_.evicted;
  }
}

RouteDecision Router::route(const Vector& x) {
  std::lock_guard lock(mu_);
  if (st_.arms.empty()) throw std::logic_error("route called with an empty registry");
  check_context(x);
  evict_stale();

  std::vector<double> prices;
  prices.reserve(st_.arms.size());
  for (const auto& a : st_.arms) prices.push_back(a.price);
  const EligibleSet eligible = st_.pacer.eligible(prices);

  RouteDecision d;
  std::size_t chosen = 0;
  if (!st_.burn_in.empty()) {
    BurnIn& front = st_.burn_in.front();
    for (std::size_t i = 0; i < st_.arms.size(); ++i)
      if (st_.arms[i].id == front.arm_id) chosen = i;
    d.score = score_locked(st_.arms[chosen], x);
    d.forced_burn_in = true;
    if (--front.remaining <= 0) st_.burn_in.pop_front();
  } else {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> ties;
    std::vector<ScoreBreakdown> scores(st_.arms.size());
    for (std::size_t i : eligible.indices) {
      scores[i] = score_locked(st_.arms[i], x);
      const double total = scores[i].total();
      if (total > best) {
        best = total;
        ties.assign(1, i);
      } else if (total == best) {
        ties.push_back(i);
      }
    }
    chosen = ties.front();
    if (ties.size() > 1) {
      std::uniform_int_distribution<std::size_t> pick(0, ties.size() - 1);
      chosen = ties[pick(st_.rng)];
    }
    d.score = scores[chosen];
    d.fallback = eligible.fallback;
  }

  Arm& arm = st_.arms[chosen];
  d.arm_id = arm.id;
  d.lambda_at_decision = st_.pacer.lambda();
  d.price = arm.price;
  d.ceiling = eligible.ceiling;
  d.eligible_count = eligible.indices.size();
  d.ceiling_override = arm.price > eligible.ceiling;
  if (d.ceiling_override) ++st_.overrides;

  st_.t += 1;
  arm.state.mark_played(st_.t);
  d.step_index = st_.t;
  const std::uint64_t id = st_.next_request++;
  d.request_id = RequestId{id};
  st_.pending.emplace(id, Pending{arm.id, x, st_.t});
  return d;
}

FeedbackOutcome Router::feedback(const FeedbackRecord& f) {
  std::lock_guard lock(mu_);
  auto it = st_.pending.find(static_cast<std::uint64_t>(f.request_id));
  if (it == st_.pending.end()) return FeedbackOutcome::kUnknownRequest;

  if (!std::isfinite(f.reward) ||
      (cfg_.reward_policy == RewardPolicy::kReject && (f.reward < 0.0 || f.reward > 1.0))) {
    throw std::invalid_argument("reward outside [0, 1]");
  }
  if (!(f.realized_cost >= 0.0) || !std::isfinite(f.realized_cost)) {
    throw std::invalid_argument("realized cost must be non-negative");
  }

  Arm* arm = find(it->second.arm_id);
  if (!arm) {
    st_.pending.erase(it);
    ++st_.discarded;
    return FeedbackOutcome::kDiscarded;
  }
  const Step dt = st_.t - arm->state.last_update();
  arm->state.apply_forgetting(cfg_.gamma, dt);
  arm->state.absorb(it->second.context, f.reward, st_.t, cfg_.reward_policy);
  st_.pacer.observe_cost(f.realized_cost);
  st_.pending.erase(it);
  return FeedbackOutcome::kApplied;
}

std::vector<ArmView> Router::arms() const {
  std::lock_guard lock(mu_);
  std::vector<ArmView> out;
  for (const auto& a : st_.arms) out.push_back({a.id, a.pricing, a.c_tilde, a.price, &a.state});
  return out;
}

std::optional<ArmView> Router::arm(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  const Arm* a = find(model_id);
  if (!a) return std::nullopt;
  return ArmView{a->id, a->pricing, a->c_tilde, a->price, &a->state};
}

std::vector<std::string> Router::arm_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& a : st_.arms) out.push_back(a.id);
  return out;
}

std::size_t Router::size() const {
  std::lock_guard lock(mu_);
  return st_.arms.size();
}

Step Router::step() const {
  std::lock_guard lock(mu_);
  return st_.t;
}

double Router::lambda() const {
  std::lock_guard lock(mu_);
  return st_.pacer.lambda();
}

double Router::cost_ema() const {
  std::lock_guard lock(mu_);
  return st_.pacer.cost_ema();
}

std::size_t Router::pending() const {
  std::lock_guard lock(mu_);
  return st_.pending.size();
}

std::vector<std::pair<std::string, int>> Router::burn_in_queue() const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::string, int>> out;
  for (const auto& b : st_.burn_in) out.emplace_back(b.arm_id, b.remaining);
  return out;
}

std::int64_t Router::discarded_feedback() const {
  std::lock_guard lock(mu_);
  return st_.discarded;
}

std::int64_t Router::ceiling_overrides() const {
  std::lock_guard lock(mu_);
  return st_.overrides;
}

std::int64_t Router::evicted() const {
  std::lock_guard lock(mu_);
  return st_.evicted;
}

nlohmann::json Router::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_locked();
}

nlohmann::json Router::snapshot_locked() const {
  nlohmann::json doc;
  doc["format_version"] = kFormatVersion;
  doc["config"] = cfg_;
  doc["pacer"] = st_.pacer.to_json();
  doc["t"] = st_.t;
  doc["next_request"] = st_.next_request;
  std::ostringstream rng;
  rng << st_.rng;
  doc["rng"] = rng.str();
  doc["counters"] = {{"discarded", st_.discarded}, {"overrides", st_.overrides}, {"evicted", st_.evicted}};

  auto& arms = doc["arms"] = nlohmann::json::array();
  for (const auto& a : st_.arms) {
    arms.push_back({{"id", a.id}, {"pricing", a.pricing}, {"state", a.state.to_json(true)}});
  }
  auto& burn = doc["burn_in"] = nlohmann::json::array();
  for (const auto& b : st_.burn_in) burn.push_back({{"arm", b.arm_id}, {"remaining", b.remaining}});
  auto& pending = doc["pending"] = nlohmann::json::array();
  for (const auto& [id, p] : st_.pending) {
    pending.push_back({{"request_id", id},
                       {"arm", p.arm_id},
                       {"issued", p.issued},
                       {"context", std::vector<double>(p.context.data(), p.context.data() + p.context.size())}});
  }
  return doc;
}

Router::State Router::parse_state(const nlohmann::json& doc, const RouterConfig& cfg) {
  State st{Pacer::from_json(doc.at("pacer")), {}, {}, {}, std::mt19937_64()};
  st.t = doc.at("t").get<Step>();
  st.next_request = doc.at("next_request").get<std::uint64_t>();
  if (st.t < 0) throw std::invalid_argument("negative step counter");
  {
    std::istringstream rng(doc.at("rng").get<std::string>());
    rng >> st.rng;
    if (rng.fail()) throw std::invalid_argument("cannot parse RNG state");
  }
  const auto& counters = doc.at("counters");
  st.discarded = counters.at("discarded").get<std::int64_t>();
  st.overrides = counters.at("overrides").get<std::int64_t>();
  st.evicted = counters.at("evicted").get<std::int64_t>();

  for (const auto& a : doc.at("arms")) {
    ArmState state = ArmState::from_json(a.at("state"));
    if (state.dim() != cfg.dim) throw std::invalid_argument("arm dimension does not match config");
    if (state.last_update() > st.t || state.last_played() > st.t) {
      throw std::invalid_argument("arm clock ahead of router step");
    }
    Arm arm{a.at("id").get<std::string>(), a.at("pricing").get<ModelPricing>(), 0.0, 0.0, std::move(state)};
    if (arm.id != arm.pricing.model_id) throw std::invalid_argument("arm id does not match pricing");
    for (const auto& seen : st.arms)
      if (seen.id == arm.id) throw std::invalid_argument("duplicate arm " + arm.id);
    st.arms.push_back(std::move(arm));
  }
  auto known = [&](const std::string& id) {
    return std::any_of(st.arms.begin(), st.arms.end(), [&](const Arm& a) { return a.id == id; });
  };
  for (const auto& b : doc.at("burn_in")) {
    BurnIn entry{b.at("arm").get<std::string>(), b.at("remaining").get<int>()};
    if (!known(entry.arm_id) || entry.remaining <= 0) throw std::invalid_argument("bad burn-in entry");
    st.burn_in.push_back(std::move(entry));
  }
  for (const auto& p : doc.at("pending")) {
    const auto ctx = p.at("context").get<std::vector<double>>();
    if (ctx.size() != static_cast<std::size_t>(cfg.dim)) {
      throw std::invalid_argument("pending context dimension mismatch");
    }
    const auto id = p.at("request_id").get<std::uint64_t>();
    if (id >= st.next_request) throw std::invalid_argument("pending request id from the future");
    st.pending.emplace(id, Pending{p.at("arm").get<std::string>(),
                                   Eigen::Map<const Vector>(ctx.data(), cfg.dim),
                                   p.at("issued").get<Step>()});
  }
  return st;
}

void Router::restore(const nlohmann::json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("router snapshot must be an object");
  if (doc.value("format_version", -1) != kFormatVersion) {
    throw std::invalid_argument("router snapshot format_version mismatch");
  }
  RouterConfig cfg;
  PacerConfig placeholder;
  placeholder.pacing_enabled = false;
  State st{Pacer(placeholder), {}, {}, {}, std::mt19937_64()};
  try {
    cfg = doc.at("config").get<RouterConfig>();
    cfg.validate();
    st = parse_state(doc, cfg);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed router snapshot: ") + e.what());
  }

  std::lock_guard lock(mu_);
  const RouterConfig old_cfg = cfg_;
  cfg_ = cfg;
  try {
    for (auto& a : st.arms) reprice(a);
  } catch (...) {
    cfg_ = old_cfg;
    throw;
  }
  st_ = std::move(st);
}

std::unique_ptr<Router> Router::from_snapshot(const nlohmann::json& doc) {
  RouterConfig cfg;
  PacerConfig pcfg;
  try {
    cfg = doc.at("config").get<RouterConfig>();
    pcfg = doc.at("pacer").at("config").get<PacerConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed router snapshot: ") + e.what());
  }
  auto router = std::make_unique<Router>(cfg, pcfg);
  router->restore(doc);
  return router;
}

}  // namespace bprouter
