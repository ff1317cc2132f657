#include "bprouter/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace bprouter {

using nlohmann::json;

namespace {

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

const char* order_name(PromptOrder o) {
  switch (o) {
    case PromptOrder::kReusePhaseOne: return "reuse_phase1";
    case PromptOrder::kFresh: return "fresh";
    case PromptOrder::kCycle: return "cycle";
  }
  return "reuse_phase1";
}

PromptOrder parse_order(const std::string& s) {
  if (s == "reuse_phase1") return PromptOrder::kReusePhaseOne;
  if (s == "fresh") return PromptOrder::kFresh;
  if (s == "cycle") return PromptOrder::kCycle;
  throw std::invalid_argument("unknown prompt order " + s);
}

double clip01(double r) { return std::clamp(r, 0.0, 1.0); }

}  // namespace

// --- RewardCostMatrix ----------------------------------------------------------

RewardCostMatrix::RewardCostMatrix(std::vector<std::string> arm_ids, std::vector<PromptRecord> prompts)
    : arm_ids_(std::move(arm_ids)), prompts_(std::move(prompts)) {
  validate();
}

int RewardCostMatrix::dim() const {
  return prompts_.empty() ? 0 : static_cast<int>(prompts_.front().context.size());
}

bool RewardCostMatrix::has_arm(const std::string& id) const {
  return std::find(arm_ids_.begin(), arm_ids_.end(), id) != arm_ids_.end();
}

double RewardCostMatrix::oracle_reward(std::size_t i, const std::vector<std::string>& arms) const {
  const auto& p = prompts_.at(i);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& a : arms.empty() ? arm_ids_ : arms) best = std::max(best, p.rewards.at(a));
  return best;
}

double RewardCostMatrix::mean_reward(const std::string& arm) const {
  if (prompts_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : prompts_) s += p.rewards.at(arm);
  return s / static_cast<double>(prompts_.size());
}

double RewardCostMatrix::mean_cost(const std::string& arm) const {
  if (prompts_.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : prompts_) s += p.costs.at(arm);
  return s / static_cast<double>(prompts_.size());
}

void RewardCostMatrix::validate() const {
  std::set<std::string> unique(arm_ids_.begin(), arm_ids_.end());
  if (unique.size() != arm_ids_.size()) throw std::invalid_argument("matrix lists an arm twice");
  const int d = dim();
  for (const auto& p : prompts_) {
    if (p.context.size() != d) throw std::invalid_argument("prompt " + p.prompt_id + ": context dimension differs");
    if (!p.context.allFinite()) throw std::invalid_argument("prompt " + p.prompt_id + ": non-finite context");
    for (const auto& a : arm_ids_) {
      auto r = p.rewards.find(a);
      auto c = p.costs.find(a);
      if (r == p.rewards.end() || c == p.costs.end()) {
        throw std::invalid_argument("prompt " + p.prompt_id + " misses arm " + a);
      }
      if (!(r->second >= 0.0 && r->second <= 1.0)) {
        throw std::invalid_argument("prompt " + p.prompt_id + ": reward outside [0, 1]");
      }
      if (!(c->second >= 0.0) || !std::isfinite(c->second)) {
        throw std::invalid_argument("prompt " + p.prompt_id + ": negative cost");
      }
    }
  }
}

RewardCostMatrix RewardCostMatrix::from_jsonl(std::istream& in) {
  std::vector<PromptRecord> prompts;
  std::vector<std::string> arms;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json doc = json::parse(line);
      PromptRecord p;
      p.prompt_id = doc.at("prompt_id").get<std::string>();
      p.context = from_vec(doc.at("context").get<std::vector<double>>());
      p.rewards = doc.at("rewards").get<std::map<std::string, double>>();
      p.costs = doc.at("costs").get<std::map<std::string, double>>();
      p.oracle_arm = doc.value("oracle_arm", std::string());
      if (prompts.empty()) {
        for (const auto& [id, r] : p.rewards) arms.push_back(id);
      }
      prompts.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw std::invalid_argument("matrix line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return RewardCostMatrix(std::move(arms), std::move(prompts));
}

RewardCostMatrix RewardCostMatrix::load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open matrix file " + path);
  return from_jsonl(in);
}

void RewardCostMatrix::to_jsonl(std::ostream& out) const {
  for (const auto& p : prompts_) {
    json doc{{"prompt_id", p.prompt_id},
             {"context", to_vec(p.context)},
             {"rewards", p.rewards},
             {"costs", p.costs}};
    if (!p.oracle_arm.empty()) doc["oracle_arm"] = p.oracle_arm;
    out << doc.dump() << '\n';
  }
}

void RewardCostMatrix::save_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write matrix file " + path);
  to_jsonl(out);
}

// --- Synthetic portfolios ------------------------------------------------------

std::vector<ModelPricing> SyntheticPortfolioSpec::registry() const {
  std::vector<ModelPricing> out;
  for (const auto& a : arms) out.push_back(a.pricing);
  return out;
}

void to_json(json& doc, const SyntheticPortfolioSpec& spec) {
  doc = json{{"d", spec.dim}, {"noise_scale", spec.noise_scale}, {"arms", json::array()}};
  for (const auto& a : spec.arms) {
    doc["arms"].push_back({{"id", a.id},
                           {"weights", to_vec(a.weights)},
                           {"pricing", a.pricing},
                           {"cost_per_request", a.cost_per_request},
                           {"cost_log_sigma", a.cost_log_sigma}});
  }
}

void from_json(const json& doc, SyntheticPortfolioSpec& spec) {
  spec = SyntheticPortfolioSpec{};
  spec.dim = doc.at("d").get<int>();
  spec.noise_scale = doc.value("noise_scale", spec.noise_scale);
  for (const auto& a : doc.at("arms")) {
    SyntheticArm arm;
    arm.id = a.at("id").get<std::string>();
    arm.weights = from_vec(a.at("weights").get<std::vector<double>>());
    arm.pricing = a.at("pricing").get<ModelPricing>();
    arm.cost_per_request = a.at("cost_per_request").get<double>();
    arm.cost_log_sigma = a.value("cost_log_sigma", 0.0);
    if (arm.weights.size() != spec.dim) throw std::invalid_argument("arm " + arm.id + ": weight dimension");
    spec.arms.push_back(std::move(arm));
  }
}

Vector sample_context(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector x(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim - 1; ++i) x(i) = normal(rng);
    norm = x.head(dim - 1).norm();
  } while (norm == 0.0);
  x.head(dim - 1) /= norm;
  x(dim - 1) = 1.0;
  return x;
}

RewardCostMatrix generate_synthetic(const SyntheticPortfolioSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synthetic matrix needs at least one prompt");
  if (spec.dim < 2) throw std::invalid_argument("synthetic dimension must be at least 2");
  if (spec.arms.empty()) throw std::invalid_argument("synthetic portfolio has no arms");
  if (!(spec.noise_scale >= 0.0)) throw std::invalid_argument("noise scale must be non-negative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<std::string> ids;
  for (const auto& a : spec.arms) {
    if (a.weights.size() != spec.dim) throw std::invalid_argument("arm " + a.id + ": weight dimension");
    if (!(a.cost_per_request >= 0.0)) throw std::invalid_argument("arm " + a.id + ": negative cost");
    ids.push_back(a.id);
  }

  std::vector<PromptRecord> prompts;
  prompts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PromptRecord p;
    p.prompt_id = "p" + std::to_string(i);
    p.context = sample_context(spec.dim, rng);
    double best = -1.0;
    for (const auto& a : spec.arms) {
      const double r = clip01(a.weights.dot(p.context) + spec.noise_scale * normal(rng));
      const double z = normal(rng);
      const double s = a.cost_log_sigma;
      p.rewards[a.id] = r;
      p.costs[a.id] = a.cost_per_request * std::exp(s * z - 0.5 * s * s);
      if (r > best) {
        best = r;
        p.oracle_arm = a.id;
      }
    }
    prompts.push_back(std::move(p));
  }
  return RewardCostMatrix(std::move(ids), std::move(prompts));
}

double expected_clipped_reward(const Vector& weights) {
  const int dim = static_cast<int>(weights.size());
  if (dim < 2) throw std::invalid_argument("weights need a context part and a bias");
  const double bias = weights(dim - 1);
  const double m = weights.head(dim - 1).norm();
  const int n = dim - 1;
  if (m == 0.0) return clip01(bias);
  if (n == 1) return 0.5 * (clip01(bias + m) + clip01(bias - m));
  // t = cos(phi) with density proportional to sin^(n-2)(phi) on [0, pi].
  constexpr int kPanels = 4000;
  const double h = M_PI / kPanels;
  double num = 0.0;
  double den = 0.0;
  for (int k = 0; k <= kPanels; ++k) {
    const double phi = k * h;
    const double w = (k == 0 || k == kPanels) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    const double dens = std::pow(std::sin(phi), n - 2);
    num += w * dens * clip01(bias + m * std::cos(phi));
    den += w * dens;
  }
  return num / den;
}

void calibrate_bias(SyntheticPortfolioSpec& spec, const std::vector<double>& target_means) {
  if (target_means.size() != spec.arms.size()) throw std::invalid_argument("one target mean per arm");
  for (std::size_t i = 0; i < spec.arms.size(); ++i) {
    const double target = target_means[i];
    if (!(target > 0.0 && target < 1.0)) throw std::invalid_argument("target mean must lie in (0, 1)");
    Vector w = spec.arms[i].weights;
    const int d = static_cast<int>(w.size());
    const double m = w.head(d - 1).norm();
    double lo = -m;
    double hi = 1.0 + m;
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      w(d - 1) = 0.5 * (lo + hi);
      (expected_clipped_reward(w) < target ? lo : hi) = w(d - 1);
    }
    w(d - 1) = 0.5 * (lo + hi);
    spec.arms[i].weights = w;
  }
}

namespace {

/// Orthonormal directions in the context subspace (bias coordinate zero).
std::vector<Vector> directions(int dim, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Vector> out;
  while (static_cast<int>(out.size()) < count) {
    Vector v = Vector::Zero(dim);
    for (int i = 0; i < dim - 1; ++i) v(i) = normal(rng);
    for (const auto& u : out) v -= u.dot(v) * u;
    const double n = v.norm();
    if (n > 1e-8) out.push_back(v / n);
  }
  return out;
}

ModelPricing rates(const std::string& id, double in, double out, double hint) {
  ModelPricing p;
  p.model_id = id;
  p.input_rate = in;
  p.output_rate = out;
  p.per_request_cost_hint = hint;
  return p;
}

}  // namespace

SyntheticPortfolioSpec tiered_portfolio(int dim, std::uint64_t seed) {
  if (dim < 6) throw std::invalid_argument("tiered portfolio needs d >= 6");
  const auto e = directions(dim, 4, seed);
  SyntheticPortfolioSpec spec;
  spec.dim = dim;
  spec.noise_scale = 0.05;

  SyntheticArm budget{"llama-3.1-8b", 0.15 * e[2] + 0.10 * e[3], rates("llama-3.1-8b", 0.0001, 0.0001, 2.9e-5), 2.9e-5, 0.2};
  SyntheticArm mid{"mistral-large", -0.70 * e[0] + 0.10 * e[3], rates("mistral-large", 0.0005, 0.0015, 5.3e-4), 5.3e-4, 0.2};
  SyntheticArm frontier{"gemini-2.5-pro", 1.00 * e[0] + 0.20 * e[1], rates("gemini-2.5-pro", 0.00125, 0.01, 1.5e-2), 1.5e-2, 0.2};
  spec.arms = {budget, mid, frontier};
  calibrate_bias(spec, {0.793, 0.923, 0.932});
  return spec;
}

SyntheticArm onboarding_arm(const std::string& id, bool good, double cost_per_request, int dim, std::uint64_t seed) {
  const auto e = directions(dim, 5, seed);
  SyntheticArm arm;
  arm.id = id;
  arm.pricing = rates(id, 0.0002, 0.0006, cost_per_request);
  arm.cost_per_request = cost_per_request;
  arm.cost_log_sigma = 0.2;
  arm.weights = good ? Vector(0.50 * e[4]) : Vector(0.05 * e[4]);
  SyntheticPortfolioSpec tmp;
  tmp.dim = dim;
  tmp.arms = {arm};
  calibrate_bias(tmp, {good ? 0.90 : 0.60});
  return tmp.arms.front();
}

// --- Scenarios -------------------------------------------------------------------

void Scenario::validate() const {
  if (phases.empty()) throw std::invalid_argument("scenario has no phases");
  for (const auto& p : phases)
    if (p.length < 1) throw std::invalid_argument("phase length must be at least 1");
  if (n_seeds < 1) throw std::invalid_argument("n_seeds must be at least 1");
  if (budget && !(*budget > 0.0)) throw std::invalid_argument("budget must be positive");
}

int Scenario::total_length() const {
  int n = 0;
  for (const auto& p : phases) n += p.length;
  return n;
}

namespace {

json perturbation_to_json(const Perturbation& p) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PriceSet>) {
          return {{"type", "price_set"}, {"pricing", v.pricing}};
        } else if constexpr (std::is_same_v<T, RewardMeanShift>) {
          return {{"type", "reward_mean_shift"}, {"arm", v.arm}, {"target_mean", v.target_mean}};
        } else if constexpr (std::is_same_v<T, AddArm>) {
          return {{"type", "add_arm"}, {"pricing", v.pricing}, {"init", v.init},
                  {"n_eff", v.n_eff}, {"bias_reward", v.bias_reward}};
        } else {
          return {{"type", "remove_arm"}, {"arm", v.arm}};
        }
      },
      p);
}

Perturbation perturbation_from_json(const json& doc) {
  const auto type = doc.at("type").get<std::string>();
  if (type == "price_set") return PriceSet{doc.at("pricing").get<ModelPricing>()};
  if (type == "reward_mean_shift") {
    return RewardMeanShift{doc.at("arm").get<std::string>(), doc.at("target_mean").get<double>()};
  }
  if (type == "add_arm") {
    AddArm a;
    a.pricing = doc.at("pricing").get<ModelPricing>();
    a.init = doc.value("init", a.init);
    a.n_eff = doc.value("n_eff", a.n_eff);
    a.bias_reward = doc.value("bias_reward", a.bias_reward);
    return a;
  }
  if (type == "remove_arm") return RemoveArm{doc.at("arm").get<std::string>()};
  throw std::invalid_argument("unknown perturbation type " + type);
}

}  // namespace

void to_json(json& doc, const Scenario& sc) {
  doc = json{{"name", sc.name},
             {"budget", sc.budget ? json(*sc.budget) : json(nullptr)},
             {"n_seeds", sc.n_seeds},
             {"base_seed", sc.base_seed},
             {"order", order_name(sc.order)},
             {"shuffle", sc.shuffle},
             {"initial_arms", sc.initial_arms},
             {"phases", json::array()}};
  for (const auto& p : sc.phases) {
    json ph{{"length", p.length}, {"perturbations", json::array()}};
    for (const auto& q : p.perturbations) ph["perturbations"].push_back(perturbation_to_json(q));
    doc["phases"].push_back(std::move(ph));
  }
}

void from_json(const json& doc, Scenario& sc) {
  sc = Scenario{};
  sc.name = doc.value("name", sc.name);
  if (doc.contains("budget") && !doc.at("budget").is_null()) sc.budget = doc.at("budget").get<double>();
  sc.n_seeds = doc.value("n_seeds", sc.n_seeds);
  sc.base_seed = doc.value("base_seed", sc.base_seed);
  sc.order = parse_order(doc.value("order", std::string("reuse_phase1")));
  sc.shuffle = doc.value("shuffle", sc.shuffle);
  sc.initial_arms = doc.value("initial_arms", std::vector<std::string>{});
  for (const auto& ph : doc.at("phases")) {
    Phase p;
    p.length = ph.at("length").get<int>();
    for (const auto& q : ph.value("perturbations", json::array())) p.perturbations.push_back(perturbation_from_json(q));
    sc.phases.push_back(std::move(p));
  }
  sc.validate();
}

// --- Priors -------------------------------------------------------------------------

std::map<std::string, WarmupPrior> build_priors(const RewardCostMatrix& offline, const PriorRecipe& recipe) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < offline.size(); ++i) {
    if (recipe.id_prefix.empty() || offline.prompts()[i].prompt_id.rfind(recipe.id_prefix, 0) == 0) rows.push_back(i);
  }
  if (recipe.subset == "random") {
    std::mt19937_64 rng(recipe.seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(std::min(rows.size(), recipe.count));
  } else if (recipe.subset == "head") {
    rows.resize(std::min(rows.size(), recipe.count));
  } else if (recipe.subset != "all") {
    throw std::invalid_argument("unknown prior subset " + recipe.subset);
  }
  if (rows.empty()) throw std::invalid_argument("prior recipe selects no prompts");

  std::map<std::string, WarmupPrior> out;
  for (const auto& arm : offline.arm_ids()) {
    std::string source = arm;
    if (auto it = recipe.reward_swap.find(arm); it != recipe.reward_swap.end()) source = it->second;
    if (!offline.has_arm(source)) throw std::invalid_argument("prior swap names unknown arm " + source);
    PriorBuilder builder(offline.dim());
    for (std::size_t i : rows) builder.add(offline.prompts()[i].context, offline.prompts()[i].rewards.at(source));
    std::string provenance = "offline n=" + std::to_string(rows.size());
    if (source != arm) provenance += " rewards of " + source;
    out.emplace(arm, builder.build(provenance));
  }
  return out;
}

// --- Running ---------------------------------------------------------------------------

const ModelPricing& Source::pricing(const std::string& id) const {
  for (const auto& p : registry)
    if (p.model_id == id) return p;
  throw std::invalid_argument("arm " + id + " has no registry entry");
}

int SeedTrace::arm_index(const std::string& id) const {
  for (std::size_t i = 0; i < arms.size(); ++i)
    if (arms[i] == id) return static_cast<int>(i);
  return -1;
}

namespace {

struct Environment {
  /// Additive reward shift per arm for the phase (applied before clipping).
  std::map<std::string, double> shift;
  /// Multiplicative realized-cost scale per arm for the phase.
  std::map<std::string, double> cost_scale;

  double reward(const PromptRecord& p, const std::string& arm) const {
    auto it = shift.find(arm);
    const double r = p.rewards.at(arm);
    return it == shift.end() ? r : clip01(r + it->second);
  }
  double cost(const PromptRecord& p, const std::string& arm) const {
    auto it = cost_scale.find(arm);
    const double c = p.costs.at(arm);
    return it == cost_scale.end() ? c : c * it->second;
  }
};

std::vector<std::vector<std::size_t>> phase_prompts(const Scenario& sc, const std::vector<std::size_t>& perm) {
  const std::size_t n = perm.size();
  std::vector<std::vector<std::size_t>> out;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < sc.phases.size(); ++k) {
    const auto len = static_cast<std::size_t>(sc.phases[k].length);
    std::vector<std::size_t> idx;
    idx.reserve(len);
    if (sc.order == PromptOrder::kReusePhaseOne && k >= 2) {
      const auto& first = out.front();
      for (std::size_t i = 0; i < len; ++i) idx.push_back(first[i % first.size()]);
    } else if (sc.order == PromptOrder::kCycle) {
      for (std::size_t i = 0; i < len; ++i) idx.push_back(perm[(cursor + i) % n]);
      cursor += len;
    } else {
      if (cursor + len > n) {
        throw std::invalid_argument("scenario needs " + std::to_string(cursor + len) +
                                    " fresh prompts but the source has " + std::to_string(n));
      }
      for (std::size_t i = 0; i < len; ++i) idx.push_back(perm[cursor + i]);
      cursor += len;
    }
    out.push_back(std::move(idx));
  }
  return out;
}

ArmInit initial_init(const RunConfig& cfg, const std::string& arm) {
  switch (cfg.init) {
    case InitMode::kCold: return ColdStart{};
    case InitMode::kHeuristic: return HeuristicStart{cfg.n_eff, cfg.heuristic_bias};
    case InitMode::kPrior: {
      auto it = cfg.priors.find(arm);
      if (it == cfg.priors.end()) throw std::invalid_argument("no warmup prior for arm " + arm);
      return PriorStart{it->second, cfg.n_eff};
    }
  }
  return ColdStart{};
}

ArmInit added_init(const RunConfig& cfg, const AddArm& add) {
  if (add.init == "cold") return ColdStart{};
  if (add.init == "heuristic") return HeuristicStart{add.n_eff, add.bias_reward};
  if (add.init == "prior") {
    auto it = cfg.priors.find(add.pricing.model_id);
    if (it == cfg.priors.end()) throw std::invalid_argument("no warmup prior for arm " + add.pricing.model_id);
    return PriorStart{it->second, add.n_eff};
  }
  throw std::invalid_argument("unknown arm init " + add.init);
}

}  // namespace

SeedTrace run_seed(const Scenario& sc, const Source& source, const RunConfig& cfg, std::uint64_t seed) {
  sc.validate();
  const auto& matrix = source.matrix;
  if (matrix.size() == 0) throw std::invalid_argument("source matrix is empty");
  if (matrix.dim() != cfg.router.dim) throw std::invalid_argument("source dimension does not match router config");

  // Arms that appear anywhere in the scenario.
  std::set<std::string> added;
  for (const auto& ph : sc.phases)
    for (const auto& q : ph.perturbations)
      if (auto* a = std::get_if<AddArm>(&q)) added.insert(a->pricing.model_id);
  std::vector<std::string> initial = sc.initial_arms;
  if (initial.empty()) {
    for (const auto& id : matrix.arm_ids())
      if (!added.count(id)) initial.push_back(id);
  }
  auto require = [&](const std::string& id) {
    if (!matrix.has_arm(id)) throw std::invalid_argument("scenario references arm " + id + " missing from the source");
  };
  for (const auto& id : initial) require(id);
  for (const auto& id : added) require(id);
  for (const auto& ph : sc.phases) {
    for (const auto& q : ph.perturbations) {
      if (auto* p = std::get_if<PriceSet>(&q)) require(p->pricing.model_id);
      if (auto* p = std::get_if<RewardMeanShift>(&q)) require(p->arm);
      if (auto* p = std::get_if<RemoveArm>(&q)) require(p->arm);
    }
  }

  SeedTrace trace;
  trace.seed = seed;
  trace.budget = sc.budget;
  trace.arms = initial;
  for (const auto& id : added) trace.arms.push_back(id);

  trace.permutation.resize(matrix.size());
  std::iota(trace.permutation.begin(), trace.permutation.end(), 0);
  if (sc.shuffle) {
    std::mt19937_64 order_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(trace.permutation.begin(), trace.permutation.end(), order_rng);
  }
  const auto prompts = phase_prompts(sc, trace.permutation);

  RouterConfig rcfg = cfg.router;
  rcfg.seed = seed;
  PacerConfig pcfg = cfg.pacer;
  if (sc.budget) {
    pcfg.budget_per_request = *sc.budget;
  } else {
    pcfg.pacing_enabled = false;
  }
  Router router(rcfg, pcfg);
  std::map<std::string, ModelPricing> base_pricing;
  for (const auto& id : initial) {
    base_pricing[id] = source.pricing(id);
    router.add_arm(base_pricing[id], initial_init(cfg, id), 0);
  }

  struct Pending {
    RequestId id;
    double reward;
    double cost;
  };
  std::deque<Pending> queue;
  auto deliver = [&](std::size_t keep) {
    while (queue.size() > keep) {
      const auto& f = queue.front();
      router.feedback({f.id, f.reward, f.cost});
      queue.pop_front();
    }
  };

  std::set<std::string> repriced;
  for (std::size_t k = 0; k < sc.phases.size(); ++k) {
    const Phase& phase = sc.phases[k];
    // Revert phase-scoped prices, then apply this phase's events.
    for (const auto& id : repriced)
      if (base_pricing.count(id) && router.arm(id)) router.set_pricing(base_pricing[id]);
    repriced.clear();

    Environment env;
    PhaseInfo info;
    info.length = phase.length;
    for (const auto& q : phase.perturbations) {
      if (auto* add = std::get_if<AddArm>(&q)) {
        base_pricing[add->pricing.model_id] = add->pricing;
        router.add_arm(add->pricing, added_init(cfg, *add));
      } else if (auto* rm = std::get_if<RemoveArm>(&q)) {
        router.delete_arm(rm->arm);
      }
    }
    for (const auto& q : phase.perturbations) {
      if (auto* ps = std::get_if<PriceSet>(&q)) {
        const auto& id = ps->pricing.model_id;
        const ModelPricing& old = base_pricing.count(id) ? base_pricing[id] : source.pricing(id);
        const double ratio = price_per_request(ps->pricing, rcfg.expected_tokens) /
                             price_per_request(old, rcfg.expected_tokens);
        env.cost_scale[id] = ratio;
        if (router.arm(id)) router.set_pricing(ps->pricing);
        repriced.insert(id);
      } else if (auto* shift = std::get_if<RewardMeanShift>(&q)) {
        if (!(shift->target_mean >= 0.0 && shift->target_mean <= 1.0)) {
          throw std::invalid_argument("mean-shift target must lie in [0, 1]");
        }
        double mean = 0.0;
        for (std::size_t i : prompts[k]) mean += matrix.prompts()[i].rewards.at(shift->arm);
        mean /= static_cast<double>(prompts[k].size());
        env.shift[shift->arm] = shift->target_mean - mean;
        double realized = 0.0;
        for (std::size_t i : prompts[k]) realized += env.reward(matrix.prompts()[i], shift->arm);
        info.shifted_means[shift->arm] = realized / static_cast<double>(prompts[k].size());
      }
    }
    trace.phases.push_back(info);

    const auto active = router.arm_ids();
    for (std::size_t i : prompts[k]) {
      const PromptRecord& p = matrix.prompts()[i];
      const RouteDecision d = router.route(p.context);
      const auto view = router.arm(d.arm_id);

      StepLog log;
      log.step = d.step_index;
      log.phase = static_cast<int>(k);
      log.prompt = i;
      log.arm = trace.arm_index(d.arm_id);
      log.reward = env.reward(p, d.arm_id);
      log.cost = env.cost(p, d.arm_id);
      log.oracle_reward = -1.0;
      for (const auto& a : active) log.oracle_reward = std::max(log.oracle_reward, env.reward(p, a));
      log.lambda = d.lambda_at_decision;
      log.price = d.price;
      log.ceiling = d.ceiling;
      log.c_tilde = view ? view->c_tilde : 0.0;
      log.eligible = static_cast<int>(d.eligible_count);
      log.forced = d.forced_burn_in;
      log.fallback = d.fallback;
      log.ceiling_violation = d.price > d.ceiling && !d.forced_burn_in && !d.fallback;

      queue.push_back({d.request_id, log.reward, log.cost});
      deliver(static_cast<std::size_t>(std::max(cfg.feedback_delay, 0)));
      log.cost_ema = router.cost_ema();
      trace.steps.push_back(log);
    }
  }
  deliver(0);
  if (cfg.keep_snapshot) trace.final_snapshot = router.snapshot();
  return trace;
}

std::vector<SeedTrace> run_scenario(const Scenario& sc, const Source& source, const RunConfig& cfg) {
  sc.validate();
  std::vector<SeedTrace> out;
  out.reserve(static_cast<std::size_t>(sc.n_seeds));
  for (int s = 0; s < sc.n_seeds; ++s) out.push_back(run_seed(sc, source, cfg, sc.base_seed + static_cast<std::uint64_t>(s)));
  return out;
}

std::vector<double> log_spaced(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi >= lo) || count < 1) throw std::invalid_argument("log_spaced needs 0 < lo <= hi and count >= 1");
  if (count == 1) return {lo};
  std::vector<double> out;
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (int i = 0; i < count; ++i) out.push_back(std::exp(a + (b - a) * i / (count - 1)));
  out.back() = hi;
  return out;
}

std::vector<BudgetPoint> run_budget_sweep(const std::vector<double>& budgets, int phase_length, const Source& source,
                                          const RunConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  if (budgets.empty()) throw std::invalid_argument("budget sweep needs at least one budget");
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw std::invalid_argument("budgets must be sorted ascending");
  std::vector<BudgetPoint> out;
  for (double b : budgets) {
    Scenario sc;
    sc.name = "budget_sweep";
    sc.phases = {Phase{phase_length, {}}};
    sc.order = PromptOrder::kCycle;
    if (std::isfinite(b)) sc.budget = b;
    for (auto seed : seeds) {
      const SeedTrace t = run_seed(sc, source, cfg, seed);
      BudgetPoint pt{b, seed, 0.0, 0.0};
      for (const auto& s : t.steps) {
        pt.mean_cost += s.cost;
        pt.mean_reward += s.reward;
      }
      pt.mean_cost /= static_cast<double>(t.steps.size());
      pt.mean_reward /= static_cast<double>(t.steps.size());
      out.push_back(pt);
    }
  }
  return out;
}

std::vector<RecoveryPoint> run_recovery_sweep(const std::vector<double>& targets, const std::string& arm,
                                              int phase_length, int phase3_length, PromptOrder order,
                                              std::optional<double> budget, const Source& source,
                                              const RunConfig& cfg, int n_seeds, std::uint64_t base_seed) {
  std::vector<RecoveryPoint> out;
  for (double target : targets) {
    Scenario sc;
    sc.name = "recovery_sweep";
    sc.budget = budget;
    sc.order = order;
    sc.n_seeds = n_seeds;
    sc.base_seed = base_seed;
    sc.phases = {Phase{phase_length, {}}, Phase{phase_length, {RewardMeanShift{arm, target}}}, Phase{phase3_length, {}}};
    RecoveryPoint pt;
    pt.target = target;
    double p1_total = 0.0;
    for (const auto& t : run_scenario(sc, source, cfg)) {
      double r1 = 0.0, r3 = 0.0;
      int n1 = 0, n3 = 0;
      for (const auto& s : t.steps) {
        if (s.phase == 0) r1 += s.reward, ++n1;
        if (s.phase == 2) r3 += s.reward, ++n3;
      }
      r1 /= n1;
      r3 /= n3;
      p1_total += r1;
      pt.ratios.push_back(r3 / r1);
    }
    const double p1 = p1_total / n_seeds;
    pt.severity = (p1 - target) / p1;
    out.push_back(std::move(pt));
  }
  return out;
}

// --- Trace I/O -------------------------------------------------------------------------

json trace_to_json_lines(const SeedTrace& trace) {
  json lines = json::array();
  json header{{"type", "header"},
              {"seed", trace.seed},
              {"budget", trace.budget ? json(*trace.budget) : json(nullptr)},
              {"arms", trace.arms},
              {"permutation", trace.permutation},
              {"phases", json::array()}};
  for (const auto& ph : trace.phases) header["phases"].push_back({{"length", ph.length}, {"shifted_means", ph.shifted_means}});
  lines.push_back(std::move(header));
  for (const auto& s : trace.steps) {
    lines.push_back({{"type", "step"},
                     {"step", s.step},
                     {"phase", s.phase},
                     {"prompt", s.prompt},
                     {"arm", trace.arms.at(static_cast<std::size_t>(s.arm))},
                     {"reward", s.reward},
                     {"cost", s.cost},
                     {"oracle_reward", s.oracle_reward},
                     {"lambda", s.lambda},
                     {"cost_ema", s.cost_ema},
                     {"price", s.price},
                     {"ceiling", std::isfinite(s.ceiling) ? json(s.ceiling) : json(nullptr)},
                     {"c_tilde", s.c_tilde},
                     {"eligible", s.eligible},
                     {"forced", s.forced},
                     {"fallback", s.fallback},
                     {"ceiling_violation", s.ceiling_violation}});
  }
  return lines;
}

void write_trace_jsonl(const SeedTrace& trace, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write trace file " + path);
    for (const auto& line : trace_to_json_lines(trace)) out << line.dump() << '\n';
    if (!out) throw std::runtime_error("failed writing trace file " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move trace file into place: " + path);
}

SeedTrace read_trace_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  SeedTrace t;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json doc = json::parse(line);
      if (doc.at("type") == "header") {
        t.seed = doc.at("seed").get<std::uint64_t>();
        if (!doc.at("budget").is_null()) t.budget = doc.at("budget").get<double>();
        t.arms = doc.at("arms").get<std::vector<std::string>>();
        t.permutation = doc.at("permutation").get<std::vector<std::size_t>>();
        for (const auto& ph : doc.at("phases")) {
          t.phases.push_back({ph.at("length").get<int>(), ph.at("shifted_means").get<std::map<std::string, double>>()});
        }
        header = true;
        continue;
      }
      if (!header) throw std::invalid_argument("step before header");
      StepLog s;
      s.step = doc.at("step").get<Step>();
      s.phase = doc.at("phase").get<int>();
      s.prompt = doc.at("prompt").get<std::size_t>();
      s.arm = t.arm_index(doc.at("arm").get<std::string>());
      if (s.arm < 0) throw std::invalid_argument("step names an unknown arm");
      s.reward = doc.at("reward").get<double>();
      s.cost = doc.at("cost").get<double>();
      s.oracle_reward = doc.at("oracle_reward").get<double>();
      s.lambda = doc.at("lambda").get<double>();
      s.cost_ema = doc.at("cost_ema").get<double>();
      s.price = doc.at("price").get<double>();
      s.ceiling = doc.at("ceiling").is_null() ? std::numeric_limits<double>::infinity() : doc.at("ceiling").get<double>();
      s.c_tilde = doc.at("c_tilde").get<double>();
      s.eligible = doc.at("eligible").get<int>();
      s.forced = doc.at("forced").get<bool>();
      s.fallback = doc.at("fallback").get<bool>();
      s.ceiling_violation = doc.at("ceiling_violation").get<bool>();
      t.steps.push_back(s);
    } catch (const json::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw std::invalid_argument(path + ": trace has no header");
  return t;
}

}  // namespace bprouter
