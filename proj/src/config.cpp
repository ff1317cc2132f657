#include "bprouter/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include "bprouter/tuner.hpp"

namespace bprouter {

using nlohmann::json;

ExperimentConfig::ExperimentConfig() : doc_(defaults()) {}

const std::map<std::string, std::string>& ExperimentConfig::config_keys() {
  static const std::map<std::string, std::string> keys{
      {"alpha", "/router/alpha"},
      {"gamma", "/router/gamma"},
      {"v_max", "/router/v_max"},
      {"d", "/router/d"},
      {"burn_in_pulls", "/router/burn_in_pulls"},
      {"seed", "/router/seed"},
      {"lambda0", "/router/lambda0"},
      {"reward_policy", "/router/reward_policy"},
      {"cost_floor", "/router/cost_floor"},
      {"cost_ceil", "/router/cost_ceil"},
      {"expected_tokens", "/router/expected_tokens"},
      {"pending_ttl", "/router/pending_ttl"},
      {"budget", "/pacer/budget_per_request"},
      {"eta", "/pacer/eta"},
      {"alpha_ema", "/pacer/alpha_ema"},
      {"lambda_cap", "/pacer/lambda_cap"},
      {"lambda_c", "/pacer/lambda_c"},
      {"pacing_enabled", "/pacer/pacing_enabled"},
      {"init", "/init"},
      {"n_eff", "/n_eff"},
      {"t_adapt", "/t_adapt"},
      {"heuristic_bias", "/heuristic_bias"},
      {"feedback_delay", "/feedback_delay"},
      {"matrix", "/source/matrix"},
      {"registry", "/source/registry"},
      {"prompts", "/source/synthetic/n"},
      {"source_seed", "/source/synthetic/seed"},
      {"prior_matrix", "/priors/matrix"},
      {"prior_count", "/priors/count"},
      {"prior_subset", "/priors/subset"},
  };
  return keys;
}

json ExperimentConfig::defaults() {
  json doc;
  doc["router"] = RouterConfig{};
  PacerConfig pacer;
  doc["pacer"] = pacer;
  doc["init"] = "prior";
  doc["n_eff"] = nullptr;
  doc["t_adapt"] = 500.0;
  doc["heuristic_bias"] = 0.5;
  doc["feedback_delay"] = 0;
  doc["source"] = {{"matrix", nullptr},
                   {"registry", nullptr},
                   {"synthetic", {{"portfolio", "tiered"}, {"n", 2000}, {"seed", 1}, {"extra_arms", json::array()}}}};
  doc["priors"] = {{"matrix", nullptr},
                   {"offline_n", 2000},
                   {"offline_seed", 99},
                   {"subset", "all"},
                   {"count", 0},
                   {"seed", 0},
                   {"swap", json::object()}};
  return doc;
}


void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file " + path + ": " + e.what());
  }
  merge_file(doc);
}

void ExperimentConfig::set(const std::string& key, const json& value) {
  const auto& keys = config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw std::invalid_argument("unknown config key " + key);
  doc_[json::json_pointer(it->second)] = value;
}

namespace {

// Recursive object merge. Unlike RFC 7386, null is stored, not a deletion.
void deep_merge(json& into, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && into.contains(it.key()) && into[it.key()].is_object()) {
      deep_merge(into[it.key()], it.value());
    } else {
      into[it.key()] = it.value();
    }
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

}  // namespace

void ExperimentConfig::merge_file(const json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("config file must hold a JSON object");
  deep_merge(doc_, doc);
}

void ExperimentConfig::apply_env(const std::function<const char*(const char*)>& getenv) {
  for (const auto& [key, path] : config_keys()) {
    std::string name = "BPROUTER_" + key;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    if (const char* v = getenv(name.c_str())) set(key, parse_value(v));
  }
}

void ExperimentConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key=value: " + a);
    set(a.substr(0, eq), parse_value(a.substr(eq + 1)));
  }
}

RouterConfig ExperimentConfig::router() const {
  RouterConfig cfg = doc_.at("router").get<RouterConfig>();
  cfg.validate();
  return cfg;
}

PacerConfig ExperimentConfig::pacer() const { return doc_.at("pacer").get<PacerConfig>(); }

double ExperimentConfig::n_eff() const {
  const auto& v = doc_.at("n_eff");
  if (!v.is_null()) return v.get<double>();
  return neff_from_horizon(router().gamma, doc_.at("t_adapt").get<double>());
}

InitMode ExperimentConfig::init() const {
  const auto s = doc_.at("init").get<std::string>();
  if (s == "cold") return InitMode::kCold;
  if (s == "prior") return InitMode::kPrior;
  if (s == "heuristic") return InitMode::kHeuristic;
  throw std::invalid_argument("unknown init mode " + s);
}

Source ExperimentConfig::source() const {
  const auto& src = doc_.at("source");
  if (!src.at("matrix").is_null()) {
    const auto path = src.at("matrix").get<std::string>();
    RewardCostMatrix m = RewardCostMatrix::load_jsonl(path);
    if (!src.contains("registry") || src.at("registry").is_null()) {
      throw std::invalid_argument("a matrix source needs source.registry");
    }
    return {std::move(m), load_registry(src.at("registry").get<std::string>())};
  }
  const auto& syn = src.at("synthetic");
  const auto d = router().dim;
  SyntheticPortfolioSpec spec;
  const auto& portfolio = syn.at("portfolio");
  if (portfolio.is_string() && portfolio.get<std::string>() == "tiered") {
    spec = tiered_portfolio(d);
  } else if (portfolio.is_object()) {
    spec = portfolio.get<SyntheticPortfolioSpec>();
  } else {
    throw std::invalid_argument("source.synthetic.portfolio must be \"tiered\" or a portfolio object");
  }
  for (const auto& extra : syn.value("extra_arms", json::array())) {
    spec.arms.push_back(onboarding_arm(extra.at("id").get<std::string>(), extra.at("good").get<bool>(),
                                       extra.at("cost").get<double>(), d));
  }
  const auto n = syn.at("n").get<std::size_t>();
  return {generate_synthetic(spec, n, syn.at("seed").get<std::uint64_t>()), spec.registry()};
}

RunConfig ExperimentConfig::run_config(const Source& source) const {
  RunConfig cfg;
  cfg.router = router();
  cfg.pacer = pacer();
  cfg.init = init();
  cfg.n_eff = n_eff();
  cfg.heuristic_bias = doc_.at("heuristic_bias").get<double>();
  cfg.feedback_delay = doc_.at("feedback_delay").get<int>();
  if (cfg.init == InitMode::kPrior) {
    const auto& pri = doc_.at("priors");
    RewardCostMatrix offline;
    if (!pri.at("matrix").is_null()) {
      offline = RewardCostMatrix::load_jsonl(pri.at("matrix").get<std::string>());
    } else {
      if (!doc_.at("source").at("matrix").is_null()) {
        throw std::invalid_argument("prior init with a matrix source needs priors.matrix");
      }
      // Offline data: same portfolio, independent draw.
      ExperimentConfig copy = *this;
      copy.doc_["source"]["synthetic"]["n"] = pri.at("offline_n");
      copy.doc_["source"]["synthetic"]["seed"] = pri.at("offline_seed");
      offline = copy.source().matrix;
    }
    PriorRecipe recipe;
    recipe.subset = pri.at("subset").get<std::string>();
    recipe.count = pri.at("count").get<std::size_t>();
    recipe.seed = pri.at("seed").get<std::uint64_t>();
    recipe.reward_swap = pri.at("swap").get<std::map<std::string, std::string>>();
    cfg.priors = build_priors(offline, recipe);
    for (const auto& id : source.matrix.arm_ids()) {
      if (!cfg.priors.count(id)) throw std::invalid_argument("offline data has no rewards for arm " + id);
    }
  }
  return cfg;
}

}  // namespace bprouter
