#include "bprouter/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace bprouter {

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double neff_from_horizon(double gamma, double t_adapt) {
  check_gamma(gamma);
  if (!(t_adapt > 0.0)) throw std::invalid_argument("T_adapt must be positive");
  if (gamma == 1.0) return t_adapt;
  // (gamma^-T - 1) / (1 - gamma), written to stay accurate as gamma -> 1.
  return std::expm1(-t_adapt * std::log1p(gamma - 1.0)) / (1.0 - gamma);
}

double horizon_from_neff(double gamma, double n_eff) {
  check_gamma(gamma);
  if (!(n_eff >= 0.0)) throw std::invalid_argument("n_eff must be non-negative");
  if (gamma == 1.0) return n_eff;
  return -std::log1p(n_eff * (1.0 - gamma)) / std::log1p(gamma - 1.0);
}

std::vector<CostRewardPoint> pareto_frontier(const std::vector<CostRewardPoint>& points) {
  if (points.empty()) throw std::invalid_argument("frontier needs at least one point");
  std::vector<CostRewardPoint> sorted = points;
  // Cost ascending, reward descending: a point survives iff its reward beats
  // every cheaper-or-equal point seen so far.
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.cost != b.cost ? a.cost < b.cost : a.reward > b.reward;
  });
  std::vector<CostRewardPoint> out;
  for (const auto& p : sorted) {
    if (out.empty() || p.reward > out.back().reward) out.push_back(p);
  }
  return out;
}

double frontier_auc_normalized(const std::vector<CostRewardPoint>& frontier) {
  if (frontier.empty()) throw std::invalid_argument("AUC of an empty frontier");
  std::vector<CostRewardPoint> pts = frontier;
  for (auto& p : pts) p.cost = std::clamp(p.cost, 0.0, 1.0);
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.cost < b.cost; });
  double area = pts.front().cost * pts.front().reward;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += 0.5 * (pts[i].reward + pts[i - 1].reward) * (pts[i].cost - pts[i - 1].cost);
  }
  area += (1.0 - pts.back().cost) * pts.back().reward;
  return area;
}

double frontier_auc(const std::vector<CostRewardPoint>& frontier, double cost_lo, double cost_hi) {
  if (!(cost_lo > 0.0 && cost_hi > cost_lo)) throw std::invalid_argument("AUC axis needs 0 < lo < hi");
  const double a = std::log(cost_lo);
  const double span = std::log(cost_hi) - a;
  std::vector<CostRewardPoint> mapped;
  for (const auto& p : frontier) {
    const double u = p.cost > 0.0 ? (std::log(p.cost) - a) / span : 0.0;
    mapped.push_back({u, p.reward});
  }
  return frontier_auc_normalized(mapped);
}

std::vector<std::size_t> pareto_maximize(const std::vector<std::pair<double, double>>& points) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
      if (j == i) continue;
      const auto& a = points[j];
      const auto& b = points[i];
      const bool ge = a.first >= b.first && a.second >= b.second;
      const bool gt = a.first > b.first || a.second > b.second;
      // Exact duplicates keep the earliest index only.
      dominated = (ge && gt) || (a == b && j < i);
    }
    if (!dominated) out.push_back(i);
  }
  return out;
}

KneeResult knee_point(const std::vector<std::pair<double, double>>& points) {
  if (points.empty()) throw std::invalid_argument("knee needs at least one point");
  const std::size_t n = points.size();
  auto [xmin, xmax] = std::minmax_element(points.begin(), points.end(),
                                          [](const auto& a, const auto& b) { return a.first < b.first; });
  auto [ymin, ymax] = std::minmax_element(points.begin(), points.end(),
                                          [](const auto& a, const auto& b) { return a.second < b.second; });
  const double x0 = xmin->first, xs = xmax->first - xmin->first;
  const double y0 = ymin->second, ys = ymax->second - ymin->second;
  std::vector<std::pair<double, double>> norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    norm[i] = {xs > 0 ? (points[i].first - x0) / xs : 0.0, ys > 0 ? (points[i].second - y0) / ys : 0.0};
  }
  // Endpoints span the curve: lowest AUC (ties: highest p2) and highest AUC
  // (ties: lowest p2).
  auto by_auc = [&](std::size_t a, std::size_t b) {
    return norm[a].first != norm[b].first ? norm[a].first < norm[b].first : norm[a].second > norm[b].second;
  };
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t lo = *std::min_element(idx.begin(), idx.end(), [&](auto a, auto b) {
    return norm[a].first != norm[b].first ? norm[a].first < norm[b].first : norm[a].second > norm[b].second;
  });
  const std::size_t hi = *std::max_element(idx.begin(), idx.end(), by_auc);

  const double dx = norm[hi].first - norm[lo].first;
  const double dy = norm[hi].second - norm[lo].second;
  const double len = std::hypot(dx, dy);

  KneeResult r;
  r.distances.assign(n, 0.0);
  if (len > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      const double px = norm[i].first - norm[lo].first;
      const double py = norm[i].second - norm[lo].second;
      r.distances[i] = std::abs(dx * py - dy * px) / len;
    }
  }
  constexpr double kTie = 1e-12;
  r.index = hi;
  r.distance = r.distances[hi];
  for (std::size_t i = 0; i < n; ++i) {
    const double d = r.distances[i];
    if (d > r.distance + kTie || (std::abs(d - r.distance) <= kTie && points[i].first > points[r.index].first)) {
      r.index = i;
      r.distance = d;
    }
  }
  return r;
}

double GridCell::auc() const { return mean(auc_per_seed); }
double GridCell::p2_reward() const { return mean(p2_per_seed); }

namespace {

std::size_t knee_of_means(const std::vector<std::pair<double, double>>& means) {
  const auto front = pareto_maximize(means);
  std::vector<std::pair<double, double>> pts;
  for (auto i : front) pts.push_back(means[i]);
  return front[knee_point(pts).index];
}

}  // namespace

std::size_t select_knee(const std::vector<GridCell>& cells) {
  if (cells.empty()) throw std::invalid_argument("empty grid");
  std::vector<std::pair<double, double>> means;
  for (const auto& c : cells) means.emplace_back(c.auc(), c.p2_reward());
  return knee_of_means(means);
}

std::size_t select_max_auc(const std::vector<GridCell>& cells) {
  if (cells.empty()) throw std::invalid_argument("empty grid");
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (cells[i].auc() > cells[best].auc()) best = i;
  return best;
}

StabilityReport knee_bootstrap_stability(const std::vector<GridCell>& cells, std::size_t iterations,
                                         std::uint64_t seed) {
  if (cells.empty()) throw std::invalid_argument("empty grid");
  if (iterations < 1) throw std::invalid_argument("bootstrap needs at least one iteration");
  const std::size_t n_seeds = cells.front().auc_per_seed.size();
  for (const auto& c : cells) {
    if (c.auc_per_seed.size() != n_seeds || c.p2_per_seed.size() != n_seeds) {
      throw std::invalid_argument("every cell needs the same seeds for both objectives");
    }
  }
  if (n_seeds < 2) throw std::invalid_argument("bootstrap stability needs at least two seeds");

  StabilityReport rep;
  rep.knee = select_knee(cells);
  rep.iterations = iterations;
  rep.counts.assign(cells.size(), 0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_seeds - 1);
  std::vector<std::size_t> sample(n_seeds);
  std::vector<std::pair<double, double>> means(cells.size());
  std::size_t near = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (auto& s : sample) s = pick(rng);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double a = 0.0, p = 0.0;
      for (auto s : sample) {
        a += cells[c].auc_per_seed[s];
        p += cells[c].p2_per_seed[s];
      }
      means[c] = {a / n_seeds, p / n_seeds};
    }
    const std::size_t k = knee_of_means(means);
    ++rep.counts[k];
    const auto& kc = cells[k];
    const auto& ref = cells[rep.knee];
    const auto gap = kc.gamma_index > ref.gamma_index ? kc.gamma_index - ref.gamma_index : ref.gamma_index - kc.gamma_index;
    if (kc.alpha_index == ref.alpha_index && gap <= 1) ++near;
  }
  rep.modal = static_cast<std::size_t>(std::max_element(rep.counts.begin(), rep.counts.end()) - rep.counts.begin());
  const double n = static_cast<double>(iterations);
  rep.modal_fraction = rep.counts[rep.modal] / n;
  rep.knee_fraction = rep.counts[rep.knee] / n;
  rep.within_one_gamma_fraction = near / n;
  return rep;
}

void GridSpec::validate() const {
  if (alphas.empty() || gammas.empty()) throw std::invalid_argument("grid needs at least one alpha and one gamma");
  for (double a : alphas)
    if (!(a >= 0.0)) throw std::invalid_argument("grid alpha must be non-negative");
  for (double g : gammas) check_gamma(g);
  if (!(t_adapt > 0.0)) throw std::invalid_argument("T_adapt must be positive");
  if (seeds.empty()) throw std::invalid_argument("grid needs at least one seed");
  if (budgets.empty() || !std::is_sorted(budgets.begin(), budgets.end())) {
    throw std::invalid_argument("grid budgets must be non-empty and ascending");
  }
  for (double b : budgets)
    if (!(b > 0.0) || !std::isfinite(b)) throw std::invalid_argument("grid budgets must be positive and finite");
  if (sweep_length < 1 || degrade_phase_length < 1) throw std::invalid_argument("grid phase lengths must be positive");
  if (!(degrade_target >= 0.0 && degrade_target <= 1.0)) throw std::invalid_argument("degrade target must lie in [0, 1]");
}

void to_json(nlohmann::json& doc, const GridSpec& s) {
  doc = nlohmann::json{{"alphas", s.alphas},
                       {"gammas", s.gammas},
                       {"t_adapt", s.t_adapt},
                       {"seeds", s.seeds},
                       {"budgets", s.budgets},
                       {"sweep_length", s.sweep_length},
                       {"degrade_arm", s.degrade_arm},
                       {"degrade_target", s.degrade_target},
                       {"degrade_phase_length", s.degrade_phase_length},
                       {"degrade_budget", s.degrade_budget ? nlohmann::json(*s.degrade_budget) : nlohmann::json(nullptr)},
                       {"bootstrap_iterations", s.bootstrap_iterations}};
}

void from_json(const nlohmann::json& doc, GridSpec& s) {
  s = GridSpec{};
  s.alphas = doc.value("alphas", s.alphas);
  s.gammas = doc.value("gammas", s.gammas);
  s.t_adapt = doc.value("t_adapt", s.t_adapt);
  s.seeds = doc.value("seeds", s.seeds);
  s.budgets = doc.value("budgets", s.budgets);
  s.sweep_length = doc.value("sweep_length", s.sweep_length);
  s.degrade_arm = doc.value("degrade_arm", s.degrade_arm);
  s.degrade_target = doc.value("degrade_target", s.degrade_target);
  s.degrade_phase_length = doc.value("degrade_phase_length", s.degrade_phase_length);
  if (doc.contains("degrade_budget")) {
    if (doc.at("degrade_budget").is_null()) {
      s.degrade_budget.reset();
    } else {
      s.degrade_budget = doc.at("degrade_budget").get<double>();
    }
  }
  s.bootstrap_iterations = doc.value("bootstrap_iterations", s.bootstrap_iterations);
  s.validate();
}

std::vector<GridCell> evaluate_grid(const GridSpec& spec, const Source& source, const RunConfig& base) {
  spec.validate();
  std::vector<GridCell> cells;
  for (std::size_t ai = 0; ai < spec.alphas.size(); ++ai) {
    for (std::size_t gi = 0; gi < spec.gammas.size(); ++gi) {
      GridCell cell;
      cell.alpha = spec.alphas[ai];
      cell.gamma = spec.gammas[gi];
      cell.alpha_index = ai;
      cell.gamma_index = gi;
      cell.n_eff = neff_from_horizon(cell.gamma, spec.t_adapt);

      RunConfig cfg = base;
      cfg.router.alpha = cell.alpha;
      cfg.router.gamma = cell.gamma;
      cfg.n_eff = cell.n_eff;

      const auto sweep = run_budget_sweep(spec.budgets, spec.sweep_length, source, cfg, spec.seeds);
      for (auto seed : spec.seeds) {
        std::vector<CostRewardPoint> pts;
        for (const auto& p : sweep)
          if (p.seed == seed) pts.push_back({p.mean_cost, p.mean_reward});
        cell.auc_per_seed.push_back(frontier_auc(pareto_frontier(pts), spec.budgets.front(),
                                                 spec.budgets.size() > 1 ? spec.budgets.back() : spec.budgets.front() * 10));
      }

      Scenario sc;
      sc.name = "degradation_objective";
      sc.budget = spec.degrade_budget;
      sc.order = PromptOrder::kFresh;
      sc.phases = {Phase{spec.degrade_phase_length, {}},
                   Phase{spec.degrade_phase_length, {RewardMeanShift{spec.degrade_arm, spec.degrade_target}}}};
      for (auto seed : spec.seeds) {
        const SeedTrace t = run_seed(sc, source, cfg, seed);
        double r = 0.0;
        int n = 0;
        for (const auto& s : t.steps)
          if (s.phase == 1) r += s.reward, ++n;
        cell.p2_per_seed.push_back(r / n);
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

nlohmann::json grid_to_json(const std::vector<GridCell>& cells) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : cells) {
    out.push_back({{"alpha", c.alpha},
                   {"gamma", c.gamma},
                   {"n_eff", c.n_eff},
                   {"auc", c.auc()},
                   {"p2_reward", c.p2_reward()},
                   {"auc_per_seed", c.auc_per_seed},
                   {"p2_per_seed", c.p2_per_seed}});
  }
  return out;
}

std::string grid_to_csv(const std::vector<GridCell>& cells) {
  std::ostringstream out;
  out << std::setprecision(10) << "alpha,gamma,n_eff,auc,p2_reward\n";
  for (const auto& c : cells) {
    out << c.alpha << ',' << c.gamma << ',' << c.n_eff << ',' << c.auc() << ',' << c.p2_reward() << '\n';
  }
  return out.str();
}

}  // namespace bprouter
