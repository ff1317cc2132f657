#include "bprouter/arm_stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace bprouter {

namespace {

void check_lambda0(double lambda0) {
  if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) {
    throw std::invalid_argument("lambda0 must be positive and finite");
  }
}

void check_dim(int dim) {
  if (dim < 2) throw std::invalid_argument("context dimension must be at least 2");
}

nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  return flat;
}

Matrix matrix_from_json(const nlohmann::json& doc, int dim, const char* what) {
  const auto flat = doc.get<std::vector<double>>();
  if (flat.size() != static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim)) {
    throw std::invalid_argument(std::string("arm snapshot: ") + what + " has wrong size");
  }
  Matrix m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = flat[static_cast<std::size_t>(i * dim + j)];
  return m;
}

Vector vector_from_json(const nlohmann::json& doc, int dim, const char* what) {
  const auto flat = doc.get<std::vector<double>>();
  if (flat.size() != static_cast<std::size_t>(dim)) {
    throw std::invalid_argument(std::string("arm snapshot: ") + what + " has wrong size");
  }
  return Eigen::Map<const Vector>(flat.data(), dim);
}

}  // namespace

ArmState::ArmState(int dim, double lambda0)
    : lambda0_(lambda0),
      a_(Matrix::Identity(dim, dim) * lambda0),
      a_inv_(Matrix::Identity(dim, dim) / lambda0),
      b_(Vector::Zero(dim)),
      theta_(Vector::Zero(dim)),
      min_eig_bound_(lambda0) {}

ArmState ArmState::cold(int dim, double lambda0) {
  check_dim(dim);
  check_lambda0(lambda0);
  return ArmState(dim, lambda0);
}

ArmState ArmState::from_prior(const WarmupPrior& prior, double n_eff, double lambda0) {
  check_lambda0(lambda0);
  const int dim = prior.dim();
  check_dim(dim);
  if (prior.design.rows() != dim || prior.design.cols() != dim || prior.theta.size() != dim) {
    throw std::invalid_argument("warmup prior has inconsistent dimensions");
  }
  if (!(n_eff >= 0.0) || !std::isfinite(n_eff)) {
    throw std::invalid_argument("n_eff must be non-negative");
  }
  const double mass = prior.bias_mass();
  if (!(mass > 0.0)) throw std::invalid_argument("warmup prior has no bias-direction mass");

  const double s = n_eff / mass;
  ArmState st(dim, lambda0);
  st.a_ = s * prior.design + lambda0 * Matrix::Identity(dim, dim);
  st.b_ = s * prior.rewards + lambda0 * prior.theta;
  st.refresh_inverse();
  return st;
}

ArmState ArmState::heuristic(int dim, double n_eff, double bias_reward, double lambda0) {
  check_dim(dim);
  check_lambda0(lambda0);
  if (!(n_eff >= 0.0) || !std::isfinite(n_eff)) {
    throw std::invalid_argument("n_eff must be non-negative");
  }
  if (!(bias_reward >= 0.0 && bias_reward <= 1.0)) {
    throw std::invalid_argument("heuristic bias reward must lie in [0, 1]");
  }
  // A_off = (n_eff/d) I with theta_off = bias_reward * e_d, taken at s = 1.
  const double per_direction = n_eff / dim + lambda0;
  ArmState st(dim, lambda0);
  st.a_ = Matrix::Identity(dim, dim) * per_direction;
  st.a_inv_ = Matrix::Identity(dim, dim) / per_direction;
  st.b_(dim - 1) = per_direction * bias_reward;
  st.theta_ = st.a_inv_ * st.b_;
  return st;
}

void ArmState::apply_forgetting(double gamma, Step dt) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("forgetting factor must lie in (0, 1]");
  }
  if (dt < 0) throw std::invalid_argument("staleness must be non-negative");
  if (gamma == 1.0 || dt == 0) return;

  const double scale = std::pow(gamma, static_cast<double>(dt));
  a_ *= scale;
  b_ *= scale;
  if (scale > 1e-250) {
    a_inv_ /= scale;
    min_eig_bound_ *= scale;
  } else {
    // Underflow territory: the cached inverse is meaningless, force a re-check.
    min_eig_bound_ = 0.0;
  }
  enforce_floor();
}

void ArmState::enforce_floor() {
  const double floor = lambda0_ * kDecayFloorRatio;
  if (min_eig_bound_ >= floor) return;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a_, Eigen::EigenvaluesOnly);
  const double smallest = eig.eigenvalues()(0);
  if (smallest < floor) {
    a_.diagonal().array() += floor - smallest;
    ++floor_lifts_;
    refresh_inverse();
    min_eig_bound_ = floor;
  } else {
    min_eig_bound_ = smallest;
  }
}

void ArmState::absorb(const Vector& x, double reward, Step step, RewardPolicy policy) {
  if (x.size() != b_.size()) throw std::invalid_argument("context dimension mismatch");
  if (!std::isfinite(reward)) throw std::invalid_argument("reward must be finite");
  if (reward < 0.0 || reward > 1.0) {
    if (policy == RewardPolicy::kReject) throw std::invalid_argument("reward outside [0, 1]");
    reward = std::clamp(reward, 0.0, 1.0);
  }
  if (step < last_update_) throw std::invalid_argument("update step moves backwards");

  a_.noalias() += x * x.transpose();
  const Vector u = a_inv_ * x;
  const double denom = 1.0 + x.dot(u);
  a_inv_.noalias() -= (u / denom) * u.transpose();
  b_.noalias() += reward * x;

  last_update_ = step;
  ++n_updates_;
  if (++since_refresh_ >= kRefreshInterval) {
    refresh_inverse();
  } else {
    theta_.noalias() = a_inv_ * b_;
  }
}

void ArmState::mark_played(Step step) {
  if (step < last_played_) throw std::invalid_argument("play step moves backwards");
  last_played_ = step;
}

void ArmState::stamp(Step step) {
  if (step < 0) throw std::invalid_argument("negative clock");
  last_update_ = step;
  last_played_ = step;
}

double ArmState::inverse_residual() const {
  const int d = dim();
  return (a_ * a_inv_ - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
}

void ArmState::refresh_inverse() {
  const int d = dim();
  Eigen::LLT<Matrix> llt(a_);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("design matrix lost positive definiteness");
  }
  a_inv_ = llt.solve(Matrix::Identity(d, d));
  a_inv_ = 0.5 * (a_inv_ + a_inv_.transpose()).eval();
  theta_.noalias() = a_inv_ * b_;
  since_refresh_ = 0;
}

nlohmann::json ArmState::to_json(bool exact) const {
  nlohmann::json doc;
  doc["format_version"] = kFormatVersion;
  doc["d"] = dim();
  doc["lambda0"] = lambda0_;
  doc["A"] = matrix_to_json(a_);
  doc["b"] = std::vector<double>(b_.data(), b_.data() + b_.size());
  doc["last_update"] = last_update_;
  doc["last_played"] = last_played_;
  doc["n_updates"] = n_updates_;
  if (exact) {
    doc["exact"] = {
        {"A_inv", matrix_to_json(a_inv_)},
        {"theta_hat", std::vector<double>(theta_.data(), theta_.data() + theta_.size())},
        {"since_refresh", since_refresh_},
        {"floor_lifts", floor_lifts_},
        {"min_eig_bound", min_eig_bound_},
    };
  }
  return doc;
}

ArmState ArmState::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("arm snapshot must be an object");
  if (doc.value("format_version", -1) != kFormatVersion) {
    throw std::invalid_argument("arm snapshot format_version mismatch");
  }
  const int dim = doc.at("d").get<int>();
  check_dim(dim);
  const double lambda0 = doc.at("lambda0").get<double>();
  check_lambda0(lambda0);

  ArmState st(dim, lambda0);
  st.a_ = matrix_from_json(doc.at("A"), dim, "A");
  st.b_ = vector_from_json(doc.at("b"), dim, "b");
  if (!st.a_.allFinite() || !st.b_.allFinite()) {
    throw std::invalid_argument("arm snapshot contains non-finite values");
  }
  const double asym = (st.a_ - st.a_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * std::max(1.0, st.a_.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("arm snapshot: A is not symmetric");
  }
  st.last_update_ = doc.at("last_update").get<Step>();
  st.last_played_ = doc.at("last_played").get<Step>();
  st.n_updates_ = doc.at("n_updates").get<std::int64_t>();
  if (st.last_update_ < 0 || st.last_played_ < 0 || st.n_updates_ < 0) {
    throw std::invalid_argument("arm snapshot: negative clock");
  }

  if (doc.contains("exact")) {
    const auto& ex = doc.at("exact");
    st.a_inv_ = matrix_from_json(ex.at("A_inv"), dim, "A_inv");
    st.theta_ = vector_from_json(ex.at("theta_hat"), dim, "theta_hat");
    st.since_refresh_ = ex.at("since_refresh").get<std::int64_t>();
    st.floor_lifts_ = ex.at("floor_lifts").get<std::int64_t>();
    st.min_eig_bound_ = ex.at("min_eig_bound").get<double>();
  } else {
    try {
      st.refresh_inverse();
    } catch (const std::runtime_error&) {
      throw std::invalid_argument("arm snapshot: A is not positive definite");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(st.a_, Eigen::EigenvaluesOnly);
    st.min_eig_bound_ = eig.eigenvalues()(0);
  }
  return st;
}

PriorBuilder::PriorBuilder(int dim) : a_(Matrix::Zero(dim, dim)), b_(Vector::Zero(dim)) {
  check_dim(dim);
}

void PriorBuilder::add(const Vector& x, double reward) {
  if (x.size() != b_.size()) throw std::invalid_argument("context dimension mismatch");
  a_.noalias() += x * x.transpose();
  b_.noalias() += reward * x;
  ++count_;
}

WarmupPrior PriorBuilder::build(std::string provenance) const {
  if (count_ == 0) throw std::invalid_argument("prior needs at least one sample");
  const int d = static_cast<int>(b_.size());
  // Tiny ridge keeps the solve defined when fewer than d samples are present.
  const double ridge = 1e-8 * std::max(1.0, a_.trace() / d);
  const Vector theta = (a_ + ridge * Matrix::Identity(d, d)).ldlt().solve(b_);
  return WarmupPrior{a_, b_, theta, std::move(provenance)};
}

}  // namespace bprouter
