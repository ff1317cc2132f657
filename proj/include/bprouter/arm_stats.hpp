#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace bprouter {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Step = std::int64_t;

enum class RewardPolicy { kReject, kClamp };

/// Offline sufficient statistics for one arm. `design[d-1][d-1]` is the
/// bias-direction mass, equal to the sample count for unit-bias contexts.
struct WarmupPrior {
  Matrix design;
  Vector rewards;
  Vector theta;
  std::string provenance;

  int dim() const { return static_cast<int>(rewards.size()); }
  double bias_mass() const { return design(dim() - 1, dim() - 1); }
};

/// Per-arm ridge statistics with geometric forgetting.
///
/// Holds A (design), its cached inverse, the reward accumulator b and the
/// estimate theta = A^-1 b. The inverse is maintained incrementally with
/// Sherman-Morrison and refreshed by direct inversion every
/// `kRefreshInterval` absorbed records.
///
/// Decay floor: forgetting scales A by gamma^dt. When a lower bound on
/// lambda_min(A) drops below lambda0 * kDecayFloorRatio the true smallest
/// eigenvalue is computed and, if needed, A is lifted by a multiple of I so
/// that lambda_min(A) equals the floor again.
class ArmState {
 public:
  static constexpr int kRefreshInterval = 1000;
  static constexpr double kDecayFloorRatio = 1e-3;

  static ArmState cold(int dim, double lambda0);
  static ArmState from_prior(const WarmupPrior& prior, double n_eff, double lambda0);
  /// Isotropic prior carrying n_eff/dim pseudo-observations per direction and
  /// predicting `bias_reward` for every unit-bias context.
  static ArmState heuristic(int dim, double n_eff, double bias_reward, double lambda0);

  void apply_forgetting(double gamma, Step dt);
  void absorb(const Vector& x, double reward, Step step,
              RewardPolicy policy = RewardPolicy::kReject);
  void mark_played(Step step);
  /// Sets both clocks, used when an arm joins a router mid-stream.
  void stamp(Step step);

  double predict(const Vector& x) const { return theta_.dot(x); }
  double variance(const Vector& x) const { return x.dot(a_inv_ * x); }

  int dim() const { return static_cast<int>(b_.size()); }
  double lambda0() const { return lambda0_; }
  const Matrix& design() const { return a_; }
  const Matrix& inverse() const { return a_inv_; }
  const Vector& rewards() const { return b_; }
  const Vector& theta() const { return theta_; }
  Step last_update() const { return last_update_; }
  Step last_played() const { return last_played_; }
  std::int64_t n_updates() const { return n_updates_; }
  /// Number of times the decay floor lifted A.
  std::int64_t floor_lifts() const { return floor_lifts_; }

  /// max |A * A_inv - I| over all entries.
  double inverse_residual() const;
  /// Re-inverts A directly and recomputes theta.
  void refresh_inverse();

  /// Versioned document. With `exact`, the cached inverse and estimate are
  /// stored too so a restored arm resumes bit-identically; otherwise they are
  /// recomputed on load.
  nlohmann::json to_json(bool exact = false) const;
  static ArmState from_json(const nlohmann::json& doc);

  static constexpr int kFormatVersion = 1;

 private:
  ArmState(int dim, double lambda0);
  void enforce_floor();

  double lambda0_;
  Matrix a_;
  Matrix a_inv_;
  Vector b_;
  Vector theta_;
  Step last_update_ = 0;
  Step last_played_ = 0;
  std::int64_t n_updates_ = 0;
  std::int64_t since_refresh_ = 0;
  std::int64_t floor_lifts_ = 0;
  double min_eig_bound_;
};

/// Builds offline statistics from (context, reward) samples:
/// A_off = sum x x^T, b_off = sum r x, theta_off the near-unregularized
/// least-squares fit.
class PriorBuilder {
 public:
  explicit PriorBuilder(int dim);
  void add(const Vector& x, double reward);
  WarmupPrior build(std::string provenance) const;
  std::int64_t count() const { return count_; }

 private:
  Matrix a_;
  Vector b_;
  std::int64_t count_ = 0;
};

}  // namespace bprouter
