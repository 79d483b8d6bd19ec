#pragma once

#include <Eigen/Dense>

#include "latentrem/types.hpp"

namespace latentrem {

/// Stacked dyad rates for one interval, ordered by `dyads`.
struct RateVector {
  Eigen::VectorXd values;
  DyadIndex dyads;
};

/// Rate function bound to a panel and parameter set.
///
///   log mu_ij(k) = log C_i(k) + a0 - ||x_i - x_j||^2 + sender_i + receiver_j + b' B_ij(k)
///
/// Dyads whose sender has zero exposure get a rate of exactly 0; no
/// logarithm of zero is taken. Everything except the distance term is
/// precomputed per interval, so evaluating many sigma points is cheap.
class RateModel {
 public:
  RateModel(const NetworkPanel& panel, const Parameters& params, int dim);

  int nodes() const { return nodes_; }
  int dim() const { return dim_; }
  Index state_dim() const { return static_cast<Index>(nodes_) * dim_; }
  Index dyad_count() const { return dyads_.size(); }
  const DyadIndex& dyads() const { return dyads_; }

  /// True when the sender of `row` has positive exposure at interval k.
  bool active(int k, Index row) const { return active_(k - 1, row) != 0; }

  /// Non-latent part of the log-rate (log C + intercept + effects + covariates).
  /// Meaningless for inactive rows.
  double base_log_rate(int k, Index row) const { return base_(k - 1, row); }

  Eigen::VectorXd rate(const Eigen::VectorXd& x, int k) const;

  /// Dense p_y x pd Jacobian. Row (i,j) holds 2(x_j - x_i) mu_ij in node i's
  /// block and the negation in node j's block; every other entry is zero.
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, int k) const;

  /// Rates and Jacobian restricted to the given rows.
  Eigen::VectorXd rate_rows(const Eigen::VectorXd& x, int k, const std::vector<Index>& rows) const;
  Eigen::MatrixXd jacobian_rows(const Eigen::VectorXd& x, int k, const std::vector<Index>& rows) const;

  /// Rows with positive exposure at interval k.
  std::vector<Index> active_rows(int k) const;

 private:
  void check_state(const Eigen::VectorXd& x, int k) const;

  int nodes_;
  int dim_;
  int intervals_;
  DyadIndex dyads_;
  Eigen::MatrixXd base_;
  Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic> active_;
};

double squared_distance(const Eigen::VectorXd& x, int i, int j, int dim);

RateVector rate(const Eigen::VectorXd& x, const Parameters& params, const NetworkPanel& panel, int k);
Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const Parameters& params, const NetworkPanel& panel, int k);

struct FamilyMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// Poisson: variance = mean. Negative binomial(phi): variance = mu + phi mu^2.
FamilyMoments family_moments(const Eigen::VectorXd& mu, const Family& family);

/// Element-wise family variance at `mu` (no validation; hot path).
Eigen::VectorXd family_variance(const Eigen::VectorXd& mu, const Family& family);

/// Log-probability of count y under the family with mean mu.
double family_log_pmf(double y, double mu, const Family& family);

struct Alignment {
  LatentTrajectory trajectory;
  Eigen::MatrixXd rotation;     // d x d orthogonal, applied as x -> R x + t per node
  Eigen::VectorXd translation;  // d
  bool degenerate_reference = false;
};

/// Rotates and translates every state of `est` by one orthogonal map that
/// minimizes the Frobenius distance to `ref` over all (k, node) points.
Alignment align_procrustes(const LatentTrajectory& est, const LatentTrajectory& ref);

/// As above, with a fixed p x d anchor configuration used as the reference at every k.
Alignment align_procrustes(const LatentTrajectory& est, const Eigen::MatrixXd& anchor);

}  // namespace latentrem
