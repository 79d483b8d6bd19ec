#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "latentrem/rate.hpp"
#include "latentrem/types.hpp"

namespace latentrem {

/// Observation side of a state-space model with a random-walk state.
///
/// Implementations may drop rows that carry no information at interval k
/// (zero-exposure dyads); all vectors returned for interval k then refer to
/// the retained rows only.
class MeasurementModel {
 public:
  virtual ~MeasurementModel() = default;

  virtual Index state_dim() const = 0;
  virtual int intervals() const = 0;
  virtual Eigen::VectorXd observed(int k) const = 0;
  virtual Eigen::VectorXd mean(const Eigen::VectorXd& x, int k) const = 0;
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, int k) const = 0;
  /// Diagonal of R_k given the predicted observation mean.
  virtual Eigen::VectorXd variance(const Eigen::VectorXd& mean, int k) const = 0;
  /// True when observation means cannot be negative (rates).
  virtual bool nonnegative_mean() const { return false; }
};

/// Dyadic count observations under the latent-distance rate model.
class NetworkMeasurement final : public MeasurementModel {
 public:
  NetworkMeasurement(const NetworkPanel& panel, const Parameters& params, int dim, Family family);

  Index state_dim() const override { return rates_.state_dim(); }
  int intervals() const override { return panel_->intervals(); }
  Eigen::VectorXd observed(int k) const override;
  Eigen::VectorXd mean(const Eigen::VectorXd& x, int k) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, int k) const override;
  Eigen::VectorXd variance(const Eigen::VectorXd& mean, int k) const override;
  bool nonnegative_mean() const override { return true; }

  const RateModel& rates() const { return rates_; }
  const std::vector<Index>& rows(int k) const { return rows_[static_cast<std::size_t>(k - 1)]; }

 private:
  const NetworkPanel* panel_;
  RateModel rates_;
  Family family_;
  std::vector<std::vector<Index>> rows_;
};

/// y_k = H_k x_k + c_k + e_k with e_k ~ N(0, diag(r_k)). Used as a
/// linear-Gaussian surrogate and to check the nonlinear filters.
class AffineMeasurement final : public MeasurementModel {
 public:
  AffineMeasurement(std::vector<Eigen::MatrixXd> h, std::vector<Eigen::VectorXd> c,
                    std::vector<Eigen::VectorXd> r, std::vector<Eigen::VectorXd> y);

  Index state_dim() const override { return h_.front().cols(); }
  int intervals() const override { return static_cast<int>(h_.size()); }
  Eigen::VectorXd observed(int k) const override { return y_[idx(k)]; }
  Eigen::VectorXd mean(const Eigen::VectorXd& x, int k) const override { return h_[idx(k)] * x + c_[idx(k)]; }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&, int k) const override { return h_[idx(k)]; }
  Eigen::VectorXd variance(const Eigen::VectorXd&, int k) const override { return r_[idx(k)]; }

 private:
  static std::size_t idx(int k) { return static_cast<std::size_t>(k - 1); }
  std::vector<Eigen::MatrixXd> h_;
  std::vector<Eigen::VectorXd> c_;
  std::vector<Eigen::VectorXd> r_;
  std::vector<Eigen::VectorXd> y_;
};

enum class DivergenceReason { none, non_finite, singular, cholesky };

std::string to_string(DivergenceReason r);

struct Divergence {
  DivergenceReason reason = DivergenceReason::none;
  std::string detail;

  explicit operator bool() const { return reason != DivergenceReason::none; }
};

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct FilterState {
  int k = 0;
  Eigen::VectorXd mean_pred;
  Eigen::MatrixXd cov_pred;
  Eigen::VectorXd mean_filt;
  Eigen::MatrixXd cov_filt;
  Eigen::VectorXd innovation;
  Divergence diverged;
};

/// Random-walk prediction: mean unchanged, covariance V + Sigma.
Prediction predict(const Eigen::VectorXd& mean_filt, const Eigen::MatrixXd& cov_filt, const Eigen::MatrixXd& sigma);

/// K = (V^-1 + H' R^-1 H)^-1 H' R^-1, which equals V H' (R + H V H')^-1
/// without forming a p_y x p_y inverse. nullopt if the pd x pd system is
/// singular after jitter.
std::optional<Eigen::MatrixXd> gain_woodbury(const Eigen::MatrixXd& cov_pred, const Eigen::MatrixXd& h,
                                             const Eigen::VectorXd& r_diag);

/// Linearized update around `mu` = mu(x_pred) with Jacobian `h`.
FilterState ekf_update(const Prediction& pred, const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                       const Eigen::MatrixXd& h, const Eigen::VectorXd& r_diag);

struct SigmaPoints {
  Eigen::MatrixXd points;   // state_dim x (2 state_dim + 1); column 0 is the mean
  Eigen::VectorXd weights;  // w0 = kappa/(n+kappa), wj = 1/(2(n+kappa))
  bool ok = true;
};

SigmaPoints ukf_sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double kappa);

using VectorMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Unscented update. `mean_fn` maps a state to the observation mean and
/// `variance_fn` maps the ensemble mean to diag(R_k). The innovation
/// covariance is accumulated about the central sigma point, which keeps it
/// positive definite when w0 < 0 (the default kappa = 3 - pd). With
/// `nonnegative`, mean components the weighted sum drives to <= 0 are
/// replaced by the equal-weight mean of the 2n outer points.
FilterState ukf_update(const Prediction& pred, const Eigen::VectorXd& y, const VectorMap& mean_fn,
                       const VectorMap& variance_fn, double kappa, bool nonnegative = false);

struct FilterResult {
  /// states[0] holds the initial moments in mean_filt/cov_filt; states[k] interval k.
  std::vector<FilterState> states;

  bool diverged() const { return !states.empty() && static_cast<bool>(states.back().diverged); }
  int completed_intervals() const { return static_cast<int>(states.size()) - 1 - (diverged() ? 1 : 0); }
};

/// Forward pass over k = 1..n. Stops at the first diverged step, returning
/// the prefix plus the diverged state.
FilterResult filter_pass(const MeasurementModel& model, const Eigen::MatrixXd& sigma, const FilterOptions& options,
                         const Eigen::VectorXd& x0, const Eigen::MatrixXd& v0);

FilterResult filter_pass(const NetworkPanel& panel, const Parameters& params, const ModelConfig& config,
                         const Eigen::VectorXd& x0, const Eigen::MatrixXd& v0);

LatentTrajectory filtered_trajectory(const FilterResult& result, int nodes, int dim);

}  // namespace latentrem
