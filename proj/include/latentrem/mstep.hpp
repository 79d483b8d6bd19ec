#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "latentrem/types.hpp"

namespace latentrem {

/// Second moment of the latent increments,
///   (1/n) sum_k V_{k|n} + V_{k-1|n} - L_k - L_k' + (x_{k|n} - x_{k-1|n})(x_{k|n} - x_{k-1|n})'
/// with L_k = Cov(x_k, x_{k-1} | y_{1:n}), before any structural projection.
Eigen::MatrixXd expected_increment_moment(const LatentTrajectory& smoothed, const std::vector<Eigen::MatrixXd>& lag_covs);

/// Projects a symmetric matrix onto the PSD cone and then onto `structure`.
Eigen::MatrixXd project_sigma(const Eigen::MatrixXd& raw, SigmaStructure structure, int nodes, int dim);

/// Closed-form random-walk covariance update.
Eigen::MatrixXd sigma_mle(const LatentTrajectory& smoothed, const std::vector<Eigen::MatrixXd>& lag_covs,
                          SigmaStructure structure);

/// Average diagonal of sigma, the scalar used for reporting.
double sigma_spherical_summary(const Eigen::MatrixXd& sigma);

/// Mean and covariance of z = x_i - x_j extracted from the joint moments.
struct PairMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};
PairMoments pair_difference(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int i, int j, int dim);

/// log E[exp(-||x_i - x_j||^2)] for x ~ N(mean, cov).
///
/// taylor2 expands exp(-d) to second order around the mean; the correction
/// factor 1 + 2 z'V_z z - tr(V_z) is truncated below at 1e-12. unscented
/// averages exp(-d) over sigma points of the (x_i, x_j) marginal, with kappa
/// defaulting to 3 - 2d. exact uses the Gaussian closed form
/// |I + 2V_z|^-1/2 exp(-z'(I + 2V_z)^-1 z).
double offset_expectation(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int i, int j, int dim,
                          OffsetMethod method, std::optional<double> kappa = std::nullopt);

/// E[-||x_i - x_j||^2] for x ~ N(mean, cov).
double expected_negative_distance(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int i, int j, int dim);

struct RegressionResult {
  double intercept = 0.0;
  Eigen::VectorXd fixed_coeffs;
  Eigen::VectorXd sender_effects;
  Eigen::VectorXd receiver_effects;
  double sender_variance = 1.0;
  double receiver_variance = 1.0;
  double deviance = 0.0;
  std::vector<double> deviance_trace;  // penalized deviance per IRLS iteration
  int iterations = 0;
  /// trace((X'WX + P)^-1 X'WX): fixed effects count 1 each, penalized effects less.
  double effective_df = 0.0;
  std::vector<int> pinned_senders;    // nodes with no sent events, effect fixed at 0
  std::vector<int> pinned_receivers;  // nodes with no received events, effect fixed at 0
};

/// Penalized Poisson regression by IRLS with linear predictor
///   log C_i(k) + offset(k, ij) + a0 + sender_i + receiver_j + b' B_ij(k).
///
/// `offsets` is intervals x dyads. Sender and receiver effects are Gaussian
/// random effects, i.e. ridge-penalized with 1/sigma^2 and constrained to
/// sum to zero; their variances get one EM update after convergence unless
/// fixed. `start` supplies warm-start coefficients and the current variances.
/// Throws Error(non_convergence) carrying the deviance trace when IRLS does
/// not reach a relative change below 1e-10 within 100 iterations.
RegressionResult mstep_regression(const NetworkPanel& panel, const Eigen::MatrixXd& offsets, const EffectSpec& effects,
                                  const Parameters& start);

}  // namespace latentrem
