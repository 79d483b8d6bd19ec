#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "latentrem/em.hpp"
#include "latentrem/types.hpp"

namespace latentrem {

/// Rates exp(eta - ||x_i - x_j||^2) at the trajectory means for k = 1..n (intervals x dyads).
Eigen::MatrixXd plugin_rates(const NetworkPanel& panel, const Parameters& params, const LatentTrajectory& trajectory);

struct KlEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  Index terms = 0;
};

/// Mean over (k, dyad) of log p(y_new | truth) - log p(y_new | fit), both
/// Poisson log-probabilities, with the standard error of that mean.
KlEstimate kl_from_rates(const Eigen::MatrixXd& truth_rates, const Eigen::MatrixXd& fit_rates,
                         const Eigen::MatrixXd& y_new);

/// Draws y_new from the truth (rates under `truth_family`) with `seed`, then
/// compares truth and fitted rates on it. Only distances enter, so rigid
/// motions of either trajectory leave the value unchanged.
KlEstimate kl_out_of_fold(const NetworkPanel& design, const LatentTrajectory& fit, const Parameters& fit_params,
                          const LatentTrajectory& truth, const Parameters& truth_params, const Family& truth_family,
                          std::uint64_t seed);

/// Latent effective degrees of freedom sum_k tr(H_k V_k H_k' R_k^-1), where
/// H_k, R_k are linearized at the smoothed means and V_k are the smoothed
/// covariances of that linear-Gaussian model started from a diffuse
/// V_0 = 1e4 I with the fitted Sigma.
double latent_effective_df(const NetworkPanel& panel, const FitResult& fit);

struct CaicResult {
  double log_likelihood = 0.0;  // conditional, at smoothed means and fitted coefficients
  double regression_df = 0.0;
  double latent_df = 0.0;
  double effective_df = 0.0;
  double caic = 0.0;
};

/// -2 log f(y | b, x_{k|n}) + 2 (regression df + latent df).
/// Throws Error(invalid_argument) when the fit has no smoothed trajectory.
CaicResult caic(const FitResult& fit, const NetworkPanel& panel);

struct Residual {
  int k = 0;
  int sender = 0;
  int receiver = 0;
  double observed = 0.0;
  double fitted = 0.0;
  double variance = 0.0;
  double residual = 0.0;
  double distance = 0.0;  // ||x_i - x_j|| at the smoothed mean
  bool infinite = false;  // zero variance with a positive count
};

/// Studentized residuals (y - mu) / sqrt(v) under the fitted family for every active (k, dyad).
std::vector<Residual> residuals(const FitResult& fit, const NetworkPanel& panel);

/// Pearson correlation of pairwise distances over all (k >= 1, dyads).
double distance_correlation(const LatentTrajectory& a, const LatentTrajectory& b);

}  // namespace latentrem
