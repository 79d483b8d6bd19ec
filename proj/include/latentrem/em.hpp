#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "latentrem/filter.hpp"
#include "latentrem/types.hpp"

namespace latentrem {

struct InitialState {
  Eigen::VectorXd mean;  // x_{0|0}
  Eigen::MatrixXd cov;   // V_{0|0}
  InitStrategy strategy = InitStrategy::mds;
  bool fallback = false;  // requested strategy failed; zeros-jitter used instead
  std::string warning;
};

/// Starting locations for x_{0|0}; V_{0|0} = init_cov_scale * I.
///
/// zeros-jitter draws N(0, 0.01) coordinates. mds embeds the time-aggregated
/// network with classical scaling of the dissimilarities implied by the rate
/// model, falling back to zeros-jitter when the aggregate graph is
/// disconnected. backward-filter runs one EKF pass over the reversed panel
/// and takes its terminal state.
InitialState init_locations(const NetworkPanel& panel, const ModelConfig& config, InitStrategy strategy);

/// Pairwise squared-distance estimates log((ybar+0.5)/Cbar) shifted to be
/// non-negative, symmetric p x p with zero diagonal.
Eigen::MatrixXd aggregate_dissimilarity(const NetworkPanel& panel);

/// Classical multidimensional scaling of squared dissimilarities into `dim` coordinates (p x dim).
Eigen::MatrixXd classical_mds(const Eigen::MatrixXd& squared_dissimilarity, int dim);

struct TraceRecord {
  int iteration = 0;
  double q_poisson = 0.0;
  double q_gaussian = 0.0;
  double sigma_spherical = 0.0;
  double intercept = 0.0;
  int regression_iterations = 0;
  /// Q at the parameters that produced this E-step, under the same moments;
  /// the M-step guarantees q_total() >= q_previous up to IRLS tolerance.
  double q_previous = 0.0;
  /// Q plus the initial-state term and the entropy of the Gaussian
  /// smoothing distribution (a lower bound on the log-likelihood when the
  /// E-step is exact).
  double elbo = 0.0;

  double q_total() const { return q_poisson + q_gaussian; }
};

struct SurrogateTrace {
  std::vector<TraceRecord> records;
};

struct FitResult {
  ModelConfig config;
  bool static_model = false;
  Parameters params;
  LatentTrajectory smoothed;
  LatentTrajectory filtered;
  /// Starting state used by the first E-step.
  InitialState initial;
  SurrogateTrace trace;
  int iterations = 0;
  bool converged = false;
  /// Set when a later E-step diverged; the result holds the last valid iterate.
  Divergence divergence;
  int divergence_iteration = 0;
  double regression_df = 0.0;
  std::vector<int> pinned_senders;
  std::vector<int> pinned_receivers;
  std::vector<std::string> warnings;
};

/// Expected complete-data Poisson log-likelihood given latent moments,
///   sum_k sum_ij -C e^eta E[e^-d] + y (eta + log C + E[-d]) - log y!
/// where eta excludes the exposure. Inactive dyads contribute 0.
double q_poisson(const NetworkPanel& panel, const Parameters& params, const LatentTrajectory& moments, int dim,
                 OffsetMethod method);

/// Expected Gaussian random-walk log-density
///   -1/2 sum_k tr(Sigma^-1 M_k) - (n/2) log|Sigma| - (n pd / 2) log 2 pi,
/// with `increment_moment` = (1/n) sum_k M_k. Singular directions of Sigma
/// are dropped (pseudo-determinant).
double q_gaussian(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& increment_moment, int intervals);

/// Latent offsets log E[exp(-d_ij)] at every interval and dyad (intervals x dyads).
Eigen::MatrixXd latent_offsets(const NetworkPanel& panel, const LatentTrajectory& moments, OffsetMethod method,
                               std::optional<double> kappa = std::nullopt);

/// Intercept that matches total observed and expected counts given offsets.
double closed_form_intercept(const NetworkPanel& panel, const Parameters& params, const Eigen::MatrixXd& offsets);

/// EM for the dynamic model: filter + smoother E-step, then regression and
/// Sigma M-steps. Divergence in the first E-step throws Error(divergence);
/// later divergence stops EM and returns the last valid iterate with
/// `divergence` set.
FitResult em_fit(const NetworkPanel& panel, const ModelConfig& config,
                 std::optional<InitialState> init = std::nullopt, std::optional<Parameters> start = std::nullopt);

/// Same EM with Sigma fixed at 0, so every interval updates one shared
/// location per node. Q_gaussian is reported as 0.
FitResult static_fit(const NetworkPanel& panel, const ModelConfig& config,
                     std::optional<InitialState> init = std::nullopt, std::optional<Parameters> start = std::nullopt);

}  // namespace latentrem
