#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

#include "latentrem/types.hpp"

namespace latentrem {

/// Per-node, per-dimension logistic curve parameters (each p x d):
///   x_im(k) = offset + amplitude / (1 + exp(-slope (k - midpoint)))
struct LogisticShape {
  Eigen::MatrixXd offset;
  Eigen::MatrixXd amplitude;
  Eigen::MatrixXd midpoint;
  Eigen::MatrixXd slope;
};

struct SimScenario {
  int nodes = 10;
  int intervals = 100;
  int dim = 2;
  /// false draws every slope as 0, giving constant trajectories.
  bool dynamic = true;
  bool directed = false;
  /// Fixed a0; when unset a0 is calibrated so the mean dyad count over the panel equals mean_rate.
  std::optional<double> intercept;
  double mean_rate = 2.0;
  Family family;
  int replicates = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

/// splitmix64 mix of a master seed with stream identifiers.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

/// Draws |a| in [0.5, 2] with random sign, midpoint in [0.2n, 0.8n],
/// slope in [0.05, 0.3] (0 for static scenarios), offset in [-1, 1].
LogisticShape draw_shape(const SimScenario& scenario, std::uint64_t seed);

/// Means for states k = 0..n; covariances are zero.
LatentTrajectory logistic_trajectory(const LogisticShape& shape, int intervals);

LatentTrajectory simulate_trajectories(const SimScenario& scenario, std::uint64_t seed);

/// a0 such that the average of exp(a0 - d_ij(k)) over k = 1..n and all dyads equals mean_rate.
double calibrate_intercept(const LatentTrajectory& truth, bool directed, double mean_rate);

/// Independent counts at mu_ij(x_k) for k = 1..n with unit exposure.
/// Negative binomial draws are gamma-Poisson mixtures with variance mu + phi mu^2.
NetworkPanel simulate_counts(const LatentTrajectory& truth, double intercept, const Family& family, bool directed,
                             std::uint64_t seed);

/// As above, taking exposures, covariates and orientation from `design` and
/// the full parameter set (effects, covariate coefficients) from `params`.
NetworkPanel simulate_counts(const NetworkPanel& design, const LatentTrajectory& truth, const Parameters& params,
                             const Family& family, std::uint64_t seed);

/// Draws one count with mean mu from the family.
template <class Rng>
double draw_count(double mu, const Family& family, Rng& rng);

struct SimulatedPanel {
  NetworkPanel panel;
  LatentTrajectory truth;
  Parameters params;
  LogisticShape shape;
};

/// Trajectories, calibrated intercept and counts for one replicate.
SimulatedPanel simulate_scenario(const SimScenario& scenario, std::uint64_t seed);

}  // namespace latentrem

#include <random>

namespace latentrem {

template <class Rng>
double draw_count(double mu, const Family& family, Rng& rng) {
  if (!(mu > 0.0)) return 0.0;
  double lambda = mu;
  if (family.kind == Family::Kind::negative_binomial && family.dispersion > 0.0) {
    std::gamma_distribution<double> g(1.0 / family.dispersion, family.dispersion * mu);
    lambda = g(rng);
    if (!(lambda > 0.0)) return 0.0;
  }
  std::poisson_distribution<long long> pois(lambda);
  return static_cast<double>(pois(rng));
}

}  // namespace latentrem
