#pragma once

#include <Eigen/Dense>

#include <vector>

#include "latentrem/filter.hpp"
#include "latentrem/types.hpp"

namespace latentrem {

/// B_k = V_{k-1|k-1} V_{k|k-1}^-1, solved through a Cholesky factor of
/// V_{k|k-1}. Throws Error(numerical_failure) naming `k` if V_{k|k-1} is
/// singular after jitter.
Eigen::MatrixXd backward_gain(const Eigen::MatrixXd& cov_filt_prev, const Eigen::MatrixXd& cov_pred, int k = 0);

/// Rauch-Tung-Striebel pass over k = n..1, ending with the smoothed initial
/// state (x_{0|n}, V_{0|n}). Requires a filter pass without divergence.
LatentTrajectory smooth_pass(const FilterResult& filtered, int nodes, int dim);

/// Cov(x_k, x_{k-1} | y_{1:n}) = V_{k|n} B_k' for k = 1..n (index k-1).
std::vector<Eigen::MatrixXd> lag_one_cov(const LatentTrajectory& smoothed);

}  // namespace latentrem
