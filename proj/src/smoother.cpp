#include "latentrem/smoother.hpp"

#include <string>

#include "latentrem/linalg.hpp"

namespace latentrem {

Eigen::MatrixXd backward_gain(const Eigen::MatrixXd& cov_filt_prev, const Eigen::MatrixXd& cov_pred, int k) {
  if (cov_filt_prev.rows() != cov_pred.rows() || cov_filt_prev.cols() != cov_pred.cols()) {
    throw DimensionError("covariance", cov_pred.rows(), cov_filt_prev.rows());
  }
  auto llt = linalg::robust_llt(cov_pred);
  if (!llt) {
    throw Error(ErrorCode::numerical_failure,
                "predicted covariance is singular at interval " + std::to_string(k));
  }
  // V_pred symmetric: B' = V_pred^-1 V_filt_prev.
  return llt->solve(cov_filt_prev).transpose();
}

LatentTrajectory smooth_pass(const FilterResult& filtered, int nodes, int dim) {
  if (filtered.states.empty()) throw Error(ErrorCode::invalid_argument, "empty filter pass");
  if (filtered.diverged()) throw Error(ErrorCode::divergence, "cannot smooth a diverged filter pass");
  const auto& st = filtered.states;
  const int n = static_cast<int>(st.size()) - 1;

  LatentTrajectory out;
  out.nodes = nodes;
  out.dim = dim;
  out.kind = MomentKind::smoothed;
  out.means.resize(static_cast<std::size_t>(n) + 1);
  out.covariances.resize(static_cast<std::size_t>(n) + 1);
  out.backward_gains.resize(static_cast<std::size_t>(n));
  out.means[static_cast<std::size_t>(n)] = st[static_cast<std::size_t>(n)].mean_filt;
  out.covariances[static_cast<std::size_t>(n)] = st[static_cast<std::size_t>(n)].cov_filt;

  for (int k = n; k >= 1; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const FilterState& cur = st[ku];
    const FilterState& prev = st[ku - 1];
    const Eigen::MatrixXd b = backward_gain(prev.cov_filt, cur.cov_pred, k);
    out.means[ku - 1] = prev.mean_filt + b * (out.means[ku] - cur.mean_pred);
    Eigen::MatrixXd v = prev.cov_filt + b * (out.covariances[ku] - cur.cov_pred) * b.transpose();
    linalg::symmetrize(v);
    out.covariances[ku - 1] = std::move(v);
    out.backward_gains[ku - 1] = b;
  }
  return out;
}

std::vector<Eigen::MatrixXd> lag_one_cov(const LatentTrajectory& smoothed) {
  const int n = smoothed.intervals();
  if (static_cast<int>(smoothed.backward_gains.size()) != n) {
    throw Error(ErrorCode::invalid_argument, "smoothed trajectory is missing backward gains");
  }
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 1; k <= n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    out.push_back(smoothed.covariances[ku] * smoothed.backward_gains[ku - 1].transpose());
  }
  return out;
}

}  // namespace latentrem
