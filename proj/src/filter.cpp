#include "latentrem/filter.hpp"

#include <cmath>

#include "latentrem/linalg.hpp"

namespace latentrem {

std::string to_string(DivergenceReason r) {
  switch (r) {
    case DivergenceReason::none: return "none";
    case DivergenceReason::non_finite: return "non-finite";
    case DivergenceReason::singular: return "singular";
    case DivergenceReason::cholesky: return "cholesky";
  }
  return "?";
}

NetworkMeasurement::NetworkMeasurement(const NetworkPanel& panel, const Parameters& params, int dim, Family family)
    : panel_(&panel), rates_(panel, params, dim), family_(family) {
  rows_.reserve(static_cast<std::size_t>(panel.intervals()));
  for (int k = 1; k <= panel.intervals(); ++k) rows_.push_back(rates_.active_rows(k));
}

Eigen::VectorXd NetworkMeasurement::observed(int k) const {
  const auto& r = rows(k);
  Eigen::VectorXd y(static_cast<Index>(r.size()));
  for (std::size_t a = 0; a < r.size(); ++a) y[static_cast<Index>(a)] = panel_->count(k, r[a]);
  return y;
}

Eigen::VectorXd NetworkMeasurement::mean(const Eigen::VectorXd& x, int k) const { return rates_.rate_rows(x, k, rows(k)); }

Eigen::MatrixXd NetworkMeasurement::jacobian(const Eigen::VectorXd& x, int k) const {
  return rates_.jacobian_rows(x, k, rows(k));
}

Eigen::VectorXd NetworkMeasurement::variance(const Eigen::VectorXd& mean, int) const {
  return family_variance(mean, family_);
}

AffineMeasurement::AffineMeasurement(std::vector<Eigen::MatrixXd> h, std::vector<Eigen::VectorXd> c,
                                     std::vector<Eigen::VectorXd> r, std::vector<Eigen::VectorXd> y)
    : h_(std::move(h)), c_(std::move(c)), r_(std::move(r)), y_(std::move(y)) {
  if (h_.empty()) throw Error(ErrorCode::invalid_argument, "affine measurement needs at least one interval");
  const std::size_t n = h_.size();
  if (c_.size() != n || r_.size() != n || y_.size() != n) {
    throw DimensionError("affine measurement intervals", static_cast<long>(n), static_cast<long>(c_.size()));
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (h_[k].cols() != h_.front().cols()) throw DimensionError("H columns", h_.front().cols(), h_[k].cols());
    if (c_[k].size() != h_[k].rows() || r_[k].size() != h_[k].rows() || y_[k].size() != h_[k].rows()) {
      throw DimensionError("affine measurement rows", h_[k].rows(), y_[k].size());
    }
  }
}

Prediction predict(const Eigen::VectorXd& mean_filt, const Eigen::MatrixXd& cov_filt, const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != cov_filt.rows() || sigma.cols() != cov_filt.cols()) {
    throw DimensionError("sigma", cov_filt.rows(), sigma.rows());
  }
  return {mean_filt, cov_filt + sigma};
}

std::optional<Eigen::MatrixXd> gain_woodbury(const Eigen::MatrixXd& cov_pred, const Eigen::MatrixXd& h,
                                             const Eigen::VectorXd& r_diag) {
  const Index n = cov_pred.rows();
  if (h.cols() != n) throw DimensionError("H columns", n, h.cols());
  if (r_diag.size() != h.rows()) throw DimensionError("R rows", h.rows(), r_diag.size());
  auto v_llt = linalg::robust_llt(cov_pred);
  if (!v_llt) return std::nullopt;
  const Eigen::MatrixXd v_inv = v_llt->solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::VectorXd r_inv = r_diag.cwiseInverse();
  // H' R^-1 as pd x p_y
  const Eigen::MatrixXd ht_rinv = h.transpose() * r_inv.asDiagonal();
  Eigen::MatrixXd information = v_inv + ht_rinv * h;
  linalg::symmetrize(information);
  auto p_llt = linalg::robust_llt(information);
  if (!p_llt) return std::nullopt;
  Eigen::MatrixXd k = p_llt->solve(ht_rinv);
  if (!k.allFinite()) return std::nullopt;
  return k;
}

namespace {

bool inputs_finite(const Prediction& pred, const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  return pred.mean.allFinite() && pred.cov.allFinite() && y.allFinite() && mu.allFinite();
}

FilterState diverged_state(const Prediction& pred, DivergenceReason reason, std::string detail) {
  FilterState s;
  s.mean_pred = pred.mean;
  s.cov_pred = pred.cov;
  s.mean_filt = pred.mean;
  s.cov_filt = pred.cov;
  s.diverged = {reason, std::move(detail)};
  return s;
}

void check_finite_output(FilterState& s) {
  if (!s.mean_filt.allFinite() || !s.cov_filt.allFinite()) {
    s.diverged = {DivergenceReason::non_finite, "non-finite posterior moments"};
  }
}

}  // namespace

FilterState ekf_update(const Prediction& pred, const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                       const Eigen::MatrixXd& h, const Eigen::VectorXd& r_diag) {
  if (y.size() != mu.size()) throw DimensionError("observation", mu.size(), y.size());
  if (!inputs_finite(pred, y, mu) || !h.allFinite() || !r_diag.allFinite()) {
    return diverged_state(pred, DivergenceReason::non_finite, "non-finite filter inputs");
  }
  if ((r_diag.array() < 0.0).any()) throw Error(ErrorCode::invalid_argument, "R diagonal must be non-negative");
  FilterState s;
  s.mean_pred = pred.mean;
  s.cov_pred = pred.cov;
  s.innovation = y - mu;
  const Index n = pred.mean.size();
  if (y.size() == 0) {
    s.mean_filt = pred.mean;
    s.cov_filt = pred.cov;
    return s;
  }
  auto gain = gain_woodbury(pred.cov, h, r_diag);
  if (!gain) return diverged_state(pred, DivergenceReason::singular, "singular information matrix");
  s.mean_filt = pred.mean + (*gain) * s.innovation;
  s.cov_filt = (Eigen::MatrixXd::Identity(n, n) - (*gain) * h) * pred.cov;
  linalg::symmetrize(s.cov_filt);
  check_finite_output(s);
  return s;
}

SigmaPoints ukf_sigma_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double kappa) {
  const Index n = mean.size();
  if (cov.rows() != n || cov.cols() != n) throw DimensionError("covariance", n, cov.rows());
  const double spread = static_cast<double>(n) + kappa;
  if (!(spread > 0.0)) throw Error(ErrorCode::invalid_argument, "state dimension + kappa must be positive");
  SigmaPoints sp;
  sp.points.resize(n, 2 * n + 1);
  sp.weights.resize(2 * n + 1);
  sp.weights[0] = kappa / spread;
  sp.weights.tail(2 * n).setConstant(1.0 / (2.0 * spread));
  sp.points.col(0) = mean;
  auto llt = linalg::robust_llt(cov);
  if (!llt) {
    sp.ok = false;
    sp.points.rightCols(2 * n).colwise() = mean;
    return sp;
  }
  const Eigen::MatrixXd a = std::sqrt(spread) * Eigen::MatrixXd(llt->matrixL());
  for (Index j = 0; j < n; ++j) {
    sp.points.col(1 + j) = mean + a.col(j);
    sp.points.col(1 + n + j) = mean - a.col(j);
  }
  return sp;
}

FilterState ukf_update(const Prediction& pred, const Eigen::VectorXd& y, const VectorMap& mean_fn,
                       const VectorMap& variance_fn, double kappa, bool nonnegative) {
  if (!pred.mean.allFinite() || !pred.cov.allFinite() || !y.allFinite()) {
    return diverged_state(pred, DivergenceReason::non_finite, "non-finite filter inputs");
  }
  const SigmaPoints sp = ukf_sigma_points(pred.mean, pred.cov, kappa);
  if (!sp.ok) return diverged_state(pred, DivergenceReason::cholesky, "sigma-point Cholesky failed");
  const Index m = sp.points.cols();
  const Index py = y.size();

  Eigen::MatrixXd mapped(py, m);
  for (Index j = 0; j < m; ++j) {
    Eigen::VectorXd v = mean_fn(sp.points.col(j));
    if (v.size() != py) throw DimensionError("observation", py, v.size());
    mapped.col(j) = v;
  }
  Eigen::VectorXd mu_hat = mapped * sp.weights;
  if (nonnegative && sp.weights[0] < 0.0) {
    // A negative central weight can push a mean rate to or below zero; such
    // components fall back to the equal-weight mean of the outer points.
    const Eigen::VectorXd outer = mapped.rightCols(mapped.cols() - 1).rowwise().mean();
    for (Index i = 0; i < py; ++i)
      if (!(mu_hat[i] > 0.0) && outer[i] > 0.0) mu_hat[i] = outer[i];
  }
  if (!mu_hat.allFinite()) return diverged_state(pred, DivergenceReason::non_finite, "non-finite sigma-point rates");

  FilterState s;
  s.mean_pred = pred.mean;
  s.cov_pred = pred.cov;
  s.innovation = y - mu_hat;
  if (py == 0) {
    s.mean_filt = pred.mean;
    s.cov_filt = pred.cov;
    return s;
  }
  const Eigen::VectorXd r = variance_fn(mu_hat);
  if (!r.allFinite() || (r.array() <= 0.0).any()) {
    return diverged_state(pred, DivergenceReason::non_finite, "invalid observation variance");
  }
  // Deviations are taken about the central sigma point so only the positive
  // weights w_1..w_2n enter; S then stays positive definite for any kappa.
  // Because the state points are symmetric about the mean, C is unchanged and
  // S gains the PSD term (mu_hat - Y_0)(mu_hat - Y_0)'.
  const Index q = m - 1;
  const double w = sp.weights[1];
  const Eigen::MatrixXd z = (mapped.rightCols(q).colwise() - mapped.col(0)) * std::sqrt(w);  // p_y x 2n
  const Eigen::MatrixXd xdev = (sp.points.rightCols(q).colwise() - pred.mean) * std::sqrt(w);  // pd x 2n
  const Eigen::MatrixXd c = xdev * z.transpose();                                               // pd x p_y
  const Eigen::VectorXd r_inv = r.cwiseInverse();

  // g = S^-1 C' with S = Z Z' + R.
  Eigen::MatrixXd g;
  if (py <= q) {
    Eigen::MatrixXd s_mat = z * z.transpose();
    s_mat.diagonal() += r;
    linalg::symmetrize(s_mat);
    auto llt = linalg::robust_llt(s_mat);
    if (!llt) return diverged_state(pred, DivergenceReason::singular, "singular innovation covariance");
    g = llt->solve(c.transpose());
  } else {
    const Eigen::MatrixXd a = r_inv.asDiagonal() * z;  // R^-1 Z
    Eigen::MatrixXd small = Eigen::MatrixXd::Identity(q, q) + z.transpose() * a;
    linalg::symmetrize(small);
    auto llt = linalg::robust_llt(small);
    if (!llt) return diverged_state(pred, DivergenceReason::singular, "singular innovation covariance");
    const Eigen::MatrixXd t = r_inv.asDiagonal() * c.transpose();
    g = t - a * llt->solve(z.transpose() * t);
  }
  s.mean_filt = pred.mean + g.transpose() * s.innovation;
  s.cov_filt = pred.cov - c * g;
  linalg::symmetrize(s.cov_filt);
  check_finite_output(s);
  return s;
}

namespace {

/// Applies the variance floor, optionally falling back to the previous R.
Eigen::VectorXd condition_variance(Eigen::VectorXd r, const FilterOptions& options, const Eigen::VectorXd* previous) {
  const bool can_reuse = options.reuse_previous_variance && previous && previous->size() == r.size();
  for (Index i = 0; i < r.size(); ++i) {
    if (!std::isfinite(r[i])) {
      if (can_reuse) r[i] = (*previous)[i];
      continue;
    }
    if (r[i] < options.variance_floor) r[i] = options.variance_floor;
  }
  return r;
}

}  // namespace

FilterResult filter_pass(const MeasurementModel& model, const Eigen::MatrixXd& sigma, const FilterOptions& options,
                         const Eigen::VectorXd& x0, const Eigen::MatrixXd& v0) {
  const Index n = model.state_dim();
  if (x0.size() != n) throw DimensionError("initial mean", n, x0.size());
  if (v0.rows() != n || v0.cols() != n) throw DimensionError("initial covariance", n, v0.rows());
  if (sigma.rows() != n || sigma.cols() != n) throw DimensionError("sigma", n, sigma.rows());
  const double kappa = options.kappa ? *options.kappa : 3.0 - static_cast<double>(n);

  FilterResult out;
  out.states.reserve(static_cast<std::size_t>(model.intervals()) + 1);
  FilterState init;
  init.mean_pred = x0;
  init.cov_pred = v0;
  init.mean_filt = x0;
  init.cov_filt = v0;
  out.states.push_back(std::move(init));

  Eigen::VectorXd previous_r;
  for (int k = 1; k <= model.intervals(); ++k) {
    const FilterState& prev = out.states.back();
    const Prediction pred = predict(prev.mean_filt, prev.cov_filt, sigma);
    const Eigen::VectorXd y = model.observed(k);
    FilterState state;
    if (options.kind == FilterKind::ekf) {
      Eigen::VectorXd x_lin = pred.mean;
      Eigen::VectorXd first_innovation;
      for (int it = 0; it < options.update_iterations; ++it) {
        const Eigen::VectorXd mu = model.mean(x_lin, k);
        const Eigen::MatrixXd h = model.jacobian(x_lin, k);
        const Eigen::VectorXd r =
            condition_variance(model.variance(mu, k), options, previous_r.size() ? &previous_r : nullptr);
        const Eigen::VectorXd mu_at_pred = mu + h * (pred.mean - x_lin);
        state = ekf_update(pred, y, mu_at_pred, h, r);
        if (it == 0) {
          first_innovation = state.innovation;
          previous_r = r;
        }
        if (state.diverged) break;
        x_lin = state.mean_filt;
      }
      if (!state.diverged) state.innovation = first_innovation;
    } else {
      const VectorMap mean_fn = [&](const Eigen::VectorXd& x) { return model.mean(x, k); };
      const Eigen::VectorXd* prev_r = previous_r.size() ? &previous_r : nullptr;
      Eigen::VectorXd used_r;
      const VectorMap variance_fn = [&](const Eigen::VectorXd& mu) {
        used_r = condition_variance(model.variance(mu, k), options, prev_r);
        return used_r;
      };
      state = ukf_update(pred, y, mean_fn, variance_fn, kappa, model.nonnegative_mean());
      if (used_r.size()) previous_r = used_r;
    }
    state.k = k;
    out.states.push_back(std::move(state));
    if (out.states.back().diverged) break;
  }
  return out;
}

FilterResult filter_pass(const NetworkPanel& panel, const Parameters& params, const ModelConfig& config,
                         const Eigen::VectorXd& x0, const Eigen::MatrixXd& v0) {
  NetworkMeasurement model(panel, params, config.dim, config.family);
  return filter_pass(model, params.sigma, config.filter, x0, v0);
}

LatentTrajectory filtered_trajectory(const FilterResult& result, int nodes, int dim) {
  LatentTrajectory t;
  t.nodes = nodes;
  t.dim = dim;
  t.kind = MomentKind::filtered;
  for (const auto& s : result.states) {
    if (s.diverged) break;
    t.means.push_back(s.mean_filt);
    t.covariances.push_back(s.cov_filt);
  }
  return t;
}

}  // namespace latentrem
