#include "latentrem/evaluate.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "latentrem/filter.hpp"
#include "latentrem/rate.hpp"
#include "latentrem/simulate.hpp"
#include "latentrem/smoother.hpp"

namespace latentrem {

Eigen::MatrixXd plugin_rates(const NetworkPanel& panel, const Parameters& params, const LatentTrajectory& trajectory) {
  if (trajectory.nodes != panel.nodes()) throw DimensionError("trajectory nodes", panel.nodes(), trajectory.nodes);
  if (trajectory.intervals() != panel.intervals()) {
    throw DimensionError("trajectory intervals", panel.intervals(), trajectory.intervals());
  }
  const RateModel model(panel, params, trajectory.dim);
  Eigen::MatrixXd out(panel.intervals(), panel.dyad_count());
  for (int k = 1; k <= panel.intervals(); ++k) {
    out.row(k - 1) = model.rate(trajectory.means[static_cast<std::size_t>(k)], k).transpose();
  }
  return out;
}

KlEstimate kl_from_rates(const Eigen::MatrixXd& truth_rates, const Eigen::MatrixXd& fit_rates, const Eigen::MatrixXd& y_new) {
  if (truth_rates.rows() != fit_rates.rows() || truth_rates.cols() != fit_rates.cols()) {
    throw DimensionError("fitted rates", truth_rates.size(), fit_rates.size());
  }
  if (y_new.rows() != truth_rates.rows() || y_new.cols() != truth_rates.cols()) {
    throw DimensionError("new counts", truth_rates.size(), y_new.size());
  }
  const Family pois = Family::poisson();
  const Index total = truth_rates.size();
  double sum = 0.0;
  double sumsq = 0.0;
  for (Index c = 0; c < truth_rates.cols(); ++c) {
    for (Index r = 0; r < truth_rates.rows(); ++r) {
      const double y = y_new(r, c);
      const double diff = family_log_pmf(y, truth_rates(r, c), pois) - family_log_pmf(y, fit_rates(r, c), pois);
      sum += diff;
      sumsq += diff * diff;
    }
  }
  KlEstimate out;
  out.terms = total;
  out.value = sum / static_cast<double>(total);
  if (total > 1) {
    const double var = (sumsq - sum * sum / static_cast<double>(total)) / static_cast<double>(total - 1);
    out.standard_error = std::sqrt(std::max(0.0, var) / static_cast<double>(total));
  }
  return out;
}

KlEstimate kl_out_of_fold(const NetworkPanel& design, const LatentTrajectory& fit, const Parameters& fit_params,
                          const LatentTrajectory& truth, const Parameters& truth_params, const Family& truth_family,
                          std::uint64_t seed) {
  if (fit.nodes != truth.nodes || fit.dim != truth.dim) throw DimensionError("fitted trajectory state", truth.state_dim(), fit.state_dim());
  const Eigen::MatrixXd mu_true = plugin_rates(design, truth_params, truth);
  const Eigen::MatrixXd mu_fit = plugin_rates(design, fit_params, fit);
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd y(mu_true.rows(), mu_true.cols());
  for (Index r = 0; r < y.rows(); ++r)
    for (Index c = 0; c < y.cols(); ++c) y(r, c) = draw_count(mu_true(r, c), truth_family, rng);
  return kl_from_rates(mu_true, mu_fit, y);
}

double latent_effective_df(const NetworkPanel& panel, const FitResult& fit) {
  const LatentTrajectory& traj = fit.smoothed;
  if (traj.means.empty()) throw Error(ErrorCode::invalid_argument, "fit has no smoothed trajectory");
  const int n = panel.intervals();
  const NetworkMeasurement net(panel, fit.params, traj.dim, fit.config.family);
  std::vector<Eigen::MatrixXd> hs;
  std::vector<Eigen::VectorXd> cs, rs, ys;
  for (int k = 1; k <= n; ++k) {
    const Eigen::VectorXd& x = traj.means[static_cast<std::size_t>(k)];
    const Eigen::VectorXd mu = net.mean(x, k);
    hs.push_back(net.jacobian(x, k));
    rs.push_back(net.variance(mu, k).cwiseMax(fit.config.filter.variance_floor));
    cs.push_back(Eigen::VectorXd::Zero(mu.size()));
    ys.push_back(Eigen::VectorXd::Zero(mu.size()));
  }
  const AffineMeasurement lin(hs, cs, rs, ys);
  const Index pd = traj.state_dim();
  FilterOptions opts;
  opts.kind = FilterKind::ekf;
  const FilterResult fr = filter_pass(lin, fit.params.sigma, opts, Eigen::VectorXd::Zero(pd),
                                      1e4 * Eigen::MatrixXd::Identity(pd, pd));
  if (fr.diverged()) throw Error(ErrorCode::numerical_failure, "degrees-of-freedom pass failed: " + fr.states.back().diverged.detail);
  const LatentTrajectory sm = smooth_pass(fr, traj.nodes, traj.dim);
  double df = 0.0;
  for (int k = 1; k <= n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Eigen::MatrixXd& h = hs[ku - 1];
    const Eigen::MatrixXd hv = h * sm.covariances[ku];
    df += ((hv.cwiseProduct(h)).rowwise().sum().array() / rs[ku - 1].array()).sum();
  }
  return df;
}

CaicResult caic(const FitResult& fit, const NetworkPanel& panel) {
  if (fit.smoothed.means.empty()) throw Error(ErrorCode::invalid_argument, "fit has no smoothed trajectory");
  if (fit.trace.records.empty()) throw Error(ErrorCode::invalid_argument, "fit has no EM trace");
  const Eigen::MatrixXd mu = plugin_rates(panel, fit.params, fit.smoothed);
  const RateModel model(panel, fit.params, fit.smoothed.dim);
  CaicResult out;
  for (int k = 1; k <= panel.intervals(); ++k) {
    for (Index r = 0; r < panel.dyad_count(); ++r) {
      if (!model.active(k, r)) continue;
      out.log_likelihood += family_log_pmf(panel.count(k, r), mu(k - 1, r), fit.config.family);
    }
  }
  out.regression_df = fit.regression_df;
  out.latent_df = latent_effective_df(panel, fit);
  out.effective_df = out.regression_df + out.latent_df;
  out.caic = -2.0 * out.log_likelihood + 2.0 * out.effective_df;
  return out;
}

std::vector<Residual> residuals(const FitResult& fit, const NetworkPanel& panel) {
  if (fit.smoothed.means.empty()) throw Error(ErrorCode::invalid_argument, "fit has no smoothed trajectory");
  const Eigen::MatrixXd mu = plugin_rates(panel, fit.params, fit.smoothed);
  const RateModel model(panel, fit.params, fit.smoothed.dim);
  std::vector<Residual> out;
  for (int k = 1; k <= panel.intervals(); ++k) {
    const Eigen::VectorXd& x = fit.smoothed.means[static_cast<std::size_t>(k)];
    for (Index r = 0; r < panel.dyad_count(); ++r) {
      if (!model.active(k, r)) continue;
      const Dyad& dy = panel.dyads().dyad(r);
      Residual res;
      res.k = k;
      res.sender = dy.sender;
      res.receiver = dy.receiver;
      res.observed = panel.count(k, r);
      res.fitted = mu(k - 1, r);
      res.variance = family_variance(Eigen::VectorXd::Constant(1, res.fitted), fit.config.family)[0];
      res.distance = std::sqrt(squared_distance(x, dy.sender, dy.receiver, fit.smoothed.dim));
      const double diff = res.observed - res.fitted;
      if (res.variance > 0.0) {
        res.residual = diff / std::sqrt(res.variance);
      } else if (diff > 0.0) {
        res.residual = std::numeric_limits<double>::infinity();
        res.infinite = true;
      }
      out.push_back(res);
    }
  }
  return out;
}

double distance_correlation(const LatentTrajectory& a, const LatentTrajectory& b) {
  if (a.nodes != b.nodes || a.intervals() != b.intervals()) throw DimensionError("trajectory", a.state_dim(), b.state_dim());
  std::vector<double> da, db;
  for (int k = 1; k <= a.intervals(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    for (int i = 0; i < a.nodes; ++i) {
      for (int j = i + 1; j < a.nodes; ++j) {
        da.push_back(std::sqrt(squared_distance(a.means[ku], i, j, a.dim)));
        db.push_back(std::sqrt(squared_distance(b.means[ku], i, j, b.dim)));
      }
    }
  }
  const Eigen::Map<const Eigen::VectorXd> va(da.data(), static_cast<Index>(da.size()));
  const Eigen::Map<const Eigen::VectorXd> vb(db.data(), static_cast<Index>(db.size()));
  const Eigen::VectorXd ca = va.array() - va.mean();
  const Eigen::VectorXd cb = vb.array() - vb.mean();
  const double denom = ca.norm() * cb.norm();
  return denom > 0.0 ? ca.dot(cb) / denom : 0.0;
}

}  // namespace latentrem
