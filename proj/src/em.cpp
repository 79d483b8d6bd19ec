#include "latentrem/em.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "latentrem/linalg.hpp"
#include "latentrem/mstep.hpp"
#include "latentrem/rate.hpp"
#include "latentrem/smoother.hpp"

namespace latentrem {

namespace {

Eigen::VectorXd jitter_locations(int nodes, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.1);
  Eigen::VectorXd x(static_cast<Index>(nodes) * dim);
  for (Index i = 0; i < x.size(); ++i) x[i] = nd(rng);
  return x;
}

Eigen::VectorXd stack(const Eigen::MatrixXd& loc) {
  Eigen::VectorXd x(loc.size());
  for (Index i = 0; i < loc.rows(); ++i) x.segment(i * loc.cols(), loc.cols()) = loc.row(i).transpose();
  return x;
}

bool aggregate_connected(const NetworkPanel& panel) {
  const int p = panel.nodes();
  std::vector<int> parent(static_cast<std::size_t>(p));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
    return a;
  };
  for (Index r = 0; r < panel.dyad_count(); ++r) {
    if (panel.counts().col(r).sum() <= 0.0) continue;
    const Dyad& dy = panel.dyads().dyad(r);
    parent[static_cast<std::size_t>(find(dy.sender))] = find(dy.receiver);
  }
  const int root = find(0);
  for (int i = 1; i < p; ++i)
    if (find(i) != root) return false;
  return true;
}

Parameters default_parameters(const NetworkPanel& panel, const ModelConfig& config, const Eigen::VectorXd& x0,
                              bool is_static) {
  const int p = panel.nodes();
  const Index pd = static_cast<Index>(p) * config.dim;
  Parameters params;
  if (config.effects.sender) params.sender_effects = Eigen::VectorXd::Zero(p);
  if (config.effects.receiver) params.receiver_effects = Eigen::VectorXd::Zero(p);
  if (config.effects.covariates) params.fixed_coeffs = Eigen::VectorXd::Zero(static_cast<Index>(panel.covariates().size()));
  params.sigma = is_static ? Eigen::MatrixXd::Zero(pd, pd)
                           : project_sigma(config.em.sigma_init_scale * Eigen::MatrixXd::Identity(pd, pd),
                                           config.sigma_structure, p, config.dim);
  if (config.effects.intercept) {
    LatentTrajectory point;
    point.nodes = p;
    point.dim = config.dim;
    point.means.assign(static_cast<std::size_t>(panel.intervals()) + 1, x0);
    point.covariances.assign(point.means.size(), Eigen::MatrixXd::Zero(pd, pd));
    params.intercept = closed_form_intercept(panel, params, latent_offsets(panel, point, OffsetMethod::taylor2));
  }
  return params;
}

}  // namespace

Eigen::MatrixXd aggregate_dissimilarity(const NetworkPanel& panel) {
  const int p = panel.nodes();
  Eigen::MatrixXd ytot = Eigen::MatrixXd::Zero(p, p);
  for (Index r = 0; r < panel.dyad_count(); ++r) {
    const Dyad& dy = panel.dyads().dyad(r);
    const double t = panel.counts().col(r).sum();
    ytot(dy.sender, dy.receiver) += t;
    if (!panel.directed()) ytot(dy.receiver, dy.sender) += t;
  }
  const Eigen::VectorXd ctot = panel.exposures().colwise().sum().transpose();
  // log rate per pair, averaged over both directions
  Eigen::MatrixXd lr = Eigen::MatrixXd::Zero(p, p);
  double top = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      if (i == j) continue;
      const double ci = std::max(ctot[i], 1e-12);
      const double cj = std::max(ctot[j], 1e-12);
      const double a = std::log((ytot(i, j) + 0.5) / ci);
      const double b = std::log((ytot(j, i) + 0.5) / cj);
      lr(i, j) = 0.5 * (a + b);
      top = std::max(top, lr(i, j));
    }
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      if (i != j) out(i, j) = top - lr(i, j);
  return out;
}

Eigen::MatrixXd classical_mds(const Eigen::MatrixXd& squared_dissimilarity, int dim) {
  const Index p = squared_dissimilarity.rows();
  if (squared_dissimilarity.cols() != p) throw DimensionError("dissimilarity columns", p, squared_dissimilarity.cols());
  if (dim < 1 || dim > p) throw Error(ErrorCode::invalid_argument, "mds dimension out of range");
  const Eigen::MatrixXd j = Eigen::MatrixXd::Identity(p, p) - Eigen::MatrixXd::Constant(p, p, 1.0 / static_cast<double>(p));
  const Eigen::MatrixXd b = -0.5 * j * squared_dissimilarity * j;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(linalg::symmetrized(b));
  Eigen::MatrixXd out(p, dim);
  for (int c = 0; c < dim; ++c) {
    const Index col = p - 1 - c;  // eigenvalues ascend
    const double lam = std::max(0.0, es.eigenvalues()[col]);
    Eigen::VectorXd v = es.eigenvectors().col(col);
    // Fix the sign so the output is deterministic.
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    out.col(c) = std::sqrt(lam) * v;
  }
  return out;
}

InitialState init_locations(const NetworkPanel& panel, const ModelConfig& config, InitStrategy strategy) {
  const int p = panel.nodes();
  const Index pd = static_cast<Index>(p) * config.dim;
  InitialState st;
  st.strategy = strategy;
  st.cov = config.em.init_cov_scale * Eigen::MatrixXd::Identity(pd, pd);
  auto fallback = [&](const std::string& why) {
    st.mean = jitter_locations(p, config.dim, config.em.seed);
    st.fallback = strategy != InitStrategy::zeros_jitter;
    st.warning = why;
  };
  switch (strategy) {
    case InitStrategy::zeros_jitter:
      st.mean = jitter_locations(p, config.dim, config.em.seed);
      return st;
    case InitStrategy::mds:
      if (!aggregate_connected(panel)) {
        fallback("aggregate network is disconnected; using zeros-jitter start");
        return st;
      }
      st.mean = stack(classical_mds(aggregate_dissimilarity(panel), std::min(config.dim, p)));
      if (st.mean.size() != pd) fallback("latent dimension exceeds node count; using zeros-jitter start");
      return st;
    case InitStrategy::backward_filter: {
      const InitialState seed_state = init_locations(panel, config, InitStrategy::mds);
      const NetworkPanel rev = panel.reversed();
      ModelConfig cfg = config;
      cfg.filter.kind = FilterKind::ekf;
      const Parameters params = default_parameters(rev, cfg, seed_state.mean, false);
      const FilterResult fr = filter_pass(rev, params, cfg, seed_state.mean, st.cov);
      if (fr.diverged()) {
        fallback("backward filter diverged (" + fr.states.back().diverged.detail + "); using zeros-jitter start");
        return st;
      }
      st.mean = fr.states.back().mean_filt;
      return st;
    }
  }
  return st;
}

Eigen::MatrixXd latent_offsets(const NetworkPanel& panel, const LatentTrajectory& moments, OffsetMethod method,
                               std::optional<double> kappa) {
  const int n = panel.intervals();
  if (moments.intervals() != n) throw DimensionError("trajectory intervals", n, moments.intervals());
  if (moments.nodes != panel.nodes()) throw DimensionError("trajectory nodes", panel.nodes(), moments.nodes);
  const Index py = panel.dyad_count();
  Eigen::MatrixXd out(n, py);
  for (int k = 1; k <= n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    for (Index r = 0; r < py; ++r) {
      const Dyad& dy = panel.dyads().dyad(r);
      out(k - 1, r) = offset_expectation(moments.means[ku], moments.covariances[ku], dy.sender, dy.receiver,
                                         moments.dim, method, kappa);
    }
  }
  return out;
}

double closed_form_intercept(const NetworkPanel& panel, const Parameters& params, const Eigen::MatrixXd& offsets) {
  Parameters p0 = params;
  p0.intercept = 0.0;
  const RateModel model(panel, p0, 1);
  double ysum = 0.0;
  double esum = 0.0;
  for (int k = 1; k <= panel.intervals(); ++k) {
    for (Index r = 0; r < panel.dyad_count(); ++r) {
      if (!model.active(k, r)) continue;
      ysum += panel.count(k, r);
      esum += std::exp(model.base_log_rate(k, r) + offsets(k - 1, r));
    }
  }
  if (!(ysum > 0.0)) throw Error(ErrorCode::no_events, "panel has no events");
  if (!(esum > 0.0) || !std::isfinite(esum)) throw Error(ErrorCode::numerical_failure, "expected event total is not finite");
  return std::log(ysum / esum);
}

double q_poisson(const NetworkPanel& panel, const Parameters& params, const LatentTrajectory& moments, int dim,
                 OffsetMethod method) {
  const RateModel model(panel, params, dim);
  double q = 0.0;
  for (int k = 1; k <= panel.intervals(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    for (Index r = 0; r < panel.dyad_count(); ++r) {
      if (!model.active(k, r)) continue;
      const Dyad& dy = panel.dyads().dyad(r);
      const double y = panel.count(k, r);
      const double base = model.base_log_rate(k, r);
      const double off = offset_expectation(moments.means[ku], moments.covariances[ku], dy.sender, dy.receiver, dim, method);
      const double neg_d = expected_negative_distance(moments.means[ku], moments.covariances[ku], dy.sender, dy.receiver, dim);
      q += -std::exp(base + off) + y * (base + neg_d) - std::lgamma(y + 1.0);
    }
  }
  return q;
}

double q_gaussian(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& increment_moment, int intervals) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(linalg::symmetrized(sigma));
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double cutoff = 1e-14 * std::max(1e-300, lam.cwiseAbs().maxCoeff());
  const Eigen::MatrixXd mt = es.eigenvectors().transpose() * increment_moment * es.eigenvectors();
  double logdet = 0.0;
  double quad = 0.0;
  int rank = 0;
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam[i] <= cutoff) continue;
    ++rank;
    logdet += std::log(lam[i]);
    quad += mt(i, i) / lam[i];
  }
  const double n = intervals;
  return -0.5 * n * quad - 0.5 * n * logdet - 0.5 * n * rank * std::log(2.0 * std::numbers::pi);
}

namespace {

double half_log_det(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd& l = llt.matrixLLT();
    return l.diagonal().array().log().sum();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseMax(1e-300).array().log().sum();
}

// E log N(x_0; x_{0|n}, V_{0|n}) under the smoothed law, i.e. the initial-state
// term after its M-step.
double initial_state_term(const LatentTrajectory& smoothed) {
  const auto m = static_cast<double>(smoothed.state_dim());
  return -0.5 * m * (1.0 + std::log(2.0 * std::numbers::pi)) - half_log_det(smoothed.covariances.front());
}

// Entropy of the joint Gaussian over x_0..x_n implied by the RTS recursion:
// x_n ~ N(., V_{n|n}) and x_{k-1} | x_k with covariance V_{k-1|k-1} - B_k V_{k|k-1} B_k'.
double trajectory_entropy(const FilterResult& fr, const LatentTrajectory& smoothed, bool is_static) {
  const auto m = static_cast<double>(smoothed.state_dim());
  const double unit = 0.5 * m * (1.0 + std::log(2.0 * std::numbers::pi));
  const int n = smoothed.intervals();
  double h = unit + half_log_det(smoothed.covariances[static_cast<std::size_t>(n)]);
  if (is_static) return h;  // all states coincide
  for (int k = n; k >= 1; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const Eigen::MatrixXd& b = smoothed.backward_gains[ku - 1];
    Eigen::MatrixXd c = fr.states[ku - 1].cov_filt - b * fr.states[ku].cov_pred * b.transpose();
    linalg::symmetrize(c);
    h += unit + half_log_det(c);
  }
  return h;
}

FitResult run_em(const NetworkPanel& panel, const ModelConfig& config, std::optional<InitialState> init,
                 std::optional<Parameters> start, bool is_static) {
  panel.validate();
  config.validate(panel);
  const int p = panel.nodes();
  const int d = config.dim;
  const Index pd = static_cast<Index>(p) * d;
  const int n = panel.intervals();
  if (n < 1) throw Error(ErrorCode::invalid_argument, "panel has no intervals");
  if (panel.counts().sum() <= 0.0) throw Error(ErrorCode::no_events, "panel has no events");

  FitResult res;
  res.config = config;
  res.static_model = is_static;
  res.initial = init ? *init : init_locations(panel, config, config.em.init);
  if (res.initial.mean.size() != pd) throw DimensionError("initial mean", pd, res.initial.mean.size());
  if (res.initial.cov.rows() != pd || res.initial.cov.cols() != pd) throw DimensionError("initial covariance", pd, res.initial.cov.rows());
  if (!res.initial.warning.empty()) res.warnings.push_back(res.initial.warning);

  Parameters params = start ? *start : default_parameters(panel, config, res.initial.mean, is_static);
  if (is_static) {
    params.sigma = Eigen::MatrixXd::Zero(pd, pd);
  } else if (params.sigma.size() == 0) {
    params.sigma = project_sigma(config.em.sigma_init_scale * Eigen::MatrixXd::Identity(pd, pd), config.sigma_structure, p, d);
  }
  if (params.sigma.rows() != pd || params.sigma.cols() != pd) throw DimensionError("sigma", pd, params.sigma.rows());
  if (config.family.kind == Family::Kind::negative_binomial) params.dispersion = config.family.dispersion;

  Eigen::VectorXd x0 = res.initial.mean;
  Eigen::MatrixXd v0 = res.initial.cov;
  double prev_q = std::numeric_limits<double>::quiet_NaN();
  bool have = false;

  for (int it = 1; it <= config.em.max_iterations; ++it) {
    const FilterResult fr = filter_pass(panel, params, config, x0, v0);
    Divergence div;
    LatentTrajectory smoothed;
    if (fr.diverged()) {
      div = fr.states.back().diverged;
      std::ostringstream msg;
      msg << "filter diverged at interval " << fr.states.back().k << " (" << to_string(div.reason) << ": " << div.detail << ")";
      div.detail = msg.str();
    } else {
      try {
        smoothed = smooth_pass(fr, p, d);
      } catch (const Error& e) {
        div = {DivergenceReason::singular, e.what()};
      }
    }
    if (div) {
      if (!have) {
        throw Error(ErrorCode::divergence,
                    div.detail + " in the first E-step; try another init strategy or a smaller init_cov_scale");
      }
      res.divergence = div;
      res.divergence_iteration = it;
      break;
    }

    const LatentTrajectory filtered = filtered_trajectory(fr, p, d);
    const LatentTrajectory& moments = config.em.offset_from_smoothed ? smoothed : filtered;

    Parameters next = params;
    int reg_iters = 0;
    if (config.em.update_regression) {
      RegressionResult reg;
      try {
        reg = mstep_regression(panel, latent_offsets(panel, moments, config.em.offset_method), config.effects, params);
      } catch (const Error& e) {
        // Moments that put observed events at a zero rate leave no finite
        // likelihood to maximize; this is a breakdown of the E-step.
        if (e.code() != ErrorCode::numerical_failure) throw;
        const std::string what = std::string("regression on E-step moments failed (") + e.what() + ")";
        if (!have) throw Error(ErrorCode::divergence, what + " in the first iteration; try another init strategy or a smaller init_cov_scale");
        res.divergence = {DivergenceReason::non_finite, what};
        res.divergence_iteration = it;
        break;
      }
      next.intercept = reg.intercept;
      next.fixed_coeffs = reg.fixed_coeffs;
      next.sender_effects = reg.sender_effects;
      next.receiver_effects = reg.receiver_effects;
      next.sender_variance = reg.sender_variance;
      next.receiver_variance = reg.receiver_variance;
      res.regression_df = reg.effective_df;
      res.pinned_senders = reg.pinned_senders;
      res.pinned_receivers = reg.pinned_receivers;
      reg_iters = reg.iterations;
    }
    const Eigen::MatrixXd moment = expected_increment_moment(smoothed, lag_one_cov(smoothed));
    if (!is_static && config.em.update_sigma) {
      next.sigma = project_sigma(moment, config.sigma_structure, p, d);
      if (!next.sigma.allFinite()) {
        if (!have) throw Error(ErrorCode::divergence, "sigma update is not finite in the first M-step");
        res.divergence = {DivergenceReason::non_finite, "sigma update is not finite"};
        res.divergence_iteration = it;
        break;
      }
    }

    TraceRecord rec;
    rec.iteration = it;
    rec.q_poisson = q_poisson(panel, next, moments, d, config.em.offset_method);
    rec.q_gaussian = is_static ? 0.0 : q_gaussian(next.sigma, moment, n);
    rec.q_previous = q_poisson(panel, params, moments, d, config.em.offset_method) +
                     (is_static ? 0.0 : q_gaussian(params.sigma, moment, n));
    rec.elbo = rec.q_total() + initial_state_term(smoothed) + trajectory_entropy(fr, smoothed, is_static);
    rec.sigma_spherical = sigma_spherical_summary(next.sigma);
    rec.intercept = next.intercept;
    rec.regression_iterations = reg_iters;
    res.trace.records.push_back(rec);

    params = std::move(next);
    res.params = params;
    res.smoothed = std::move(smoothed);
    res.filtered = filtered;
    res.iterations = it;
    have = true;

    x0 = res.smoothed.means.front();
    v0 = linalg::symmetrized(res.smoothed.covariances.front());

    const double q = rec.q_total();
    if (!std::isfinite(q)) {
      res.divergence = {DivergenceReason::non_finite, "surrogate objective is not finite"};
      res.divergence_iteration = it;
      break;
    }
    if (std::isfinite(prev_q) && std::abs(q - prev_q) <= config.em.tolerance * std::abs(q)) {
      res.converged = true;
      break;
    }
    prev_q = q;
  }
  if (!res.converged && !res.divergence) {
    res.warnings.push_back("EM reached max_iterations without meeting the tolerance");
  }
  return res;
}

}  // namespace

FitResult em_fit(const NetworkPanel& panel, const ModelConfig& config, std::optional<InitialState> init,
                 std::optional<Parameters> start) {
  return run_em(panel, config, std::move(init), std::move(start), false);
}

FitResult static_fit(const NetworkPanel& panel, const ModelConfig& config, std::optional<InitialState> init,
                     std::optional<Parameters> start) {
  return run_em(panel, config, std::move(init), std::move(start), true);
}

}  // namespace latentrem
