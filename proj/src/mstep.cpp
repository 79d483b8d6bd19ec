#include "latentrem/mstep.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "latentrem/linalg.hpp"

namespace latentrem {

namespace {
constexpr double kOffsetFloor = 1e-12;
}

Eigen::MatrixXd expected_increment_moment(const LatentTrajectory& smoothed,
                                          const std::vector<Eigen::MatrixXd>& lag_covs) {
  const int n = smoothed.intervals();
  if (n < 1) throw Error(ErrorCode::invalid_argument, "trajectory has no intervals");
  if (static_cast<int>(lag_covs.size()) != n) {
    throw DimensionError("lag-one covariances", n, static_cast<long>(lag_covs.size()));
  }
  const Index m = smoothed.state_dim();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k <= n; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Eigen::VectorXd dx = smoothed.means[ku] - smoothed.means[ku - 1];
    const Eigen::MatrixXd& lag = lag_covs[ku - 1];
    acc += smoothed.covariances[ku] + smoothed.covariances[ku - 1] - lag - lag.transpose() + dx * dx.transpose();
  }
  acc /= static_cast<double>(n);
  linalg::symmetrize(acc);
  return acc;
}

Eigen::MatrixXd project_sigma(const Eigen::MatrixXd& raw, SigmaStructure structure, int nodes, int dim) {
  const Index m = raw.rows();
  if (raw.cols() != m) throw DimensionError("sigma columns", m, raw.cols());
  if (m != static_cast<Index>(nodes) * dim) throw DimensionError("sigma (p*d)", static_cast<long>(nodes) * dim, m);
  const Eigen::MatrixXd psd = linalg::project_psd(linalg::symmetrized(raw));
  switch (structure) {
    case SigmaStructure::full:
      return psd;
    case SigmaStructure::diagonal:
      return psd.diagonal().asDiagonal();
    case SigmaStructure::spherical:
      return Eigen::MatrixXd::Identity(m, m) * psd.diagonal().mean();
    case SigmaStructure::per_node_spherical: {
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, m);
      for (int i = 0; i < nodes; ++i) {
        const Index o = static_cast<Index>(i) * dim;
        const double s = psd.diagonal().segment(o, dim).mean();
        out.block(o, o, dim, dim).diagonal().setConstant(s);
      }
      return out;
    }
  }
  return psd;
}

Eigen::MatrixXd sigma_mle(const LatentTrajectory& smoothed, const std::vector<Eigen::MatrixXd>& lag_covs,
                          SigmaStructure structure) {
  return project_sigma(expected_increment_moment(smoothed, lag_covs), structure, smoothed.nodes, smoothed.dim);
}

double sigma_spherical_summary(const Eigen::MatrixXd& sigma) {
  return sigma.size() == 0 ? 0.0 : sigma.diagonal().mean();
}

PairMoments pair_difference(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int i, int j, int dim) {
  const Index a = static_cast<Index>(i) * dim;
  const Index b = static_cast<Index>(j) * dim;
  PairMoments out;
  out.mean = mean.segment(a, dim) - mean.segment(b, dim);
  out.cov = cov.block(a, a, dim, dim) + cov.block(b, b, dim, dim) - cov.block(a, b, dim, dim) -
            cov.block(b, a, dim, dim);
  linalg::symmetrize(out.cov);
  return out;
}

double expected_negative_distance(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int i, int j, int dim) {
  const PairMoments z = pair_difference(mean, cov, i, j, dim);
  return -(z.mean.squaredNorm() + z.cov.trace());
}

double offset_expectation(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int i, int j, int dim,
                          OffsetMethod method, std::optional<double> kappa) {
  if (mean.size() != cov.rows() || cov.rows() != cov.cols()) {
    throw DimensionError("latent covariance", mean.size(), cov.rows());
  }
  switch (method) {
    case OffsetMethod::taylor2: {
      // Work on the log scale so far-apart pairs do not underflow to the floor.
      const PairMoments z = pair_difference(mean, cov, i, j, dim);
      const double factor = 1.0 + 2.0 * z.mean.dot(z.cov * z.mean) - z.cov.trace();
      return -z.mean.squaredNorm() + std::log(std::max(kOffsetFloor, factor));
    }
    case OffsetMethod::exact: {
      const PairMoments z = pair_difference(mean, cov, i, j, dim);
      const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(dim, dim) + 2.0 * z.cov;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      const double logdet = ldlt.vectorD().array().log().sum();
      return -0.5 * logdet - z.mean.dot(ldlt.solve(z.mean));
    }
    case OffsetMethod::unscented: {
      const Index a = static_cast<Index>(i) * dim;
      const Index b = static_cast<Index>(j) * dim;
      const int m = 2 * dim;
      Eigen::VectorXd mu(m);
      mu << mean.segment(a, dim), mean.segment(b, dim);
      Eigen::MatrixXd v(m, m);
      v << cov.block(a, a, dim, dim), cov.block(a, b, dim, dim), cov.block(b, a, dim, dim), cov.block(b, b, dim, dim);
      linalg::symmetrize(v);
      const double kap = kappa ? *kappa : 3.0 - m;
      const double scale = m + kap;
      if (!(scale > 0.0)) throw Error(ErrorCode::invalid_argument, "unscented offset needs 2d + kappa > 0");
      // Symmetric square root tolerates a singular marginal.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v * scale);
      const Eigen::MatrixXd root =
          es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
      auto neg_dist = [&](const Eigen::VectorXd& p) { return -(p.head(dim) - p.tail(dim)).squaredNorm(); };
      const double centre = neg_dist(mu);
      double acc = kap / scale;
      const double w = 0.5 / scale;
      for (int c = 0; c < m; ++c) {
        acc += w * std::exp(neg_dist(mu + root.col(c)) - centre);
        acc += w * std::exp(neg_dist(mu - root.col(c)) - centre);
      }
      return centre + std::log(std::max(kOffsetFloor, acc));
    }
  }
  return 0.0;
}

namespace {

struct Design {
  Eigen::MatrixXd x;       // rows: active (k, dyad) pairs
  Eigen::VectorXd y;
  Eigen::VectorXd offset;  // log C + latent offset
  Index col_intercept = -1;
  Index col_fixed = 0, n_fixed = 0;
  Index col_sender = 0, n_sender = 0;
  Index col_receiver = 0, n_receiver = 0;
  std::vector<int> free_senders, free_receivers;
};

// Sum-to-zero effects for m free nodes use m-1 parameters theta with
// effect = Z theta, Z = [I; -1']. Returns the row of Z for position `pos`.
void write_effect(Eigen::MatrixXd& x, Index row, Index col, Index m, Index pos) {
  if (m < 2) return;
  if (pos < m - 1) {
    x(row, col + pos) += 1.0;
  } else {
    x.row(row).segment(col, m - 1).array() -= 1.0;
  }
}

Eigen::MatrixXd zmat(Index m) {
  if (m < 2) return Eigen::MatrixXd::Zero(m, 0);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(m, m - 1);
  z.topRows(m - 1).setIdentity();
  z.row(m - 1).setConstant(-1.0);
  return z;
}

double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double dev = 0.0;
  for (Index r = 0; r < y.size(); ++r) {
    const double yi = y[r];
    const double mi = mu[r];
    dev += (yi > 0.0 ? yi * std::log(yi / mi) : 0.0) - (yi - mi);
  }
  return 2.0 * dev;
}

}  // namespace

RegressionResult mstep_regression(const NetworkPanel& panel, const Eigen::MatrixXd& offsets, const EffectSpec& effects,
                                  const Parameters& start) {
  const int p = panel.nodes();
  const int n = panel.intervals();
  const Index py = panel.dyad_count();
  if (offsets.rows() != n) throw DimensionError("offset intervals", n, offsets.rows());
  if (offsets.cols() != py) throw DimensionError("offset dyads", py, offsets.cols());
  const auto& covs = panel.covariates();

  RegressionResult out;
  Design des;

  // Effects of nodes that never send (receive) are not identified; pin them at 0.
  Eigen::VectorXd sent = Eigen::VectorXd::Zero(p), received = Eigen::VectorXd::Zero(p);
  for (Index r = 0; r < py; ++r) {
    const Dyad& dy = panel.dyads().dyad(r);
    const double tot = panel.counts().col(r).sum();
    sent[dy.sender] += tot;
    received[dy.receiver] += tot;
  }
  if (effects.sender) {
    for (int i = 0; i < p; ++i) (sent[i] > 0.0 ? des.free_senders : out.pinned_senders).push_back(i);
  }
  if (effects.receiver) {
    for (int i = 0; i < p; ++i) (received[i] > 0.0 ? des.free_receivers : out.pinned_receivers).push_back(i);
  }
  std::vector<int> sender_pos(static_cast<std::size_t>(p), -1), receiver_pos(static_cast<std::size_t>(p), -1);
  for (std::size_t a = 0; a < des.free_senders.size(); ++a) sender_pos[static_cast<std::size_t>(des.free_senders[a])] = static_cast<int>(a);
  for (std::size_t a = 0; a < des.free_receivers.size(); ++a) receiver_pos[static_cast<std::size_t>(des.free_receivers[a])] = static_cast<int>(a);

  Index q = 0;
  if (effects.intercept) des.col_intercept = q++;
  des.col_fixed = q;
  des.n_fixed = effects.covariates ? static_cast<Index>(covs.size()) : 0;
  q += des.n_fixed;
  const auto ms = static_cast<Index>(des.free_senders.size());
  const auto mr = static_cast<Index>(des.free_receivers.size());
  des.col_sender = q;
  des.n_sender = ms >= 2 ? ms - 1 : 0;
  q += des.n_sender;
  des.col_receiver = q;
  des.n_receiver = mr >= 2 ? mr - 1 : 0;
  q += des.n_receiver;

  Index rows = 0;
  for (int k = 1; k <= n; ++k)
    for (Index r = 0; r < py; ++r)
      if (panel.exposure(k, panel.dyads().dyad(r).sender) > 0.0) ++rows;

  des.x = Eigen::MatrixXd::Zero(rows, q);
  des.y.resize(rows);
  des.offset.resize(rows);
  Index row = 0;
  for (int k = 1; k <= n; ++k) {
    for (Index r = 0; r < py; ++r) {
      const Dyad& dy = panel.dyads().dyad(r);
      const double c = panel.exposure(k, dy.sender);
      if (c <= 0.0) continue;
      des.y[row] = panel.count(k, r);
      des.offset[row] = std::log(c) + offsets(k - 1, r);
      auto xr = des.x.row(row);
      if (des.col_intercept >= 0) xr[des.col_intercept] = 1.0;
      for (Index f = 0; f < des.n_fixed; ++f) xr[des.col_fixed + f] = covs[static_cast<std::size_t>(f)].values(k - 1, r);
      if (effects.sender && sender_pos[static_cast<std::size_t>(dy.sender)] >= 0) {
        write_effect(des.x, row, des.col_sender, ms, sender_pos[static_cast<std::size_t>(dy.sender)]);
      }
      if (effects.receiver && receiver_pos[static_cast<std::size_t>(dy.receiver)] >= 0) {
        write_effect(des.x, row, des.col_receiver, mr, receiver_pos[static_cast<std::size_t>(dy.receiver)]);
      }
      ++row;
    }
  }

  const Eigen::MatrixXd zs = zmat(ms);
  const Eigen::MatrixXd zr = zmat(mr);
  double var_s = start.sender_variance;
  double var_r = start.receiver_variance;
  if (!(var_s > 0.0) || !(var_r > 0.0)) throw Error(ErrorCode::invalid_argument, "effect variances must be positive");
  Eigen::MatrixXd pen = Eigen::MatrixXd::Zero(q, q);
  if (des.n_sender > 0) pen.block(des.col_sender, des.col_sender, des.n_sender, des.n_sender) = zs.transpose() * zs / var_s;
  if (des.n_receiver > 0) {
    pen.block(des.col_receiver, des.col_receiver, des.n_receiver, des.n_receiver) = zr.transpose() * zr / var_r;
  }

  // Warm start from the current parameters.
  Eigen::VectorXd b = Eigen::VectorXd::Zero(q);
  if (des.col_intercept >= 0) b[des.col_intercept] = start.intercept;
  if (des.n_fixed > 0 && start.fixed_coeffs.size() == des.n_fixed) b.segment(des.col_fixed, des.n_fixed) = start.fixed_coeffs;
  auto centred_theta = [](const Eigen::VectorXd& eff, const std::vector<int>& free, Index len) {
    Eigen::VectorXd v(static_cast<Index>(free.size()));
    for (std::size_t a = 0; a < free.size(); ++a) v[static_cast<Index>(a)] = eff[free[a]];
    v.array() -= v.mean();
    return Eigen::VectorXd(v.head(len));
  };
  if (des.n_sender > 0 && start.sender_effects.size() == p) {
    b.segment(des.col_sender, des.n_sender) = centred_theta(start.sender_effects, des.free_senders, des.n_sender);
  }
  if (des.n_receiver > 0 && start.receiver_effects.size() == p) {
    b.segment(des.col_receiver, des.n_receiver) = centred_theta(start.receiver_effects, des.free_receivers, des.n_receiver);
  }

  auto objective = [&](const Eigen::VectorXd& beta, Eigen::VectorXd* mu_out) {
    Eigen::VectorXd mu = (des.offset + des.x * beta).array().exp().matrix();
    if (mu_out) *mu_out = mu;
    return poisson_deviance(des.y, mu) + beta.dot(pen * beta);
  };

  Eigen::VectorXd mu;
  double dev = objective(b, &mu);
  if (!std::isfinite(dev) && des.col_intercept >= 0) {
    b.setZero();
    const double ysum = des.y.sum();
    const double esum = des.offset.array().exp().sum();
    if (ysum > 0.0 && esum > 0.0) b[des.col_intercept] = std::log(ysum / esum);
    dev = objective(b, &mu);
  }
  if (!std::isfinite(dev)) throw Error(ErrorCode::numerical_failure, "regression deviance is not finite at the start");
  out.deviance_trace.push_back(dev);

  constexpr int kMaxIter = 100;
  constexpr double kTol = 1e-10;
  bool converged = q == 0;
  Eigen::MatrixXd info = pen;
  for (int it = 1; it <= kMaxIter && !converged; ++it) {
    const Eigen::MatrixXd xw = des.x.transpose() * mu.asDiagonal();
    info = xw * des.x + pen;
    const Eigen::VectorXd grad = des.x.transpose() * (des.y - mu) - pen * b;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
      throw Error(ErrorCode::numerical_failure, "regression information matrix is singular");
    }
    const Eigen::VectorXd step = ldlt.solve(grad);
    double t = 1.0;
    Eigen::VectorXd b_new, mu_new;
    double dev_new = 0.0;
    for (int h = 0; h < 30; ++h) {
      b_new = b + t * step;
      dev_new = objective(b_new, &mu_new);
      if (std::isfinite(dev_new) && dev_new <= dev + 1e-12 * std::abs(dev)) break;
      t *= 0.5;
    }
    if (!std::isfinite(dev_new)) throw Error(ErrorCode::numerical_failure, "regression step produced a non-finite deviance");
    const double change = std::abs(dev_new - dev) / (std::abs(dev_new) + 0.1);
    b = b_new;
    mu = mu_new;
    dev = dev_new;
    out.deviance_trace.push_back(dev);
    out.iterations = it;
    if (change < kTol) converged = true;
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "regression did not converge in " << kMaxIter << " iterations; deviance trace:";
    for (double d : out.deviance_trace) msg << ' ' << d;
    throw Error(ErrorCode::non_convergence, msg.str());
  }

  const Eigen::MatrixXd fisher = des.x.transpose() * mu.asDiagonal() * des.x;
  info = fisher + pen;
  Eigen::MatrixXd cov_b = Eigen::MatrixXd::Zero(q, q);
  if (q > 0) {
    cov_b = info.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
    out.effective_df = (cov_b * fisher).trace();
  }

  out.deviance = poisson_deviance(des.y, mu);
  out.intercept = des.col_intercept >= 0 ? b[des.col_intercept] : 0.0;
  out.fixed_coeffs = des.n_fixed > 0 ? Eigen::VectorXd(b.segment(des.col_fixed, des.n_fixed)) : Eigen::VectorXd();
  out.sender_variance = var_s;
  out.receiver_variance = var_r;

  auto expand = [&](bool enabled, Index col, Index len, Index m, const Eigen::MatrixXd& z, const std::vector<int>& free,
                    double& variance) {
    if (!enabled) return Eigen::VectorXd();
    Eigen::VectorXd eff = Eigen::VectorXd::Zero(p);
    if (m == 0) return eff;
    Eigen::VectorXd e_free = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd post_var = Eigen::VectorXd::Zero(m);
    if (len > 0) {
      e_free = z * b.segment(col, len);
      post_var = (z * cov_b.block(col, col, len, len) * z.transpose()).diagonal();
    }
    for (Index a = 0; a < m; ++a) eff[free[static_cast<std::size_t>(a)]] = e_free[a];
    if (!effects.fix_effect_variances && len > 0) {
      variance = std::max(1e-8, (e_free.array().square() + post_var.array()).mean());
    }
    return eff;
  };
  out.sender_effects = expand(effects.sender, des.col_sender, des.n_sender, ms, zs, des.free_senders, out.sender_variance);
  out.receiver_effects =
      expand(effects.receiver, des.col_receiver, des.n_receiver, mr, zr, des.free_receivers, out.receiver_variance);
  return out;
}

}  // namespace latentrem
