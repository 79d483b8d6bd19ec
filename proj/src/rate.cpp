#include "latentrem/rate.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace latentrem {

RateModel::RateModel(const NetworkPanel& panel, const Parameters& params, int dim)
    : nodes_(panel.nodes()), dim_(dim), intervals_(panel.intervals()), dyads_(panel.dyads()) {
  if (dim < 1) throw Error(ErrorCode::invalid_argument, "latent dimension must be at least 1");
  const int p = nodes_;
  if (params.sender_effects.size() != 0 && params.sender_effects.size() != p) {
    throw DimensionError("sender effects", p, params.sender_effects.size());
  }
  if (params.receiver_effects.size() != 0 && params.receiver_effects.size() != p) {
    throw DimensionError("receiver effects", p, params.receiver_effects.size());
  }
  const auto& covs = panel.covariates();
  if (params.fixed_coeffs.size() != 0 && params.fixed_coeffs.size() != static_cast<Index>(covs.size())) {
    throw DimensionError("fixed coefficients", static_cast<long>(covs.size()), params.fixed_coeffs.size());
  }
  const Index py = dyads_.size();
  base_.resize(intervals_, py);
  active_.resize(intervals_, py);
  for (int k = 1; k <= intervals_; ++k) {
    for (Index r = 0; r < py; ++r) {
      const Dyad& dy = dyads_.dyad(r);
      const double c = panel.exposure(k, dy.sender);
      if (c <= 0.0) {
        active_(k - 1, r) = 0;
        base_(k - 1, r) = 0.0;
        continue;
      }
      active_(k - 1, r) = 1;
      double eta = std::log(c) + params.intercept;
      if (params.sender_effects.size() != 0) eta += params.sender_effects[dy.sender];
      if (params.receiver_effects.size() != 0) eta += params.receiver_effects[dy.receiver];
      for (Index c2 = 0; c2 < params.fixed_coeffs.size(); ++c2) {
        eta += params.fixed_coeffs[c2] * covs[static_cast<std::size_t>(c2)].values(k - 1, r);
      }
      base_(k - 1, r) = eta;
    }
  }
}

void RateModel::check_state(const Eigen::VectorXd& x, int k) const {
  if (x.size() != state_dim()) throw DimensionError("latent state (p*d)", state_dim(), x.size());
  if (k < 1 || k > intervals_) throw DimensionError("interval", intervals_, k);
}

double squared_distance(const Eigen::VectorXd& x, int i, int j, int dim) {
  return (x.segment(static_cast<Index>(i) * dim, dim) - x.segment(static_cast<Index>(j) * dim, dim)).squaredNorm();
}

std::vector<Index> RateModel::active_rows(int k) const {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(dyad_count()));
  for (Index r = 0; r < dyad_count(); ++r)
    if (active(k, r)) rows.push_back(r);
  return rows;
}

Eigen::VectorXd RateModel::rate(const Eigen::VectorXd& x, int k) const {
  check_state(x, k);
  Eigen::VectorXd mu(dyad_count());
  for (Index r = 0; r < dyad_count(); ++r) {
    if (!active(k, r)) {
      mu[r] = 0.0;
      continue;
    }
    const Dyad& dy = dyads_.dyad(r);
    mu[r] = std::exp(base_(k - 1, r) - squared_distance(x, dy.sender, dy.receiver, dim_));
  }
  return mu;
}

Eigen::VectorXd RateModel::rate_rows(const Eigen::VectorXd& x, int k, const std::vector<Index>& rows) const {
  check_state(x, k);
  Eigen::VectorXd mu(static_cast<Index>(rows.size()));
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const Index r = rows[a];
    if (!active(k, r)) {
      mu[static_cast<Index>(a)] = 0.0;
      continue;
    }
    const Dyad& dy = dyads_.dyad(r);
    mu[static_cast<Index>(a)] = std::exp(base_(k - 1, r) - squared_distance(x, dy.sender, dy.receiver, dim_));
  }
  return mu;
}

Eigen::MatrixXd RateModel::jacobian_rows(const Eigen::VectorXd& x, int k, const std::vector<Index>& rows) const {
  check_state(x, k);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Index>(rows.size()), state_dim());
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const Index r = rows[a];
    if (!active(k, r)) continue;
    const Dyad& dy = dyads_.dyad(r);
    const auto xi = x.segment(static_cast<Index>(dy.sender) * dim_, dim_);
    const auto xj = x.segment(static_cast<Index>(dy.receiver) * dim_, dim_);
    const Eigen::VectorXd diff = xj - xi;
    const double mu = std::exp(base_(k - 1, r) - diff.squaredNorm());
    const Eigen::VectorXd g = 2.0 * mu * diff;
    h.block(static_cast<Index>(a), static_cast<Index>(dy.sender) * dim_, 1, dim_) = g.transpose();
    h.block(static_cast<Index>(a), static_cast<Index>(dy.receiver) * dim_, 1, dim_) = -g.transpose();
  }
  return h;
}

Eigen::MatrixXd RateModel::jacobian(const Eigen::VectorXd& x, int k) const {
  std::vector<Index> all(static_cast<std::size_t>(dyad_count()));
  for (Index r = 0; r < dyad_count(); ++r) all[static_cast<std::size_t>(r)] = r;
  return jacobian_rows(x, k, all);
}

namespace {
int infer_dim(const Eigen::VectorXd& x, const NetworkPanel& panel) {
  const Index p = panel.nodes();
  if (x.size() == 0 || x.size() % p != 0) throw DimensionError("latent state (multiple of p)", p, x.size());
  return static_cast<int>(x.size() / p);
}
}  // namespace

RateVector rate(const Eigen::VectorXd& x, const Parameters& params, const NetworkPanel& panel, int k) {
  RateModel model(panel, params, infer_dim(x, panel));
  return {model.rate(x, k), panel.dyads()};
}

Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const Parameters& params, const NetworkPanel& panel, int k) {
  RateModel model(panel, params, infer_dim(x, panel));
  return model.jacobian(x, k);
}

Eigen::VectorXd family_variance(const Eigen::VectorXd& mu, const Family& family) {
  if (family.kind == Family::Kind::poisson) return mu;
  return (mu.array() + family.dispersion * mu.array().square()).matrix();
}

FamilyMoments family_moments(const Eigen::VectorXd& mu, const Family& family) {
  if (family.kind == Family::Kind::negative_binomial && !(family.dispersion >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "negative binomial dispersion must be non-negative");
  }
  if ((mu.array() < 0.0).any()) throw Error(ErrorCode::invalid_argument, "rates must be non-negative");
  return {mu, family_variance(mu, family)};
}

double family_log_pmf(double y, double mu, const Family& family) {
  if (mu <= 0.0) return y == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (family.kind == Family::Kind::poisson || family.dispersion == 0.0) {
    return y * std::log(mu) - mu - std::lgamma(y + 1.0);
  }
  const double r = 1.0 / family.dispersion;
  return std::lgamma(y + r) - std::lgamma(r) - std::lgamma(y + 1.0) + r * std::log(r / (r + mu)) +
         y * std::log(mu / (r + mu));
}

namespace {

Eigen::MatrixXd stack_points(const LatentTrajectory& t) {
  Eigen::MatrixXd pts(static_cast<Index>(t.means.size()) * t.nodes, t.dim);
  Index row = 0;
  for (const auto& m : t.means)
    for (int i = 0; i < t.nodes; ++i) pts.row(row++) = m.segment(static_cast<Index>(i) * t.dim, t.dim).transpose();
  return pts;
}

Alignment align_points(const LatentTrajectory& est, const Eigen::MatrixXd& ref_pts) {
  const int d = est.dim;
  const Eigen::MatrixXd est_pts = stack_points(est);
  const Eigen::RowVectorXd est_c = est_pts.colwise().mean();
  const Eigen::RowVectorXd ref_c = ref_pts.colwise().mean();
  const Eigen::MatrixXd xc = est_pts.rowwise() - est_c;
  const Eigen::MatrixXd yc = ref_pts.rowwise() - ref_c;

  Alignment out;
  out.rotation = Eigen::MatrixXd::Identity(d, d);
  if (yc.norm() <= 1e-12 * std::max(1.0, ref_pts.norm())) {
    out.degenerate_reference = true;
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(xc.transpose() * yc, Eigen::ComputeFullU | Eigen::ComputeFullV);
    // Row form: y ~ x Q with Q = U V'; column form uses R = Q'.
    out.rotation = (svd.matrixU() * svd.matrixV().transpose()).transpose();
  }
  out.translation = ref_c.transpose() - out.rotation * est_c.transpose();

  const Index p = est.nodes;
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(p * d, p * d);
  for (Index i = 0; i < p; ++i) big.block(i * d, i * d, d, d) = out.rotation;
  Eigen::VectorXd shift(p * d);
  for (Index i = 0; i < p; ++i) shift.segment(i * d, d) = out.translation;

  out.trajectory = est;
  for (auto& m : out.trajectory.means) m = big * m + shift;
  for (auto& v : out.trajectory.covariances) v = big * v * big.transpose();
  for (auto& b : out.trajectory.backward_gains) b = big * b * big.transpose();
  return out;
}

}  // namespace

Alignment align_procrustes(const LatentTrajectory& est, const LatentTrajectory& ref) {
  if (est.nodes != ref.nodes) throw DimensionError("nodes", ref.nodes, est.nodes);
  if (est.dim != ref.dim) throw DimensionError("latent dimension", ref.dim, est.dim);
  if (est.means.size() != ref.means.size()) {
    throw DimensionError("states", static_cast<long>(ref.means.size()), static_cast<long>(est.means.size()));
  }
  return align_points(est, stack_points(ref));
}

Alignment align_procrustes(const LatentTrajectory& est, const Eigen::MatrixXd& anchor) {
  if (anchor.rows() != est.nodes) throw DimensionError("nodes", est.nodes, anchor.rows());
  if (anchor.cols() != est.dim) throw DimensionError("latent dimension", est.dim, anchor.cols());
  Eigen::MatrixXd ref_pts(static_cast<Index>(est.means.size()) * est.nodes, est.dim);
  for (std::size_t k = 0; k < est.means.size(); ++k) ref_pts.middleRows(static_cast<Index>(k) * est.nodes, est.nodes) = anchor;
  return align_points(est, ref_pts);
}

}  // namespace latentrem
