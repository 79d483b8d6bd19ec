#include "latentrem/types.hpp"

#include <cmath>
#include <sstream>

namespace latentrem {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::numerical_failure: return "numerical_failure";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::non_convergence: return "non_convergence";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::no_events: return "no_events";
  }
  return "unknown";
}

namespace {
std::string dimension_message(const std::string& axis, long expected, long actual) {
  std::ostringstream os;
  os << "dimension mismatch on axis '" << axis << "': expected " << expected << ", got " << actual;
  return os.str();
}
}  // namespace

DimensionError::DimensionError(const std::string& axis, long expected, long actual)
    : Error(ErrorCode::dimension_mismatch, dimension_message(axis, expected, actual)), axis_(axis) {}

DyadIndex::DyadIndex(int nodes, bool directed) : nodes_(nodes), directed_(directed) {
  if (nodes < 2) throw Error(ErrorCode::invalid_argument, "a panel needs at least two nodes");
  lookup_.assign(static_cast<std::size_t>(nodes) * nodes, -1);
  for (int i = 0; i < nodes; ++i) {
    for (int j = directed ? 0 : i + 1; j < nodes; ++j) {
      if (i == j) continue;
      lookup_[static_cast<std::size_t>(i) * nodes + j] = static_cast<Index>(dyads_.size());
      dyads_.push_back({i, j});
    }
  }
  if (!directed) {
    for (int i = 0; i < nodes; ++i)
      for (int j = 0; j < i; ++j)
        lookup_[static_cast<std::size_t>(i) * nodes + j] = lookup_[static_cast<std::size_t>(j) * nodes + i];
  }
}

Index DyadIndex::row(int sender, int receiver) const {
  if (sender < 0 || receiver < 0 || sender >= nodes_ || receiver >= nodes_) {
    throw Error(ErrorCode::invalid_argument, "node index out of range");
  }
  return lookup_[static_cast<std::size_t>(sender) * nodes_ + receiver];
}

NetworkPanel::NetworkPanel(int nodes, int intervals, bool directed) : dyads_(nodes, directed) {
  if (intervals < 1) throw Error(ErrorCode::invalid_argument, "a panel needs at least one interval");
  counts_ = Eigen::MatrixXd::Zero(intervals, dyads_.size());
  exposure_ = Eigen::MatrixXd::Ones(intervals, nodes);
}

void NetworkPanel::set_count(int k, Index row, double value) {
  if (k < 1 || k > intervals()) throw Error(ErrorCode::invalid_argument, "interval index out of range");
  counts_(k - 1, row) = value;
}

void NetworkPanel::add_count(int k, int sender, int receiver, double value) {
  const Index r = dyads_.row(sender, receiver);
  if (r < 0) throw Error(ErrorCode::invalid_argument, "self-loops are not part of the panel");
  if (k < 1 || k > intervals()) throw Error(ErrorCode::invalid_argument, "interval index out of range");
  counts_(k - 1, r) += value;
}

void NetworkPanel::set_exposure(int k, int node, double value) {
  if (k < 1 || k > intervals()) throw Error(ErrorCode::invalid_argument, "interval index out of range");
  exposure_(k - 1, node) = value;
}

bool NetworkPanel::has_unit_exposure() const { return (exposure_.array() == 1.0).all(); }

void NetworkPanel::validate() const {
  for (Index k = 0; k < counts_.rows(); ++k) {
    for (Index r = 0; r < counts_.cols(); ++r) {
      const double y = counts_(k, r);
      if (!(y >= 0.0) || std::floor(y) != y) {
        std::ostringstream os;
        os << "count at interval " << k + 1 << ", dyad row " << r << " is not a non-negative integer";
        throw Error(ErrorCode::invalid_argument, os.str());
      }
      const int sender = dyads_.dyad(r).sender;
      if (y > 0.0 && exposure_(k, sender) == 0.0) {
        std::ostringstream os;
        os << "node " << sender << " has zero exposure at interval " << k + 1 << " but sends events";
        throw Error(ErrorCode::invalid_argument, os.str());
      }
    }
  }
  if ((exposure_.array() < 0.0).any() || !exposure_.allFinite()) {
    throw Error(ErrorCode::invalid_argument, "exposures must be finite and non-negative");
  }
  for (const auto& c : covariates_) {
    if (c.values.rows() != counts_.rows()) throw DimensionError("covariate '" + c.name + "' intervals", counts_.rows(), c.values.rows());
    if (c.values.cols() != counts_.cols()) throw DimensionError("covariate '" + c.name + "' dyads", counts_.cols(), c.values.cols());
  }
  if (!labels_.empty() && static_cast<int>(labels_.size()) != nodes()) {
    throw DimensionError("node labels", nodes(), static_cast<long>(labels_.size()));
  }
}

NetworkPanel NetworkPanel::reversed() const {
  NetworkPanel out = *this;
  out.counts_ = counts_.colwise().reverse();
  out.exposure_ = exposure_.colwise().reverse();
  for (auto& c : out.covariates_) c.values = c.values.colwise().reverse().eval();
  return out;
}

bool operator==(const NetworkPanel& a, const NetworkPanel& b) {
  if (a.nodes() != b.nodes() || a.directed() != b.directed() || a.intervals() != b.intervals()) return false;
  if (a.counts_ != b.counts_ || a.exposure_ != b.exposure_ || a.labels_ != b.labels_) return false;
  if (a.covariates_.size() != b.covariates_.size()) return false;
  for (std::size_t c = 0; c < a.covariates_.size(); ++c) {
    if (a.covariates_[c].name != b.covariates_[c].name || a.covariates_[c].values != b.covariates_[c].values) return false;
  }
  return true;
}

Eigen::MatrixXd LatentTrajectory::locations(int k) const {
  const Eigen::VectorXd& m = means.at(static_cast<std::size_t>(k));
  Eigen::MatrixXd out(nodes, dim);
  for (int i = 0; i < nodes; ++i) out.row(i) = m.segment(static_cast<Index>(i) * dim, dim).transpose();
  return out;
}

void LatentTrajectory::validate() const {
  const Index pd = state_dim();
  if (means.empty()) throw Error(ErrorCode::invalid_argument, "trajectory has no states");
  if (!covariances.empty() && covariances.size() != means.size()) {
    throw DimensionError("trajectory covariances", static_cast<long>(means.size()), static_cast<long>(covariances.size()));
  }
  for (const auto& m : means) {
    if (m.size() != pd) throw DimensionError("state", pd, m.size());
  }
  for (const auto& v : covariances) {
    if (v.rows() != pd || v.cols() != pd) throw DimensionError("covariance", pd, v.rows());
    const double scale = std::max(1.0, v.norm());
    if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw Error(ErrorCode::numerical_failure, "covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-8 * scale) {
      throw Error(ErrorCode::numerical_failure, "covariance is not positive semi-definite");
    }
  }
}

void ModelConfig::validate(const NetworkPanel& panel) const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::invalid_config, m); };
  if (dim < 1) fail("latent dimension must be at least 1");
  const double pd = static_cast<double>(panel.nodes()) * dim;
  if (filter.kappa && !(*filter.kappa > -pd)) fail("kappa must exceed -p*d");
  if (filter.update_iterations < 1 || filter.update_iterations > 5) fail("update_iterations must lie in 1..5");
  if (!(filter.variance_floor > 0.0)) fail("variance_floor must be positive");
  if (!(em.tolerance > 0.0)) fail("EM tolerance must be positive");
  if (em.max_iterations < 1) fail("max_iterations must be positive");
  if (!(em.sigma_init_scale >= 0.0)) fail("sigma_init_scale must be non-negative");
  if (!(em.init_cov_scale > 0.0)) fail("init_cov_scale must be positive");
  if (family.kind == Family::Kind::negative_binomial && !(family.dispersion >= 0.0)) fail("dispersion must be non-negative");
  if (!panel.directed() && (effects.sender || effects.receiver)) {
    fail("sender/receiver effects require a directed panel");
  }
  if (!panel.directed() && !panel.has_unit_exposure()) {
    fail("exposure offsets require a directed panel");
  }
  if (effects.covariates && panel.covariates().empty()) fail("covariate effects requested but the panel has no covariates");
}

std::string to_string(SigmaStructure s) {
  switch (s) {
    case SigmaStructure::full: return "full";
    case SigmaStructure::diagonal: return "diagonal";
    case SigmaStructure::spherical: return "spherical";
    case SigmaStructure::per_node_spherical: return "per-node-spherical";
  }
  return "?";
}
std::string to_string(FilterKind f) { return f == FilterKind::ekf ? "ekf" : "ukf"; }
std::string to_string(OffsetMethod m) {
  switch (m) {
    case OffsetMethod::taylor2: return "taylor2";
    case OffsetMethod::unscented: return "unscented";
    case OffsetMethod::exact: return "exact";
  }
  return "?";
}
std::string to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::zeros_jitter: return "zeros-jitter";
    case InitStrategy::mds: return "mds";
    case InitStrategy::backward_filter: return "backward-filter";
  }
  return "?";
}

SigmaStructure parse_sigma_structure(const std::string& s) {
  if (s == "full") return SigmaStructure::full;
  if (s == "diagonal") return SigmaStructure::diagonal;
  if (s == "spherical") return SigmaStructure::spherical;
  if (s == "per-node-spherical") return SigmaStructure::per_node_spherical;
  throw Error(ErrorCode::invalid_config, "unknown sigma structure '" + s + "'");
}
FilterKind parse_filter_kind(const std::string& s) {
  if (s == "ekf") return FilterKind::ekf;
  if (s == "ukf") return FilterKind::ukf;
  throw Error(ErrorCode::invalid_config, "unknown filter '" + s + "'");
}
OffsetMethod parse_offset_method(const std::string& s) {
  if (s == "taylor2") return OffsetMethod::taylor2;
  if (s == "unscented") return OffsetMethod::unscented;
  if (s == "exact") return OffsetMethod::exact;
  throw Error(ErrorCode::invalid_config, "unknown offset method '" + s + "'");
}
InitStrategy parse_init_strategy(const std::string& s) {
  if (s == "zeros-jitter") return InitStrategy::zeros_jitter;
  if (s == "mds") return InitStrategy::mds;
  if (s == "backward-filter") return InitStrategy::backward_filter;
  throw Error(ErrorCode::invalid_config, "unknown init strategy '" + s + "'");
}

}  // namespace latentrem
