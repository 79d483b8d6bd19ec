#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentrem/error.hpp"

namespace latentrem {

using Index = Eigen::Index;

struct Dyad {
  int sender = 0;
  int receiver = 0;
  friend bool operator==(const Dyad&, const Dyad&) = default;
};

/// Bijection between dyads and rows of the stacked rate vector.
///
/// Undirected panels list (i, j) with i < j lexicographically:
/// (0,1), (0,2), ..., (p-2,p-1). Directed panels list every ordered pair
/// with i != j lexicographically: (0,1), (0,2), ..., (0,p-1), (1,0), (1,2), ...
/// Node indices are zero-based.
class DyadIndex {
 public:
  DyadIndex() = default;
  DyadIndex(int nodes, bool directed);

  int nodes() const { return nodes_; }
  bool directed() const { return directed_; }
  Index size() const { return static_cast<Index>(dyads_.size()); }

  const Dyad& dyad(Index row) const { return dyads_[static_cast<std::size_t>(row)]; }

  /// Row for the dyad, or -1 for self-loops. Undirected panels accept either order.
  Index row(int sender, int receiver) const;

  const std::vector<Dyad>& dyads() const { return dyads_; }

 private:
  int nodes_ = 0;
  bool directed_ = true;
  std::vector<Dyad> dyads_;
  std::vector<Index> lookup_;
};

/// Edge covariate observed per interval and dyad (rows: intervals, cols: dyads).
struct EdgeCovariate {
  std::string name;
  Eigen::MatrixXd values;
};

/// Observed interval counts y_ij(k) with per-node exposures C_i(k).
///
/// Intervals are addressed with k = 1..n so that interval k lines up with
/// latent state k of a trajectory (state 0 is the initial state).
class NetworkPanel {
 public:
  NetworkPanel() = default;
  NetworkPanel(int nodes, int intervals, bool directed);

  int nodes() const { return dyads_.nodes(); }
  int intervals() const { return static_cast<int>(counts_.rows()); }
  bool directed() const { return dyads_.directed(); }
  const DyadIndex& dyads() const { return dyads_; }
  Index dyad_count() const { return dyads_.size(); }

  double count(int k, Index row) const { return counts_(k - 1, row); }
  void set_count(int k, Index row, double value);
  void add_count(int k, int sender, int receiver, double value);

  double exposure(int k, int node) const { return exposure_(k - 1, node); }
  void set_exposure(int k, int node, double value);
  bool has_unit_exposure() const;

  /// Counts for interval k as a vector over dyad rows.
  Eigen::VectorXd interval_counts(int k) const { return counts_.row(k - 1).transpose(); }

  const Eigen::MatrixXd& counts() const { return counts_; }
  const Eigen::MatrixXd& exposures() const { return exposure_; }

  std::vector<std::string>& labels() { return labels_; }
  const std::vector<std::string>& labels() const { return labels_; }

  std::vector<EdgeCovariate>& covariates() { return covariates_; }
  const std::vector<EdgeCovariate>& covariates() const { return covariates_; }

  /// Throws on negative or non-integer counts, negative exposures, a positive
  /// count from a node with zero exposure, or covariates of the wrong shape.
  void validate() const;

  /// Copy with the interval order reversed.
  NetworkPanel reversed() const;

  friend bool operator==(const NetworkPanel& a, const NetworkPanel& b);

 private:
  DyadIndex dyads_;
  Eigen::MatrixXd counts_;    // intervals x dyads
  Eigen::MatrixXd exposure_;  // intervals x nodes
  std::vector<std::string> labels_;
  std::vector<EdgeCovariate> covariates_;
};

enum class MomentKind { predicted, filtered, smoothed };

/// Latent location moments for states k = 0..n, vectorized node-major:
/// entries i*d .. i*d+d-1 hold node i's coordinates.
struct LatentTrajectory {
  int nodes = 0;
  int dim = 0;
  MomentKind kind = MomentKind::filtered;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  /// B_k for k = 1..n stored at index k-1; present for smoothed trajectories.
  std::vector<Eigen::MatrixXd> backward_gains;

  int intervals() const { return static_cast<int>(means.size()) - 1; }
  Index state_dim() const { return static_cast<Index>(nodes) * dim; }

  /// Node locations at state k as a p x d matrix.
  Eigen::MatrixXd locations(int k) const;

  /// Checks sizes, symmetry (1e-10) and PSD (min eigenvalue >= -1e-8 ||V||).
  void validate() const;
};

enum class SigmaStructure { full, diagonal, spherical, per_node_spherical };
enum class FilterKind { ekf, ukf };
enum class OffsetMethod { taylor2, unscented, exact };
enum class InitStrategy { zeros_jitter, mds, backward_filter };

struct Family {
  enum class Kind { poisson, negative_binomial };
  Kind kind = Kind::poisson;
  double dispersion = 0.0;  // phi in Var = mu + phi mu^2

  static Family poisson() { return {}; }
  static Family negative_binomial(double phi) { return {Kind::negative_binomial, phi}; }
};

struct Parameters {
  double intercept = 0.0;
  Eigen::VectorXd fixed_coeffs;
  Eigen::VectorXd sender_effects;    // length p, or empty when disabled
  Eigen::VectorXd receiver_effects;  // length p, or empty when disabled
  Eigen::MatrixXd sigma;             // pd x pd random-walk covariance
  double sender_variance = 1.0;
  double receiver_variance = 1.0;
  std::optional<double> dispersion;
};

struct EffectSpec {
  bool intercept = true;
  bool sender = false;
  bool receiver = false;
  bool covariates = false;
  /// Keep the random-effect variances at their starting values.
  bool fix_effect_variances = false;
};

struct FilterOptions {
  FilterKind kind = FilterKind::ekf;
  /// UKF spread; unset means pd + kappa = 3.
  std::optional<double> kappa;
  /// EKF update sweeps per interval, re-linearizing at the updated mean (1-5).
  int update_iterations = 1;
  /// Reuse R_{k-1} when the rates at k are non-finite.
  bool reuse_previous_variance = false;
  double variance_floor = 1e-12;
};

struct EmOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;
  /// Starting random-walk covariance is sigma_init_scale * I.
  double sigma_init_scale = 1e-4;
  /// V_{0|0} = init_cov_scale * I.
  double init_cov_scale = 0.1;
  bool update_sigma = true;
  bool update_regression = true;
  OffsetMethod offset_method = OffsetMethod::taylor2;
  /// Evaluate the offset at smoothed moments (true) or filtered moments.
  bool offset_from_smoothed = true;
  InitStrategy init = InitStrategy::mds;
  std::uint64_t seed = 1;
};

struct ModelConfig {
  int dim = 2;
  SigmaStructure sigma_structure = SigmaStructure::spherical;
  FilterOptions filter;
  Family family;
  EffectSpec effects;
  EmOptions em;

  /// Throws Error(invalid_config) on inconsistent settings for `panel`.
  void validate(const NetworkPanel& panel) const;

  double kappa(Index state_dim) const {
    return filter.kappa ? *filter.kappa : 3.0 - static_cast<double>(state_dim);
  }
};

std::string to_string(SigmaStructure s);
std::string to_string(FilterKind f);
std::string to_string(OffsetMethod m);
std::string to_string(InitStrategy s);
SigmaStructure parse_sigma_structure(const std::string& s);
FilterKind parse_filter_kind(const std::string& s);
OffsetMethod parse_offset_method(const std::string& s);
InitStrategy parse_init_strategy(const std::string& s);

}  // namespace latentrem
