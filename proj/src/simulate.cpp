#include "latentrem/simulate.hpp"

#include <cmath>
#include <random>

#include "latentrem/rate.hpp"

namespace latentrem {

void SimScenario::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::invalid_config, m); };
  if (nodes < 2) fail("scenario needs at least 2 nodes");
  if (intervals < 1) fail("scenario needs at least 1 interval");
  if (dim < 1) fail("scenario latent dimension must be at least 1");
  if (replicates < 1) fail("scenario needs at least 1 replicate");
  if (!intercept && !(mean_rate > 0.0)) fail("mean_rate must be positive");
  if (family.kind == Family::Kind::negative_binomial && !(family.dispersion >= 0.0)) fail("dispersion must be non-negative");
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

LogisticShape draw_shape(const SimScenario& scenario, std::uint64_t seed) {
  scenario.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int p = scenario.nodes;
  const int d = scenario.dim;
  const double n = scenario.intervals;
  LogisticShape s;
  s.offset.resize(p, d);
  s.amplitude.resize(p, d);
  s.midpoint.resize(p, d);
  s.slope.resize(p, d);
  for (int i = 0; i < p; ++i) {
    for (int m = 0; m < d; ++m) {
      s.offset(i, m) = -1.0 + 2.0 * u01(rng);
      const double mag = 0.5 + 1.5 * u01(rng);
      s.amplitude(i, m) = u01(rng) < 0.5 ? -mag : mag;
      s.midpoint(i, m) = n * (0.2 + 0.6 * u01(rng));
      const double slope = 0.05 + 0.25 * u01(rng);
      s.slope(i, m) = scenario.dynamic ? slope : 0.0;
    }
  }
  return s;
}

LatentTrajectory logistic_trajectory(const LogisticShape& shape, int intervals) {
  const auto p = static_cast<int>(shape.offset.rows());
  const auto d = static_cast<int>(shape.offset.cols());
  LatentTrajectory t;
  t.nodes = p;
  t.dim = d;
  t.kind = MomentKind::smoothed;
  const Index pd = static_cast<Index>(p) * d;
  for (int k = 0; k <= intervals; ++k) {
    Eigen::VectorXd x(pd);
    for (int i = 0; i < p; ++i) {
      for (int m = 0; m < d; ++m) {
        const double z = -shape.slope(i, m) * (k - shape.midpoint(i, m));
        x[static_cast<Index>(i) * d + m] = shape.offset(i, m) + shape.amplitude(i, m) / (1.0 + std::exp(z));
      }
    }
    t.means.push_back(std::move(x));
    t.covariances.push_back(Eigen::MatrixXd::Zero(pd, pd));
  }
  return t;
}

LatentTrajectory simulate_trajectories(const SimScenario& scenario, std::uint64_t seed) {
  return logistic_trajectory(draw_shape(scenario, seed), scenario.intervals);
}

double calibrate_intercept(const LatentTrajectory& truth, bool directed, double mean_rate) {
  if (!(mean_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "mean_rate must be positive");
  const DyadIndex dyads(truth.nodes, directed);
  double total = 0.0;
  for (int k = 1; k <= truth.intervals(); ++k) {
    for (const Dyad& dy : dyads.dyads()) {
      total += std::exp(-squared_distance(truth.means[static_cast<std::size_t>(k)], dy.sender, dy.receiver, truth.dim));
    }
  }
  const double cells = static_cast<double>(truth.intervals()) * static_cast<double>(dyads.size());
  return std::log(mean_rate * cells / total);
}

NetworkPanel simulate_counts(const NetworkPanel& design, const LatentTrajectory& truth, const Parameters& params,
                             const Family& family, std::uint64_t seed) {
  if (truth.nodes != design.nodes()) throw DimensionError("trajectory nodes", design.nodes(), truth.nodes);
  if (truth.intervals() != design.intervals()) throw DimensionError("trajectory intervals", design.intervals(), truth.intervals());
  const RateModel model(design, params, truth.dim);
  std::mt19937_64 rng(seed);
  NetworkPanel out = design;
  for (int k = 1; k <= design.intervals(); ++k) {
    const Eigen::VectorXd mu = model.rate(truth.means[static_cast<std::size_t>(k)], k);
    if (!mu.allFinite()) throw Error(ErrorCode::numerical_failure, "simulation rates are not finite");
    for (Index r = 0; r < mu.size(); ++r) out.set_count(k, r, draw_count(mu[r], family, rng));
  }
  return out;
}

NetworkPanel simulate_counts(const LatentTrajectory& truth, double intercept, const Family& family, bool directed,
                             std::uint64_t seed) {
  NetworkPanel design(truth.nodes, truth.intervals(), directed);
  Parameters params;
  params.intercept = intercept;
  return simulate_counts(design, truth, params, family, seed);
}

SimulatedPanel simulate_scenario(const SimScenario& scenario, std::uint64_t seed) {
  scenario.validate();
  SimulatedPanel out;
  out.shape = draw_shape(scenario, derive_seed(seed, 1));
  out.truth = logistic_trajectory(out.shape, scenario.intervals);
  out.params.intercept =
      scenario.intercept ? *scenario.intercept : calibrate_intercept(out.truth, scenario.directed, scenario.mean_rate);
  const Index pd = static_cast<Index>(scenario.nodes) * scenario.dim;
  out.params.sigma = Eigen::MatrixXd::Zero(pd, pd);
  if (scenario.family.kind == Family::Kind::negative_binomial) out.params.dispersion = scenario.family.dispersion;
  out.panel = simulate_counts(out.truth, out.params.intercept, scenario.family, scenario.directed, derive_seed(seed, 2));
  return out;
}

}  // namespace latentrem
