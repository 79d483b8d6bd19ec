#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "latentrem/evaluate.hpp"
#include "latentrem/rate.hpp"
#include "latentrem/simulate.hpp"
#include "latentrem/study.hpp"

using namespace latentrem;

namespace {

LogisticShape one_curve(double offset, double amplitude, double midpoint, double slope) {
  LogisticShape s;
  s.offset = Eigen::MatrixXd::Constant(1, 1, offset);
  s.amplitude = Eigen::MatrixXd::Constant(1, 1, amplitude);
  s.midpoint = Eigen::MatrixXd::Constant(1, 1, midpoint);
  s.slope = Eigen::MatrixXd::Constant(1, 1, slope);
  return s;
}

/// Two nodes in one dimension at coincident locations, every interval.
FitResult point_fit(int n, double intercept, Family family) {
  FitResult fit;
  fit.config.dim = 1;
  fit.config.family = family;
  fit.params.intercept = intercept;
  fit.params.sigma = 1e-4 * Eigen::MatrixXd::Identity(2, 2);
  fit.smoothed.nodes = 2;
  fit.smoothed.dim = 1;
  fit.smoothed.kind = MomentKind::smoothed;
  for (int k = 0; k <= n; ++k) {
    fit.smoothed.means.push_back(Eigen::VectorXd::Zero(2));
    fit.smoothed.covariances.push_back(0.01 * Eigen::MatrixXd::Identity(2, 2));
  }
  fit.trace.records.push_back(TraceRecord{});
  fit.iterations = 1;
  return fit;
}

struct Audit {
  double mean, mean_se, var, var_se;
};

Audit audit_draws(double mu, const Family& fam, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(static_cast<std::size_t>(draws));
  double s = 0.0;
  for (double& x : v) {
    x = draw_count(mu, fam, rng);
    s += x;
  }
  const double m = s / draws;
  double m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double e = (x - m) * (x - m);
    m2 += e;
    m4 += e * e;
  }
  m2 /= draws;
  m4 /= draws;
  return {m, std::sqrt(m2 / draws), m2, std::sqrt((m4 - m2 * m2) / draws)};
}

}  // namespace

TEST_CASE("logistic trajectories") {
  const LatentTrajectory t = logistic_trajectory(one_curve(-0.5, 2.0, 50.0, 0.3), 400);
  CHECK(t.intervals() == 400);
  CHECK(t.means[400][0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(t.means[50][0] == doctest::Approx(0.5).epsilon(1e-12));
  const LatentTrajectory flat = logistic_trajectory(one_curve(0.25, 1.0, 10.0, 0.0), 20);
  for (const auto& m : flat.means) CHECK(m[0] == doctest::Approx(0.75));
}

TEST_CASE("static scenarios draw constant trajectories") {
  SimScenario sc;
  sc.nodes = 4;
  sc.intervals = 10;
  sc.dynamic = false;
  const LatentTrajectory t = simulate_trajectories(sc, 3);
  for (const auto& m : t.means) CHECK(m == t.means.front());
}

TEST_CASE("intercept calibration hits the target mean rate") {
  SimScenario sc;
  sc.nodes = 6;
  sc.intervals = 15;
  const LatentTrajectory t = simulate_trajectories(sc, 8);
  const double a0 = calibrate_intercept(t, false, 2.0);
  double total = 0.0;
  int cells = 0;
  for (int k = 1; k <= 15; ++k)
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j) {
        total += std::exp(a0 - squared_distance(t.means[static_cast<std::size_t>(k)], i, j, 2));
        ++cells;
      }
  CHECK(total / cells == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("seeds are reproducible and distinct") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  SimScenario sc;
  sc.nodes = 5;
  sc.intervals = 8;
  CHECK(simulate_scenario(sc, 4).panel == simulate_scenario(sc, 4).panel);
  CHECK_FALSE(simulate_scenario(sc, 4).panel == simulate_scenario(sc, 5).panel);
}

TEST_CASE("count draws have the family mean and variance") {
  int seed = 0;
  for (double mu : {0.5, 2.0, 8.0}) {
    for (const Family& fam : {Family::poisson(), Family::negative_binomial(1.0)}) {
      CAPTURE(mu);
      const Audit a = audit_draws(mu, fam, 200'000, static_cast<std::uint64_t>(++seed));
      const double var = fam.kind == Family::Kind::poisson ? mu : mu + mu * mu;
      CHECK(std::abs(a.mean - mu) <= 3.0 * a.mean_se);
      CHECK(std::abs(a.var - var) <= 3.0 * a.var_se);
    }
  }
}

TEST_CASE("out-of-fold KL") {
  SimScenario sc;
  sc.nodes = 6;
  sc.intervals = 20;
  const SimulatedPanel sim = simulate_scenario(sc, 12);
  SUBCASE("truth against itself") {
    const KlEstimate kl = kl_out_of_fold(sim.panel, sim.truth, sim.params, sim.truth, sim.params, Family::poisson(), 5);
    CHECK(std::abs(kl.value) <= 3.0 * kl.standard_error + 1e-15);
    CHECK(kl.terms == 20 * 15);
  }
  SUBCASE("inflated rates are penalized") {
    Parameters wrong = sim.params;
    wrong.intercept += std::log(10.0);
    const KlEstimate kl = kl_out_of_fold(sim.panel, sim.truth, wrong, sim.truth, sim.params, Family::poisson(), 5);
    CHECK(kl.value > 3.0 * kl.standard_error);
  }
  SUBCASE("rigid motions leave KL unchanged") {
    Parameters shifted = sim.params;
    shifted.intercept -= 0.2;
    LatentTrajectory moved = sim.truth;
    const double c = std::cos(0.7), s = std::sin(0.7);
    for (auto& m : moved.means)
      for (int i = 0; i < 6; ++i) {
        const double x = m[2 * i], y = m[2 * i + 1];
        m[2 * i] = c * x - s * y + 4.0;
        m[2 * i + 1] = s * x + c * y - 1.0;
      }
    const KlEstimate a = kl_out_of_fold(sim.panel, sim.truth, shifted, sim.truth, sim.params, Family::poisson(), 9);
    const KlEstimate b = kl_out_of_fold(sim.panel, moved, shifted, sim.truth, sim.params, Family::poisson(), 9);
    CHECK(a.value > 0.0);
    CHECK(std::abs(a.value - b.value) <= 1e-10);
  }
  SUBCASE("hand-computed terms") {
    const Eigen::MatrixXd truth = Eigen::MatrixXd::Constant(1, 2, 2.0);
    const Eigen::MatrixXd fit = Eigen::MatrixXd::Constant(1, 2, 1.0);
    Eigen::MatrixXd y(1, 2);
    y << 1.0, 3.0;
    // log p(y | 2) - log p(y | 1) = y log 2 - 1
    const KlEstimate kl = kl_from_rates(truth, fit, y);
    CHECK(kl.value == doctest::Approx(2.0 * std::log(2.0) - 1.0).epsilon(1e-14));
    CHECK(kl.terms == 2);
  }
}

TEST_CASE("studentized residuals") {
  NetworkPanel panel(2, 1, false);
  panel.set_count(1, 0, 4.0);
  const std::vector<Residual> pois = residuals(point_fit(1, 0.0, Family::poisson()), panel);
  REQUIRE(pois.size() == 1);
  CHECK(pois[0].fitted == doctest::Approx(1.0));
  CHECK(pois[0].residual == doctest::Approx(3.0));
  const std::vector<Residual> nb = residuals(point_fit(1, 0.0, Family::negative_binomial(1.0)), panel);
  CHECK(nb[0].variance == doctest::Approx(2.0));
  CHECK(nb[0].residual < pois[0].residual);
}

TEST_CASE("cAIC grows with the random-walk variance at fixed fit") {
  NetworkPanel panel(2, 10, false);
  for (int k = 1; k <= 10; ++k) panel.set_count(k, 0, static_cast<double>(k % 3));
  double last_df = -1.0, last_caic = -1e300;
  for (double s : {1e-4, 1e-2, 1.0}) {
    FitResult fit = point_fit(10, 0.0, Family::poisson());
    for (int k = 0; k <= 10; ++k) fit.smoothed.means[static_cast<std::size_t>(k)] << 0.0, 0.5;
    fit.params.sigma = s * Eigen::MatrixXd::Identity(2, 2);
    fit.regression_df = 1.0;
    const CaicResult c = caic(fit, panel);
    CHECK(c.latent_df > last_df);
    CHECK(c.caic > last_caic);
    CHECK(c.caic == doctest::Approx(-2.0 * c.log_likelihood + 2.0 * (c.regression_df + c.latent_df)));
    last_df = c.latent_df;
    last_caic = c.caic;
  }
  FitResult empty;
  CHECK_THROWS_AS(caic(empty, panel), Error);
}

TEST_CASE("distance correlation") {
  SimScenario sc;
  sc.nodes = 5;
  sc.intervals = 6;
  const LatentTrajectory t = simulate_trajectories(sc, 2);
  CHECK(distance_correlation(t, t) == doctest::Approx(1.0));
}

TEST_CASE("EKF recovers the latent geometry") {
  SimScenario sc;
  std::vector<double> dc;
  for (std::uint64_t rep = 1; rep <= 3; ++rep) {
    const SimulatedPanel sim = simulate_scenario(sc, derive_seed(42, 1, rep));
    dc.push_back(distance_correlation(em_fit(sim.panel, ModelConfig{}).smoothed, sim.truth));
  }
  std::sort(dc.begin(), dc.end());
  CHECK(dc[0] >= 0.85);
  CHECK(dc[1] >= 0.95);
}

TEST_CASE("small study sweep") {
  StudySpec spec;
  StudyCell cell;
  cell.name = "p5";
  cell.scenario.nodes = 5;
  cell.scenario.intervals = 20;
  cell.scenario.replicates = 2;
  spec.cells.push_back(cell);
  spec.fit.em.max_iterations = 30;
  int seen = 0;
  const StudyResult res = run_study(spec, [&](const StudyRow&) { ++seen; });
  REQUIRE(res.rows.size() == 6);
  CHECK(seen == 6);
  CHECK(res.rows[0].data_seed == res.rows[2].data_seed);
  CHECK(res.rows[0].data_seed != res.rows[3].data_seed);
  CHECK(res.aggregates.size() == 3);
  for (const StudyRow& r : res.rows) {
    CHECK_FALSE(r.failed);
    CHECK(std::isfinite(r.kl));
  }
  const StudyResult again = run_study(spec);
  for (std::size_t i = 0; i < res.rows.size(); ++i) CHECK(res.rows[i].kl == again.rows[i].kl);

  spec.cells.clear();
  CHECK_THROWS_AS(spec.validate(), Error);
}
