#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "batch_gaussian.hpp"
#include "latentrem/linalg.hpp"
#include "latentrem/mstep.hpp"
#include "latentrem/smoother.hpp"
#include "numeric.hpp"

using namespace latentrem;

namespace {

double max_abs(const Eigen::MatrixXd& a) { return a.cwiseAbs().maxCoeff(); }

LatentTrajectory scalar_path(std::initializer_list<double> xs) {
  LatentTrajectory t;
  t.nodes = 1;
  t.dim = 1;
  t.kind = MomentKind::smoothed;
  for (double x : xs) {
    t.means.push_back(Eigen::VectorXd::Constant(1, x));
    t.covariances.push_back(Eigen::MatrixXd::Zero(1, 1));
  }
  return t;
}

struct Smoothed {
  LatentTrajectory traj;
  std::vector<Eigen::MatrixXd> lags;
};

Smoothed smooth_affine(const oracle::LinearGaussian& g, const Eigen::MatrixXd& sigma) {
  const FilterResult fr =
      filter_pass(AffineMeasurement(g.h, g.c, g.r, g.y), sigma, FilterOptions{}, g.m0, g.v0);
  REQUIRE_FALSE(fr.diverged());
  Smoothed s{smooth_pass(fr, static_cast<int>(g.q()), 1), {}};
  s.lags = lag_one_cov(s.traj);
  return s;
}

/// Directed panel with Poisson counts around exp(a0 + s_i + r_j - d_ij).
NetworkPanel poisson_panel(int p, int n, std::uint64_t seed, Eigen::MatrixXd* offsets_out) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 0.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NetworkPanel panel(p, n, true);
  Eigen::MatrixXd off(n, panel.dyad_count());
  Eigen::VectorXd s(p), r(p);
  for (int i = 0; i < p; ++i) {
    s[i] = z(rng);
    r[i] = z(rng);
  }
  for (int k = 1; k <= n; ++k) {
    for (Index row = 0; row < panel.dyad_count(); ++row) {
      const Dyad& dy = panel.dyads().dyad(row);
      off(k - 1, row) = -u(rng);
      std::poisson_distribution<int> pois(std::exp(1.0 + off(k - 1, row) + s[dy.sender] + r[dy.receiver]));
      panel.set_count(k, row, pois(rng));
    }
  }
  *offsets_out = off;
  return panel;
}

}  // namespace

TEST_CASE("sigma estimate on a hand example") {
  const LatentTrajectory t = scalar_path({0.0, 1.0, 3.0});
  const std::vector<Eigen::MatrixXd> lags(2, Eigen::MatrixXd::Zero(1, 1));
  CHECK(expected_increment_moment(t, lags)(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(sigma_mle(t, lags, SigmaStructure::full)(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(sigma_spherical_summary(Eigen::Vector3d(1.0, 2.0, 6.0).asDiagonal().toDenseMatrix()) == doctest::Approx(3.0));
}

TEST_CASE("increment moment matches the batch posterior") {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const oracle::LinearGaussian g = oracle::random_instance(1 + static_cast<Eigen::Index>(seed % 3), 2, 6, 40 + seed);
    const Smoothed s = smooth_affine(g, g.sigma);
    const Eigen::MatrixXd ref = oracle::increment_moment(g);
    worst = std::max(worst, max_abs(expected_increment_moment(s.traj, s.lags) - ref) / std::max(1.0, max_abs(ref)));
  }
  CHECK(worst <= 1e-7);
}

TEST_CASE("sigma structures") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  const int p = 3, d = 2, q = p * d;
  Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(q, q, [&] { return z(rng); });
  const Eigen::MatrixXd raw = 0.5 * (a + a.transpose());  // indefinite
  REQUIRE(linalg::min_eigenvalue(raw) < 0.0);
  for (SigmaStructure st : {SigmaStructure::full, SigmaStructure::diagonal, SigmaStructure::spherical,
                            SigmaStructure::per_node_spherical}) {
    CAPTURE(to_string(st));
    const Eigen::MatrixXd s = project_sigma(raw, st, p, d);
    CHECK(linalg::min_eigenvalue(s) >= -1e-12);
    CHECK(max_abs(s - s.transpose()) == 0.0);
    if (st != SigmaStructure::full) {
      Eigen::MatrixXd off = s;
      off.diagonal().setZero();
      CHECK(max_abs(off) == 0.0);
    }
    if (st == SigmaStructure::spherical) CHECK(s.diagonal().maxCoeff() == s.diagonal().minCoeff());
    if (st == SigmaStructure::per_node_spherical) {
      for (int i = 0; i < p; ++i) CHECK(s(i * d, i * d) == s(i * d + 1, i * d + 1));
    }
  }
  const Eigen::MatrixXd psd = oracle::random_spd(q, 1.0, rng);
  CHECK(max_abs(project_sigma(psd, SigmaStructure::full, p, d) - psd) < 1e-12);
}

TEST_CASE("linear-Gaussian EM never lowers the marginal likelihood") {
  oracle::LinearGaussian g = oracle::random_instance(2, 3, 25, 2718);
  const Eigen::MatrixXd truth = g.sigma;
  g.sigma = 0.01 * Eigen::MatrixXd::Identity(2, 2);
  double last = oracle::log_marginal(g);
  int drops = 0;
  for (int it = 0; it < 15; ++it) {
    const Smoothed s = smooth_affine(g, g.sigma);
    g.sigma = sigma_mle(s.traj, s.lags, SigmaStructure::full);
    const double now = oracle::log_marginal(g);
    if (now < last - 1e-9 * std::abs(last)) ++drops;
    last = now;
  }
  CHECK(drops == 0);
  CHECK(max_abs(g.sigma - truth) < max_abs(0.01 * Eigen::MatrixXd::Identity(2, 2) - truth));
}

TEST_CASE("offset expectation") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> z;
  SUBCASE("point mass gives minus the squared distance") {
    const Eigen::VectorXd x = Eigen::VectorXd::NullaryExpr(6, [&] { return z(rng); });
    const Eigen::MatrixXd v = Eigen::MatrixXd::Zero(6, 6);
    const double d = squared_distance(x, 0, 2, 2);
    for (OffsetMethod m : {OffsetMethod::taylor2, OffsetMethod::unscented, OffsetMethod::exact}) {
      CHECK(offset_expectation(x, v, 0, 2, 2, m) == doctest::Approx(-d).epsilon(1e-14));
    }
    CHECK(expected_negative_distance(x, v, 0, 2, 2) == doctest::Approx(-d).epsilon(1e-14));
  }
  SUBCASE("exact form agrees with Monte Carlo") {
    Eigen::VectorXd x(2);
    x << 0.2, 0.9;
    const Eigen::MatrixXd v = 0.1 * Eigen::MatrixXd::Identity(2, 2);
    const oracle::McEstimate mc = oracle::monte_carlo(
        [](const Eigen::VectorXd& s) { return std::exp(-(s[0] - s[1]) * (s[0] - s[1])); }, x, v, 1'000'000, 99);
    const double exact = std::exp(offset_expectation(x, v, 0, 1, 1, OffsetMethod::exact));
    CHECK(std::abs(exact - mc.mean) <= 3.0 * mc.se);
  }
  SUBCASE("unscented and taylor2 agree for small covariances") {
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      const Eigen::VectorXd x = Eigen::VectorXd::NullaryExpr(4, [&] { return 0.5 * z(rng); });
      Eigen::MatrixXd v = oracle::random_spd(4, 1.0, rng);
      v *= 0.01 / v.norm();
      const double a = offset_expectation(x, v, 0, 1, 2, OffsetMethod::unscented);
      const double b = offset_expectation(x, v, 0, 1, 2, OffsetMethod::taylor2);
      worst = std::max(worst, std::abs(a - b));
    }
    CHECK(worst <= 1e-3);
  }
  SUBCASE("taylor2 floor keeps the offset finite") {
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
    const Eigen::MatrixXd v = 10.0 * Eigen::MatrixXd::Identity(2, 2);
    const double off = offset_expectation(x, v, 0, 1, 1, OffsetMethod::taylor2);
    CHECK(std::isfinite(off));
    CHECK(off == doctest::Approx(std::log(1e-12)));
  }
  SUBCASE("expected distance adds the trace") {
    const Eigen::VectorXd x = Eigen::Vector2d(0.0, 1.0);
    const Eigen::MatrixXd v = Eigen::Matrix2d::Identity() * 0.25;
    CHECK(expected_negative_distance(x, v, 0, 1, 1) == doctest::Approx(-1.5));
  }
}

TEST_CASE("intercept-only regression gives log of the mean count") {
  NetworkPanel panel(3, 4, false);
  std::mt19937_64 rng(1);
  std::poisson_distribution<int> pois(3.0);
  double total = 0.0;
  for (int k = 1; k <= 4; ++k)
    for (Index r = 0; r < 3; ++r) {
      panel.set_count(k, r, pois(rng));
      total += panel.count(k, r);
    }
  const RegressionResult res = mstep_regression(panel, Eigen::MatrixXd::Zero(4, 3), EffectSpec{}, Parameters{});
  CHECK(res.intercept == doctest::Approx(std::log(total / 12.0)).epsilon(1e-10));
  CHECK(res.effective_df == doctest::Approx(1.0));
}

TEST_CASE("penalized regression matches a dense Newton solve") {
  Eigen::MatrixXd off;
  const NetworkPanel panel = poisson_panel(4, 3, 17, &off);
  EffectSpec eff;
  eff.sender = eff.receiver = true;
  eff.fix_effect_variances = true;
  Parameters start;
  start.sender_variance = 0.3;
  start.receiver_variance = 0.6;
  const RegressionResult res = mstep_regression(panel, off, eff, start);
  REQUIRE(res.pinned_senders.empty());
  REQUIRE(res.pinned_receivers.empty());

  std::vector<oracle::PoissonCell> cells;
  for (int k = 1; k <= 3; ++k)
    for (Index r = 0; r < panel.dyad_count(); ++r) {
      const Dyad& dy = panel.dyads().dyad(r);
      cells.push_back({panel.count(k, r), off(k - 1, r), dy.sender, dy.receiver});
    }
  const oracle::PenalizedFit ref = oracle::dense_newton(cells, 4, 4, 0.3, 0.6);
  CHECK(res.intercept == doctest::Approx(ref.intercept).epsilon(1e-6));
  CHECK((res.sender_effects - ref.senders).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((res.receiver_effects - ref.receivers).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(res.effective_df == doctest::Approx(ref.effective_df).epsilon(1e-6));
  CHECK(res.effective_df < 7.0);
  CHECK(std::abs(res.sender_effects.sum()) < 1e-10);
  CHECK(res.sender_variance == 0.3);

  for (std::size_t t = 1; t < res.deviance_trace.size(); ++t)
    CHECK(res.deviance_trace[t] <= res.deviance_trace[t - 1] * (1.0 + 1e-12));
}

TEST_CASE("effect variances are updated unless fixed") {
  Eigen::MatrixXd off;
  const NetworkPanel panel = poisson_panel(5, 4, 3, &off);
  EffectSpec eff;
  eff.sender = eff.receiver = true;
  const RegressionResult res = mstep_regression(panel, off, eff, Parameters{});
  CHECK(res.sender_variance != 1.0);
  CHECK(res.sender_variance >= 1e-8);
}

TEST_CASE("nodes without events keep a zero effect") {
  Eigen::MatrixXd off;
  NetworkPanel panel = poisson_panel(4, 3, 8, &off);
  for (int k = 1; k <= 3; ++k)
    for (Index r = 0; r < panel.dyad_count(); ++r)
      if (panel.dyads().dyad(r).sender == 2) panel.set_count(k, r, 0.0);
  EffectSpec eff;
  eff.sender = true;
  const RegressionResult res = mstep_regression(panel, off, eff, Parameters{});
  REQUIRE(res.pinned_senders == std::vector<int>{2});
  CHECK(res.sender_effects[2] == 0.0);
  CHECK(std::abs(res.sender_effects.sum()) < 1e-10);
}

TEST_CASE("infinite offsets under observed events fail numerically") {
  Eigen::MatrixXd off;
  const NetworkPanel panel = poisson_panel(3, 2, 4, &off);
  Index hit = -1;
  for (Index r = 0; r < panel.dyad_count() && hit < 0; ++r)
    if (panel.count(1, r) > 0.0) hit = r;
  REQUIRE(hit >= 0);
  off(0, hit) = -std::numeric_limits<double>::infinity();
  try {
    mstep_regression(panel, off, EffectSpec{}, Parameters{});
    FAIL("expected numerical failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numerical_failure);
  }
  CHECK_THROWS_AS(mstep_regression(panel, Eigen::MatrixXd::Zero(1, 6), EffectSpec{}, Parameters{}), DimensionError);
}
