#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "epimsm/random.hpp"
#include "epimsm/simulate.hpp"
#include "epimsm/weights.hpp"
#include "helpers.hpp"

using namespace epimsm;
using test::hump_raw;

namespace {

// independent route: stationarity conditions of the constrained quadratic
// program solved as one KKT system [I C; C' 0] [W; lam] = [1; d]
Eigen::VectorXd kkt_oracle(const Eigen::MatrixXd& H, int T) {
  const int m = static_cast<int>(H.cols());
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(T + m, T + m);
  K.topLeftCorner(T, T).setIdentity();
  K.topRightCorner(T, m) = H;
  K.bottomLeftCorner(m, T) = H.transpose();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(T + m);
  rhs.head(T).setOnes();
  rhs(T) = static_cast<double>(T);
  const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
  return sol.head(T);
}

// outcome is level noise around a constant, so the series is valid for any
// T; kappa > 0 makes mobility react to last week's deaths
RegionSeries confounded_series(int T, double kappa, std::uint64_t seed) {
  BlipSimSpec spec;
  spec.T = T;
  spec.beta = 0.0;
  spec.drift_coeffs = {0.0};
  spec.noise_sd = 0.12;
  spec.noise_mode = BlipSimSpec::NoiseMode::level;
  spec.base_mobility_raw = hump_raw(T);
  spec.policy.kappa = kappa;
  spec.policy.noise_sd = 0.004;
  spec.L1 = 2.5;
  spec.seed = seed;
  return simulate_blip(spec);
}

}  // namespace

TEST_CASE("markov regressions recover known coefficients", "[weights]") {
  // AR(1) mobility with slope rho: the fitted slope of E[a_t | a_{t-1}]
  // should land on rho
  const int T = 4000;
  Rng rng(11);
  std::vector<double> deaths(T), mob_raw(T);
  const double rho = 0.6;
  double a = 0.0;
  for (int t = 0; t < T; ++t) {
    a = rho * a + rng.normal(0.0, 0.05);
    mob_raw[t] = std::clamp(0.5 + a, 0.0, 1.0);
    deaths[t] = std::floor(50.0 + 10.0 * rng.uniform());
  }
  mob_raw[0] = 0.5;
  const auto series = make_region_series("sim", deaths, mob_raw);
  const std::vector<MomentPair> pairs = {{"a", "y"}};
  const auto cm = fit_conditional_means(series, 1, 4, pairs);

  // recover the slope from two fitted values
  int t1 = cm.first_usable, t2 = cm.first_usable + 1;
  while (series.mobility[t2 - 1] == series.mobility[t1 - 1]) ++t2;
  const double slope = (cm.mu(t2, 0) - cm.mu(t1, 0)) /
                       (series.mobility[t2 - 1] - series.mobility[t1 - 1]);
  CHECK(std::abs(slope - rho) < 0.05);

  // deaths independent of the regressors: fitted nu stays near the mean
  double mean_y = 0.0;
  for (double y : series.deaths) mean_y += y;
  mean_y /= T;
  for (int t = cm.first_usable; t < cm.first_usable + 200; ++t) {
    CHECK(std::abs(cm.nu(t, 0) - mean_y) < 3.0);
  }
}

TEST_CASE("constant mobility is a rank error naming the regressor", "[weights]") {
  const auto series =
      make_region_series("flat", std::vector<double>(30, 5.0), std::vector<double>(30, 0.3));
  try {
    fit_conditional_means(series, 1, 4, default_moment_pairs());
    FAIL("expected RankError");
  } catch (const RankError& e) {
    CHECK(std::string(e.what()).find("mobility lag 1") != std::string::npos);
  }
}

TEST_CASE("build_H hand-computed toy", "[weights]") {
  // tiny series, delta=1 so week 3 onward is usable with k=1
  std::vector<double> deaths = {2, 4, 8, 6, 10};
  std::vector<double> mob_raw = {0.10, 0.20, 0.40, 0.30, 0.50};
  auto series = make_region_series("toy", deaths, mob_raw);

  ConditionalMeans cm;
  cm.mu = Eigen::MatrixXd::Constant(5, 1, std::nan(""));
  cm.nu = Eigen::MatrixXd::Constant(5, 1, std::nan(""));
  cm.first_usable = 2;
  for (int t = 2; t < 5; ++t) {
    cm.mu(t, 0) = 0.1;  // stand-in fitted values
    cm.nu(t, 0) = 5.0;
  }
  const std::vector<MomentPair> pairs = {{"a", "y"}};
  const auto H = build_H(series, cm, pairs);
  REQUIRE(H.rows() == 5);
  REQUIRE(H.cols() == 2);
  for (int t = 0; t < 2; ++t) {
    CHECK(H(t, 0) == 1.0);
    CHECK(H(t, 1) == 0.0);
  }
  // a_t = mob_raw - 0.1; H = (a_t - 0.1)(Y_{t-1} - 5)
  CHECK(H(2, 1) == Catch::Approx((0.30 - 0.10) * (4.0 - 5.0)));
  CHECK(H(3, 1) == Catch::Approx((0.20 - 0.10) * (8.0 - 5.0)));
  CHECK(H(4, 1) == Catch::Approx((0.40 - 0.10) * (6.0 - 5.0)));

  SECTION("no pairs gives a single ones column") {
    const auto H1 = build_H(series, cm, {});
    REQUIRE(H1.cols() == 1);
    CHECK(H1.col(0).minCoeff() == 1.0);
  }
}

TEST_CASE("centered products have near-zero means under independence", "[weights]") {
  // population-orthogonality sanity: with exact conditional means and
  // independent A, Y the H columns average out
  const int T = 20000;
  Rng rng(5);
  Eigen::VectorXd col(T);
  double acc = 0.0;
  for (int t = 0; t < T; ++t) {
    const double h1 = rng.normal(0.0, 1.0);  // already centered
    const double h2 = rng.normal(0.0, 1.0);
    col(t) = h1 * h2;
    acc += col(t);
  }
  CHECK(std::abs(acc / T) < 0.02);
}

TEST_CASE("ones-only H returns unit weights", "[weights]") {
  const int T = 30;
  const Eigen::MatrixXd H = Eigen::MatrixXd::Ones(T, 1);
  const auto w = solve_weights(H, T);
  for (int t = 0; t < T; ++t) CHECK(w.values(t) == Catch::Approx(1.0).margin(1e-12));
  CHECK(w.negative_count == 0);
}

TEST_CASE("closed form matches the KKT oracle on random instances", "[weights]") {
  Rng rng(31);
  for (int rep = 0; rep < 25; ++rep) {
    const int T = 20;
    Eigen::MatrixXd H(T, 4);
    H.col(0).setOnes();
    for (int t = 0; t < T; ++t) {
      for (int j = 1; j < 4; ++j) H(t, j) = rng.normal(0.0, 1.0 + 10.0 * j);
    }
    const auto w = solve_weights(H, T);
    const auto oracle = kkt_oracle(H, T);
    CHECK((w.values - oracle).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(w.values.sum() - T) < 1e-8);
    CHECK(w.moment_residuals.cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("no confounding drives weights to one", "[weights]") {
  // kappa = 0: mobility never reacts to deaths, so the centered products
  // carry no signal and the solution stays near uniform
  std::vector<double> max_dev;
  for (const int T : {40, 200, 1000}) {
    double med = 0.0;
    std::vector<double> devs;
    for (int rep = 0; rep < 11; ++rep) {
      const auto series = confounded_series(T, 0.0, 100 + rep);
      const auto w = estimate_weights(series, 1, 4);
      devs.push_back((w.values.array() - 1.0).abs().maxCoeff());
    }
    std::sort(devs.begin(), devs.end());
    med = devs[devs.size() / 2];
    max_dev.push_back(med);
  }
  CHECK(max_dev[0] < 0.8);
  CHECK(max_dev[2] < max_dev[0]);  // shrinks as T grows
  CHECK(max_dev[2] < 0.2);
}

TEST_CASE("weight vector invariants on a confounded series", "[weights]") {
  const auto series = confounded_series(45, 0.02, 7);
  const auto w = estimate_weights(series, 1, 4);
  CHECK(std::abs(w.values.sum() - 45.0) < 1e-8);
  CHECK(w.moment_residuals.cwiseAbs().maxCoeff() < 1e-8);
  CHECK(w.values.allFinite());
  CHECK(w.boundary_rows.size() == 5);  // t <= delta + k
}
