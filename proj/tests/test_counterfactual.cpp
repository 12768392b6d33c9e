#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "epimsm/counterfactual.hpp"
#include "epimsm/simulate.hpp"
#include "helpers.hpp"

using namespace epimsm;
using test::standard_blip_spec;
using test::unit_weights;

namespace {

RegionSeries symbolic_series(int T) {
  // mobility values distinguishable per week: raw A_w = w / 100
  std::vector<double> deaths(T), mob(T);
  for (int t = 0; t < T; ++t) {
    deaths[t] = 20.0 + t;
    mob[t] = (t + 1) / 100.0;
  }
  return make_region_series("sym", deaths, mob);
}

RegionSeries blip_series(std::uint64_t seed, double beta = -5.0) {
  return simulate_blip(standard_blip_spec(seed, beta, 0.12));
}

}  // namespace

TEST_CASE("intervention paths follow the construction rules", "[counterfactual]") {
  const auto s = symbolic_series(13);
  const auto& a = s.mobility;

  SECTION("early1 shifts left and holds the tail") {
    const auto p = make_intervention(s, Scenario::early1);
    for (int t = 0; t < 12; ++t) CHECK(p.mobility[t] == a[t + 1]);
    CHECK(p.mobility[12] == a[12]);
  }
  SECTION("early2 shifts by two") {
    const auto p = make_intervention(s, Scenario::early2);
    for (int t = 0; t < 11; ++t) CHECK(p.mobility[t] == a[t + 2]);
    CHECK(p.mobility[11] == a[12]);
    CHECK(p.mobility[12] == a[12]);
  }
  SECTION("vigilant repeats each post-peak value twice") {
    const auto p = make_intervention(s, Scenario::vigilant);
    // (a_1..a_9, a_10, a_10, a_11, a_11) for T = 13
    for (int t = 0; t < 9; ++t) CHECK(p.mobility[t] == a[t]);
    CHECK(p.mobility[9] == a[9]);
    CHECK(p.mobility[10] == a[9]);
    CHECK(p.mobility[11] == a[10]);
    CHECK(p.mobility[12] == a[10]);
  }
  SECTION("early1 on a constant path is the identity") {
    const auto flat = make_region_series("flat", std::vector<double>(13, 5.0),
                                         std::vector<double>(13, 0.3));
    const auto p = make_intervention(flat, Scenario::early1);
    for (double v : p.mobility) CHECK(v == 0.0);
  }
  SECTION("vigilant requires T >= 12") {
    const auto small = make_region_series("s", std::vector<double>(11, 1.0),
                                          std::vector<double>(11, 0.1));
    CHECK_THROWS_AS(make_intervention(small, Scenario::vigilant), ParameterError);
  }
  SECTION("early2 equals early1 applied to the early1 path up to the tail hold") {
    const auto s45 = symbolic_series(45);
    const auto p2 = make_intervention(s45, Scenario::early2);
    const auto p1 = make_intervention(s45, Scenario::early1);
    std::vector<double> p11(45);
    for (int t = 0; t < 45; ++t) p11[t] = p1.mobility[std::min(t + 1, 44)];
    for (int t = 0; t < 43; ++t) CHECK(p2.mobility[t] == p11[t]);
  }
}

TEST_CASE("counterfactual curve brackets the point estimate", "[counterfactual]") {
  const auto s = blip_series(41);
  const auto fit = fit_msm(s, unit_weights(45), 2, 4);
  const auto curve = counterfactual_curve(fit, make_intervention(s, Scenario::observed), 0.95);
  REQUIRE(static_cast<int>(curve.size()) == 45);
  for (int t = 0; t < 45; ++t) {
    CHECK(curve[t].theta == Catch::Approx(std::exp(fit.fitted(t))));
    CHECK(curve[t].lo > 0.0);
    CHECK(curve[t].lo <= curve[t].theta);
    CHECK(curve[t].theta <= curve[t].hi);
  }
}

TEST_CASE("negative beta orders curves by cumulative mobility", "[counterfactual]") {
  const auto s = blip_series(42);
  const auto fit = fit_msm(s, unit_weights(45), 2, 4);
  REQUIRE(fit.beta < 0.0);

  const auto obs = make_intervention(s, Scenario::observed);
  // perturb one coordinate upward: M weakly increases everywhere
  auto bumped = obs.mobility;
  bumped[20] += 0.05;
  const auto c_obs = counterfactual_curve(fit, obs);
  const auto c_bump = counterfactual_curve(fit, custom_path(bumped, "bumped"));
  for (int t = 0; t < 45; ++t) {
    CHECK(c_bump[t].theta <= c_obs[t].theta + 1e-12);
  }
}

TEST_CASE("zero beta gives path-invariant excess deaths", "[counterfactual]") {
  const auto s = blip_series(43, 0.0);
  auto fit = fit_msm(s, unit_weights(45), 2, 4);
  fit.coef(fit.k + 1) = 0.0;
  fit.beta = 0.0;
  const auto e_obs = excess_deaths(fit, s, make_intervention(s, Scenario::observed));
  const auto e_vig = excess_deaths(fit, s, make_intervention(s, Scenario::vigilant));
  const auto e_e1 = excess_deaths(fit, s, make_intervention(s, Scenario::early1));
  CHECK(e_obs.total == Catch::Approx(e_vig.total).margin(1e-9));
  CHECK(e_obs.total == Catch::Approx(e_e1.total).margin(1e-9));
}

TEST_CASE("excess deaths on a perfectly fit series reflects the log offset", "[counterfactual]") {
  // with an exact fit, exp(fitted) = Y + 1, so the total excess is exactly T
  const int T = 45, k = 2, delta = 4;
  const auto basis = Basis::build(T, k);
  std::vector<double> mob_raw(T), deaths(T);
  for (int t = 0; t < T; ++t) {
    const double w = t + 1.0;
    mob_raw[t] = 0.1 + 0.01 * std::sin(w);
  }
  auto tmp = make_region_series("x", std::vector<double>(T, 1.0), mob_raw);
  const auto M = cumulative_mobility(tmp, delta);
  for (int t = 0; t < T; ++t) {
    const double L = 3.0 + 0.5 * basis.psi(t, 0) - 0.2 * basis.psi(t, 1) - 2.0 * M(t);
    deaths[t] = std::expm1(L);
  }
  const auto s = make_region_series("exact", deaths, mob_raw);
  const auto fit = fit_msm(s, unit_weights(T), k, delta);
  REQUIRE(fit.residuals.cwiseAbs().maxCoeff() < 1e-9);
  const auto e = excess_deaths(fit, s, make_intervention(s, Scenario::observed));
  CHECK(e.total == Catch::Approx(static_cast<double>(T)).margin(1e-6));

  SECTION("all-zero deaths reject the relative form") {
    const auto zero = make_region_series("z", std::vector<double>(T, 0.0), mob_raw);
    CHECK_THROWS_AS(excess_deaths(fit, zero, make_intervention(zero, Scenario::observed)),
                    ParameterError);
  }
}

TEST_CASE("monte carlo: bands cover the pointwise truth", "[counterfactual][slow]") {
  // known DGP: check pointwise coverage of theta_T under the observed path
  const int reps = 200;
  int covered = 0;
  for (int rep = 0; rep < reps; ++rep) {
    auto spec = standard_blip_spec(9000 + rep, -5.0, 0.12);
    const auto s = simulate_blip(spec);

    // truth: E[L_T] under the DGP = deterministic part (level noise is mean 0)
    BlipSimSpec noiseless = spec;
    noiseless.noise_sd = 0.0;
    noiseless.policy.noise_sd = 0.0;
    noiseless.base_mobility_raw = s.mobility_raw;  // same realized mobility
    const auto det = simulate_blip(noiseless);
    const double truth = std::exp(det.log_deaths[44]);

    const auto fit = fit_msm(s, unit_weights(45), 3, 4);
    const auto curve = counterfactual_curve(fit, make_intervention(s, Scenario::observed), 0.95);
    if (curve[44].lo <= truth && truth <= curve[44].hi) ++covered;
  }
  CHECK(covered >= 0.90 * reps);
}

TEST_CASE("monte carlo: excess-death interval covers the true excess", "[counterfactual][slow]") {
  const int reps = 200;
  int covered = 0;
  for (int rep = 0; rep < reps; ++rep) {
    auto spec = standard_blip_spec(17000 + rep, -5.0, 0.12);
    const auto s = simulate_blip(spec);

    BlipSimSpec noiseless = spec;
    noiseless.noise_sd = 0.0;
    noiseless.policy.noise_sd = 0.0;
    noiseless.base_mobility_raw = s.mobility_raw;
    const auto det = simulate_blip(noiseless);
    double true_cf_total = 0.0, observed_total = 0.0;
    for (int t = 0; t < 45; ++t) {
      true_cf_total += std::exp(det.log_deaths[t]);
      observed_total += s.deaths[t];
    }
    const double true_excess = true_cf_total - observed_total;

    const auto fit = fit_msm(s, unit_weights(45), 3, 4);
    const auto e = excess_deaths(fit, s, make_intervention(s, Scenario::observed), 0.95);
    if (e.total_lo <= true_excess && true_excess <= e.total_hi) ++covered;
  }
  CHECK(covered >= 0.90 * reps);
}
