#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "epimsm/delay.hpp"
#include "epimsm/linreg.hpp"
#include "epimsm/msm.hpp"
#include "epimsm/random.hpp"
#include "epimsm/types.hpp"

namespace epimsm {

// Linear-Gaussian feedback policy for anti-mobility:
// A_t = intercept + rho A_{t-1} + kappa log(Y_{t-1}+1) + noise, clamped to [0,1].
struct PolicyParams {
  double a1 = 0.1;         // starting raw anti-mobility
  double intercept = 0.03;
  double rho = 0.7;
  double kappa = 0.0;      // feedback from past log deaths; > 0 confounds
  double noise_sd = 0.02;
};

// Generative working model: I_t = I_{t-1} exp(c_t + gimel(a_t)) + delta_t,
// Y_t = sum_s f(s,t) I_s + xi_t, with gimel linear in standardized mobility.
struct WorkingModelSpec {
  int T = 45;
  std::vector<double> c;            // c_t, length T (epidemic drift without intervention)
  double gimel_beta = 0.0;          // slope of gimel on a_t = A_t - A_1
  double I1 = 10.0;                 // pre-sample infection seed
  PolicyParams policy;
  double delta_sd = 0.0;            // infection noise
  double xi_sd = 0.0;               // death noise
  DelayKernel kernel;
  std::uint64_t seed = 1;
  // intervention semantics: when set, mobility is forced to this raw path
  std::optional<std::vector<double>> forced_mobility_raw;
};

struct WorkingModelDraw {
  RegionSeries series;
  Eigen::VectorXd latent_infections;  // I_1..I_T
  Eigen::VectorXd deaths_raw;         // sum_s f(s,t) I_s + xi_t before rounding/flooring
};

// Deaths are floored at 0 and rounded half-to-even, except in the exact
// regime (both noise sds zero) where the unrounded values are kept so that
// Y_t = sum_s f(s,t) I_s holds elementwise.
inline WorkingModelDraw simulate_working(const WorkingModelSpec& spec) {
  const int T = spec.T;
  if (T < 10) throw ParameterError("simulate_working: T must be >= 10");
  if (!(spec.I1 > 0.0)) throw ParameterError("simulate_working: I1 must be positive");
  if (spec.delta_sd < 0.0 || spec.xi_sd < 0.0) {
    throw ParameterError("simulate_working: noise sds must be >= 0");
  }
  if (static_cast<int>(spec.c.size()) != T) {
    throw ParameterError("simulate_working: c must have length T");
  }
  if (spec.forced_mobility_raw && static_cast<int>(spec.forced_mobility_raw->size()) != T) {
    throw ParameterError("simulate_working: forced mobility must have length T");
  }

  Rng rng(spec.seed);
  const auto& pmf = spec.kernel.weekly_pmf;
  const int H = static_cast<int>(pmf.size());
  const bool exact = spec.delta_sd == 0.0 && spec.xi_sd == 0.0;

  std::vector<double> A(T), deaths(T);
  Eigen::VectorXd I(T), draw_deaths(T);
  double a1 = 0.0;
  double prevI = spec.I1;
  double prevL = 0.0;
  for (int t = 0; t < T; ++t) {
    if (spec.forced_mobility_raw) {
      A[t] = (*spec.forced_mobility_raw)[t];
    } else if (t == 0) {
      A[t] = spec.policy.a1;
    } else {
      A[t] = spec.policy.intercept + spec.policy.rho * A[t - 1] + spec.policy.kappa * prevL +
             (spec.policy.noise_sd > 0.0 ? rng.normal(0.0, spec.policy.noise_sd) : 0.0);
    }
    A[t] = std::min(std::max(A[t], 0.0), 1.0);
    if (t == 0) a1 = A[0];
    const double a_std = A[t] - a1;

    double it = prevI * std::exp(spec.c[t] + spec.gimel_beta * a_std);
    if (spec.delta_sd > 0.0) it += rng.normal(0.0, spec.delta_sd);
    it = std::max(it, 0.0);
    if (!(it < 1e12)) throw NumericError("simulate_working: infections overflow; reduce c_t");
    I(t) = it;
    prevI = it;

    double y = 0.0;
    for (int s = std::max(0, t - H + 1); s <= t; ++s) {
      const int lag = t - s;
      if (lag < H) y += pmf[lag] * I(s);
    }
    if (spec.xi_sd > 0.0) y += rng.normal(0.0, spec.xi_sd);
    draw_deaths(t) = y;
    const double floored = std::max(y, 0.0);
    deaths[t] = exact ? floored : std::nearbyint(floored);
    prevL = std::log1p(deaths[t]);
  }

  WorkingModelDraw out;
  out.series = make_region_series("sim", std::move(deaths), std::move(A));
  out.latent_infections = I;
  out.deaths_raw = draw_deaths;
  return out;
}

// Default raw anti-mobility path: climbs to a peak at week 9 then decays,
// like the observed stay-at-home series.
inline std::vector<double> default_anti_mobility_path(int T, double base = 0.10,
                                                      double scale = 0.10) {
  std::vector<double> a(T);
  for (int t = 0; t < T; ++t) {
    const double w = t + 1.0;
    const double hump = w <= 9 ? 0.25 * (w - 1) / 8.0 : 0.08 + 0.17 * std::exp(-(w - 9) / 12.0);
    a[t] = base + scale * hump;
  }
  return a;
}

// Blip-model trajectory: L_t = L_{t-1} + beta a_{t-delta} + r(t) + eps_t.
// In `level` mode eps_t = eta_t - eta_{t-1} with iid eta, so the implied
// MSM L_t = nu(t) + beta M_t + eta_t has stationary errors; `increment`
// mode uses iid eps_t directly (the MSM error is then a random walk).
struct BlipSimSpec {
  int T = 45;
  double beta = -5.0;
  std::vector<double> drift_coeffs;  // monomials of r(t), degree k-1
  int delta = 4;
  double noise_sd = 0.15;
  double L1 = 2.5;
  enum class NoiseMode { level, increment };
  NoiseMode noise_mode = NoiseMode::level;
  PolicyParams policy;
  // optional deterministic raw mobility; policy noise jitters around it
  std::optional<std::vector<double>> base_mobility_raw;
  std::uint64_t seed = 1;
};

inline RegionSeries simulate_blip(const BlipSimSpec& spec) {
  const int T = spec.T;
  if (T < 10) throw ParameterError("simulate_blip: T must be >= 10");
  if (spec.drift_coeffs.empty()) throw ParameterError("simulate_blip: drift_coeffs empty");
  if (spec.base_mobility_raw && static_cast<int>(spec.base_mobility_raw->size()) != T) {
    throw ParameterError("simulate_blip: base mobility must have length T");
  }

  Rng rng(spec.seed);
  const auto r_of = [&](int t_week) {
    double v = 0.0, p = 1.0;
    for (const double c : spec.drift_coeffs) {
      v += c * p;
      p *= t_week;
    }
    return v;
  };

  const bool level = spec.noise_mode == BlipSimSpec::NoiseMode::level;
  std::vector<double> A(T);
  std::vector<double> L(T), deaths(T);
  double a1 = 0.0;
  double det = spec.L1;  // noise-free level; in level mode L_t = det_t + eta_t
  for (int t = 0; t < T; ++t) {
    if (spec.base_mobility_raw) {
      // jitter around the base path; kappa feeds back the excess of log
      // deaths over the starting level, so confounding stays bounded
      A[t] = (*spec.base_mobility_raw)[t] +
             (t > 0 ? spec.policy.kappa * (L[t - 1] - spec.L1) : 0.0) +
             (spec.policy.noise_sd > 0.0 ? rng.normal(0.0, spec.policy.noise_sd) : 0.0);
    } else if (t == 0) {
      A[t] = spec.policy.a1;
    } else {
      A[t] = spec.policy.intercept + spec.policy.rho * A[t - 1] + spec.policy.kappa * L[t - 1] +
             (spec.policy.noise_sd > 0.0 ? rng.normal(0.0, spec.policy.noise_sd) : 0.0);
    }
    A[t] = std::min(std::max(A[t], 0.0), 1.0);
    if (t == 0) a1 = A[0];

    if (t > 0) {
      const int lag_idx = t - spec.delta;  // 0-based index of a_{t+1-delta}
      const double a_lag = lag_idx >= 0 ? A[lag_idx] - a1 : 0.0;
      double eps = 0.0;
      if (!level && spec.noise_sd > 0.0) eps = rng.normal(0.0, spec.noise_sd);
      det += spec.beta * a_lag + r_of(t + 1) + eps;
    }
    const double eta = (level && spec.noise_sd > 0.0) ? rng.normal(0.0, spec.noise_sd) : 0.0;
    L[t] = det + eta;
  }

  for (int t = 0; t < T; ++t) {
    const double y = std::expm1(L[t]);
    if (y < 0.0) {
      throw NumericError("simulate_blip: log deaths went negative at week " +
                         std::to_string(t + 1) + "; adjust drift or L1");
    }
    deaths[t] = y;
  }
  return make_region_series("sim", std::move(deaths), std::move(A));
}

// A small sequentially specified model: treatments and outcomes drawn one
// step at a time from user closures. `a` holds treatments drawn so far
// (including the current one for the outcome draw), `y` past outcomes.
struct SequentialDgp {
  int horizon = 2;
  std::function<double(Rng&, const std::vector<double>& a, const std::vector<double>& y)>
      draw_treatment;
  std::function<double(Rng&, const std::vector<double>& a, const std::vector<double>& y)>
      draw_outcome;
};

// Monte-Carlo g-formula: simulate with the treatment sequence forced to
// `path` (or drawn from the policy when empty) and average the final
// outcome. Returns (mean, mc standard error).
struct OracleValue {
  double mean = 0.0;
  double se = 0.0;
};

inline OracleValue g_formula_oracle(const SequentialDgp& dgp, const std::vector<double>& path,
                                    std::int64_t n_mc, std::uint64_t seed = 7) {
  if (dgp.horizon < 1 || dgp.horizon > 6) {
    throw ParameterError("g_formula_oracle: horizon must be in 1..6");
  }
  if (n_mc < 100000) throw ParameterError("g_formula_oracle: n_mc must be >= 1e5");
  if (!path.empty() && static_cast<int>(path.size()) != dgp.horizon) {
    throw ParameterError("g_formula_oracle: path length must equal horizon");
  }
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  std::vector<double> a, y;
  for (std::int64_t i = 0; i < n_mc; ++i) {
    a.clear();
    y.clear();
    double last = 0.0;
    for (int s = 0; s < dgp.horizon; ++s) {
      a.push_back(path.empty() ? dgp.draw_treatment(rng, a, y) : path[s]);
      last = dgp.draw_outcome(rng, a, y);
      y.push_back(last);
    }
    sum += last;
    sumsq += last * last;
  }
  OracleValue out;
  out.mean = sum / static_cast<double>(n_mc);
  const double var = sumsq / static_cast<double>(n_mc) - out.mean * out.mean;
  out.se = std::sqrt(std::max(var, 0.0) / static_cast<double>(n_mc));
  return out;
}

// The four-variable snippet (A0, I1, A1, I2) on the log scale with a
// latent U loading (1,1) on log I1 and log I2. With the theta arrows zero
// this is the null-paradox setup: I2 depends on nothing but U, yet the
// fitted sequential model links it to (A0, A1) through the I1 collider.
struct SnippetModel {
  double beta0 = 1.0;     // log I1 intercept
  double b1 = 1.0;        // A0 -> log I1
  double u_sd = 1.0;      // latent U scale
  double eps_sd = 0.5;    // log I1 noise
  double delta_sd = 0.5;  // log I2 noise
  double theta0 = 0.5;
  double theta1 = 0.0;    // A0 -> log I2
  double theta2 = 0.0;    // log I1 -> log I2
  double theta3 = 0.0;    // A1 -> log I2
  double pol_c0 = 0.0, pol_c1 = 0.5, pol_c2 = 0.5, pol_sd = 0.5;  // A1 | (A0, log I1)
};

inline SequentialDgp snippet_dgp(const SnippetModel& m, std::shared_ptr<double> u_store = nullptr) {
  SequentialDgp dgp;
  dgp.horizon = 2;
  auto u_holder = u_store ? u_store : std::make_shared<double>(0.0);
  dgp.draw_treatment = [m](Rng& rng, const std::vector<double>& a,
                           const std::vector<double>& y) {
    if (a.empty()) return rng.normal(0.0, 1.0);  // A0
    return m.pol_c0 + m.pol_c1 * a[0] + m.pol_c2 * y[0] + rng.normal(0.0, m.pol_sd);  // A1
  };
  dgp.draw_outcome = [m, u_holder](Rng& rng, const std::vector<double>& a,
                                   const std::vector<double>& y) {
    if (y.empty()) {
      *u_holder = m.u_sd > 0.0 ? rng.normal(0.0, m.u_sd) : 0.0;
      return m.beta0 + m.b1 * a[0] + *u_holder + rng.normal(0.0, m.eps_sd);  // log I1
    }
    return m.theta0 + m.theta1 * a[0] + m.theta2 * y[0] + m.theta3 * a[1] + *u_holder +
           rng.normal(0.0, m.delta_sd);  // log I2
  };
  return dgp;
}

// E[log I2^{a0,a1}] in closed form for the snippet model.
inline double snippet_psi(const SnippetModel& m, double a0, double a1) {
  const double mean_logI1 = m.beta0 + m.b1 * a0;
  return m.theta0 + m.theta1 * a0 + m.theta2 * mean_logI1 + m.theta3 * a1;
}

struct NullParadoxResult {
  double plugin_effect = 0.0;
  double plugin_se = 0.0;
  double plugin_tstat = 0.0;
  double msm_effect = 0.0;
  double msm_se = 0.0;
  double msm_tstat = 0.0;
};

// Simulates n draws of the snippet model, then contrasts the plug-in
// parametric g-computation effect psi(1,1) - psi(0,0) with the IPW-weighted
// marginal contrast. Under the null with strong U, the plug-in rejects and
// the weighted contrast stays calibrated.
inline NullParadoxResult null_paradox_demo(int n, std::uint64_t seed,
                                           const SnippetModel& model = {}) {
  if (n < 500) throw ParameterError("null_paradox_demo: n must be >= 500");
  Rng rng(seed);

  Eigen::VectorXd A0(n), logI1(n), A1(n), logI2(n);
  for (int i = 0; i < n; ++i) {
    const double a0 = rng.normal(0.0, 1.0);
    const double u = model.u_sd > 0.0 ? rng.normal(0.0, model.u_sd) : 0.0;
    const double li1 = model.beta0 + model.b1 * a0 + u + rng.normal(0.0, model.eps_sd);
    const double a1 =
        model.pol_c0 + model.pol_c1 * a0 + model.pol_c2 * li1 + rng.normal(0.0, model.pol_sd);
    const double li2 = model.theta0 + model.theta1 * a0 + model.theta2 * li1 +
                       model.theta3 * a1 + u + rng.normal(0.0, model.delta_sd);
    A0(i) = a0;
    logI1(i) = li1;
    A1(i) = a1;
    logI2(i) = li2;
  }

  NullParadoxResult out;
  {
    // plug-in: ML fit of the sequential model, g-computation effect
    // psi_hat(a) = th0 + th1 a0 + th2 beta0_hat + th3 a1
    Eigen::MatrixXd X(n, 4);
    X.col(0).setOnes();
    X.col(1) = A0;
    X.col(2) = logI1;
    X.col(3) = A1;
    const auto ls = ols(X, logI2);
    out.plugin_effect = ls.coef(1) + ls.coef(3);
    const double var = ls.sigma2 * (ls.xtx_inv(1, 1) + ls.xtx_inv(3, 3) + 2.0 * ls.xtx_inv(1, 3));
    out.plugin_se = std::sqrt(std::max(var, 0.0));
    out.plugin_tstat = out.plugin_effect / out.plugin_se;
  }
  {
    // stabilized density-ratio weights for A1 (A0 is exogenous by design)
    Eigen::MatrixXd Xp(n, 3);
    Xp.col(0).setOnes();
    Xp.col(1) = A0;
    Xp.col(2) = logI1;
    const auto pol = ols(Xp, A1);
    const double denom_sd = std::sqrt(pol.rss / n);
    const double num_mean = A1.mean();
    const double num_sd = std::sqrt((A1.array() - num_mean).square().sum() / n);
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) {
      const double zd = (A1(i) - pol.fitted(i)) / denom_sd;
      const double zn = (A1(i) - num_mean) / num_sd;
      w(i) = (denom_sd / num_sd) * std::exp(-0.5 * zn * zn + 0.5 * zd * zd);
    }

    Eigen::MatrixXd X(n, 3);
    X.col(0).setOnes();
    X.col(1) = A0;
    X.col(2) = A1;
    const Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd b = XtWX.fullPivLu().solve(X.transpose() * (w.array() * logI2.array()).matrix());
    const Eigen::VectorXd resid = logI2 - X * b;
    const Eigen::MatrixXd V = hac_covariance(X, w, resid, 0);
    out.msm_effect = b(1) + b(2);
    const double var = V(1, 1) + V(2, 2) + 2.0 * V(1, 2);
    out.msm_se = std::sqrt(std::max(var, 0.0));
    out.msm_tstat = out.msm_effect / out.msm_se;
  }
  return out;
}

}  // namespace epimsm
