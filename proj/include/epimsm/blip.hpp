#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "epimsm/linreg.hpp"
#include "epimsm/types.hpp"

namespace epimsm {

// AR(1) blip regression: L_t - L_{t-1} on (1, t, ..., t^{k-1}, a_{t-delta}).
struct BlipFit {
  std::string region;
  int k = 0;
  int delta = 0;
  double beta = 0.0;
  double se_beta = 0.0;
  Eigen::VectorXd drift_coeffs;  // monomial coefficients of r(t), degree k-1
  double sigma2 = 0.0;           // RSS / n_eff (Gaussian ML variance)
  double aic = 0.0;
  Eigen::VectorXd residuals;
  int t_start = 0;  // first 1-based week entering the regression
};

namespace detail {

struct BlipDesign {
  Eigen::MatrixXd X;
  Eigen::VectorXd dL;
  int t_start;  // 1-based
};

inline BlipDesign blip_design(const RegionSeries& series, int k, int delta) {
  const int T = series.T();
  const int t_start = std::max(2, delta + 1);  // need L_{t-1} and a_{t-delta}
  const int n = T - t_start + 1;
  BlipDesign d;
  d.t_start = t_start;
  d.X.resize(n, k + 1);
  d.dL.resize(n);
  for (int i = 0; i < n; ++i) {
    const int t = t_start + i;  // 1-based week
    d.dL(i) = series.log_deaths[t - 1] - series.log_deaths[t - 2];
    for (int j = 0; j < k; ++j) d.X(i, j) = std::pow(static_cast<double>(t), j);
    d.X(i, k) = series.mobility[t - 1 - delta];
  }
  return d;
}

}  // namespace detail

inline BlipFit fit_blip(const RegionSeries& series, int k, int delta) {
  const int T = series.T();
  if (k < 1) throw ParameterError("fit_blip: k must be >= 1");
  if (T <= k + delta + 2) throw ParameterError("fit_blip: series too short for k and delta");

  const auto d = detail::blip_design(series, k, delta);
  const auto ls = ols(d.X, d.dL);
  if (ls.rank_deficient) {
    throw RankError("fit_blip: collinear design (drift polynomial vs mobility column)");
  }

  BlipFit fit;
  fit.region = series.region_id;
  fit.k = k;
  fit.delta = delta;
  fit.beta = ls.coef(k);
  fit.se_beta = ls.se(k);
  fit.drift_coeffs = ls.coef.head(k);
  fit.residuals = ls.residuals;
  fit.t_start = d.t_start;
  const int n = ls.n;
  const int p = k + 2;  // drift + beta + variance
  fit.sigma2 = ls.rss / n;
  fit.aic = n * std::log(ls.rss / n) + 2.0 * p;
  return fit;
}

// AIC-minimizing drift degree, ties broken toward smaller k. All candidates
// share the same rows, so the criteria are comparable.
inline int select_k(const RegionSeries& series, int k_max, int delta) {
  if (k_max < 1) throw ParameterError("select_k: k_max must be >= 1");
  int best_k = 1;
  double best_aic = fit_blip(series, 1, delta).aic;
  for (int k = 2; k <= k_max; ++k) {
    const double aic = fit_blip(series, k, delta).aic;
    if (aic < best_aic - 1e-12) {
      best_aic = aic;
      best_k = k;
    }
  }
  return best_k;
}

// Three-lag regressions probing the first-order Markov assumption: one for
// mobility given its own and log-death history, one for log deaths.
// t-statistics ordered (alpha_1..3, beta_1..3).
struct MarkovDiagnostics {
  std::array<double, 6> t_stats_A{};
  std::array<double, 6> t_stats_L{};
  bool near_singular_A = false;
  bool near_singular_L = false;
};

inline MarkovDiagnostics markov_diagnostics(const RegionSeries& series, int delta) {
  const int T = series.T();
  if (T <= 10) throw ParameterError("markov_diagnostics: series too short");
  MarkovDiagnostics out;
  const auto& a = series.mobility;
  const auto& L = series.log_deaths;

  {
    // A_{t-d} ~ A_{t-1-d}, A_{t-2-d}, A_{t-3-d}, L_{t-1-d}, L_{t-2-d}, L_{t-3-d};
    // substituting s = t-d this is A_s on three lags of A and L, s = 4..T
    const int n = T - 3;
    Eigen::MatrixXd X(n, 7);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      const int s = 4 + i;  // 1-based
      y(i) = a[s - 1];
      X(i, 0) = 1.0;
      for (int l = 1; l <= 3; ++l) X(i, l) = a[s - 1 - l];
      for (int l = 1; l <= 3; ++l) X(i, 3 + l) = L[s - 1 - l];
    }
    const auto ls = ols(X, y);
    out.near_singular_A = ls.rank_deficient;
    for (int j = 0; j < 6; ++j) out.t_stats_A[j] = ls.t_stat(j + 1);
  }
  {
    // L_t ~ A_{t-d}, A_{t-d-1}, A_{t-d-2}, L_{t-1}, L_{t-2}, L_{t-3}
    const int t_start = std::max(delta + 3, 4);
    const int n = T - t_start + 1;
    Eigen::MatrixXd X(n, 7);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      const int t = t_start + i;
      y(i) = L[t - 1];
      X(i, 0) = 1.0;
      for (int l = 0; l < 3; ++l) X(i, 1 + l) = a[t - 1 - delta - l];
      for (int l = 1; l <= 3; ++l) X(i, 3 + l) = L[t - 1 - l];
    }
    const auto ls = ols(X, y);
    out.near_singular_L = ls.rank_deficient;
    for (int j = 0; j < 6; ++j) out.t_stats_L[j] = ls.t_stat(j + 1);
  }
  return out;
}

struct PooledFit {
  double beta = 0.0;
  double se = 0.0;
  int k = 0;
};

// Stacked blip fit: common beta, per-region fixed intercept, per-region
// drift coefficients of common degree. se from the pooled residual
// variance. With one region this is exactly fit_blip.
inline PooledFit fit_pooled(const std::vector<RegionSeries>& all_series, int k, int delta) {
  if (all_series.empty()) throw ParameterError("fit_pooled: no series");
  const int R = static_cast<int>(all_series.size());

  int n_total = 0;
  for (const auto& s : all_series) {
    if (s.T() <= k + delta + 2) {
      throw ParameterError("fit_pooled: series '" + s.region_id + "' too short");
    }
    n_total += s.T() - std::max(2, delta + 1) + 1;
  }

  const int p = R * k + 1;  // per-region drift blocks + common beta
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n_total, p);
  Eigen::VectorXd y(n_total);
  int row = 0;
  for (int r = 0; r < R; ++r) {
    const auto d = detail::blip_design(all_series[r], k, delta);
    const int n = static_cast<int>(d.X.rows());
    X.block(row, r * k, n, k) = d.X.leftCols(k);
    X.col(p - 1).segment(row, n) = d.X.col(k);
    y.segment(row, n) = d.dL;
    row += n;
  }
  const auto ls = ols(X, y);
  PooledFit out;
  out.beta = ls.coef(p - 1);
  out.se = ls.se(p - 1);
  out.k = k;
  return out;
}

inline void write_markov_csv(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, MarkovDiagnostics>>& rows) {
  std::ofstream out(path);
  out << "region,coef,t_stat,equation\n";
  const char* names[6] = {"alpha1", "alpha2", "alpha3", "beta1", "beta2", "beta3"};
  for (const auto& [region, diag] : rows) {
    for (int j = 0; j < 6; ++j) {
      out << region << ',' << names[j] << ',' << diag.t_stats_A[j] << ",A\n";
    }
    for (int j = 0; j < 6; ++j) {
      out << region << ',' << names[j] << ',' << diag.t_stats_L[j] << ",L\n";
    }
  }
}

inline nlohmann::json pooled_to_json(const PooledFit& f) {
  return nlohmann::json{{"k", f.k}, {"beta", f.beta}, {"se", f.se}};
}

inline nlohmann::json blip_to_json(const BlipFit& f) {
  return nlohmann::json{{"region", f.region},
                        {"k", f.k},
                        {"delta", f.delta},
                        {"beta", f.beta},
                        {"se_beta", f.se_beta},
                        {"drift_coeffs", std::vector<double>(f.drift_coeffs.data(),
                                                             f.drift_coeffs.data() + f.k)},
                        {"sigma2", f.sigma2},
                        {"aic", f.aic}};
}

}  // namespace epimsm
