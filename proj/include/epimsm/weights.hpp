#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "epimsm/linreg.hpp"
#include "epimsm/types.hpp"

namespace epimsm {

// One moment constraint is a pair of component functions, one applied to
// current mobility and one to last week's deaths.
struct MomentPair {
  std::string h1;  // "a" or "a2"
  std::string h2;  // "y" or "y2"
};

inline std::vector<MomentPair> default_moment_pairs() {
  return {{"a", "y"}, {"a", "y2"}, {"a2", "y"}, {"a2", "y2"}};
}

namespace detail {

inline double apply_h(const std::string& label, double x) {
  if (label == "a" || label == "y") return x;
  if (label == "a2" || label == "y2") return x * x;
  throw ParameterError("unknown moment function label '" + label + "'");
}

}  // namespace detail

// Fitted conditional means of the component functions under the
// homogeneous Markov(k) assumption. Entries are NaN for weeks whose lags
// fall before the start of the series.
struct ConditionalMeans {
  Eigen::MatrixXd mu;  // T x J, mu(t,j) = fitted E[h1_j(a_t) | a lags]
  Eigen::MatrixXd nu;  // T x J, nu(t,j) = fitted E[h2_j(Y_{t-1}) | a,Y lags]
  int first_usable = 0;  // 0-based index of the first week with both defined
};

inline ConditionalMeans fit_conditional_means(const RegionSeries& series, int k, int delta,
                                              const std::vector<MomentPair>& pairs) {
  const int T = series.T();
  if (k < 1) throw ParameterError("fit_conditional_means: k must be >= 1");
  if (T <= k + delta + 2) throw ParameterError("fit_conditional_means: series too short for k and delta");

  const auto& a = series.mobility;
  const auto& y = series.deaths;
  const int J = static_cast<int>(pairs.size());

  // 1-based weeks: mu regression usable for t >= k+1, nu for
  // t >= max(k+delta+1, k+2). Stored 0-based.
  const int mu_start = k;                                // 0-based t index
  const int nu_start = std::max(k + delta, k + 1);
  ConditionalMeans cm;
  cm.mu = Eigen::MatrixXd::Constant(T, J, std::nan(""));
  cm.nu = Eigen::MatrixXd::Constant(T, J, std::nan(""));
  cm.first_usable = std::max(mu_start, nu_start);

  const int n_mu = T - mu_start;
  Eigen::MatrixXd Xmu(n_mu, 1 + k);
  for (int i = 0; i < n_mu; ++i) {
    const int t = mu_start + i;
    Xmu(i, 0) = 1.0;
    for (int l = 1; l <= k; ++l) Xmu(i, l) = a[t - l];
  }
  for (int l = 1; l <= k; ++l) {
    if (is_constant(Xmu.col(l))) {
      throw RankError("fit_conditional_means: mobility lag " + std::to_string(l) +
                      " is constant");
    }
  }

  const int n_nu = T - nu_start;
  Eigen::MatrixXd Xnu(n_nu, 1 + 2 * k);
  for (int i = 0; i < n_nu; ++i) {
    const int t = nu_start + i;
    Xnu(i, 0) = 1.0;
    for (int l = 1; l <= k; ++l) Xnu(i, l) = a[t - l - delta];
    for (int l = 1; l <= k; ++l) Xnu(i, k + l) = y[t - 1 - l];
  }
  for (int c = 1; c < Xnu.cols(); ++c) {
    if (is_constant(Xnu.col(c))) {
      const bool is_a = c <= k;
      throw RankError(std::string("fit_conditional_means: ") + (is_a ? "mobility" : "deaths") +
                      " lag regressor " + std::to_string(is_a ? c : c - k) + " is constant");
    }
  }

  for (int j = 0; j < J; ++j) {
    Eigen::VectorXd ymu(n_mu);
    for (int i = 0; i < n_mu; ++i) ymu(i) = detail::apply_h(pairs[j].h1, a[mu_start + i]);
    const auto fit_mu = ols(Xmu, ymu);
    for (int i = 0; i < n_mu; ++i) cm.mu(mu_start + i, j) = fit_mu.fitted(i);

    Eigen::VectorXd ynu(n_nu);
    for (int i = 0; i < n_nu; ++i) ynu(i) = detail::apply_h(pairs[j].h2, y[nu_start + i - 1]);
    const auto fit_nu = ols(Xnu, ynu);
    for (int i = 0; i < n_nu; ++i) cm.nu(nu_start + i, j) = fit_nu.fitted(i);
  }
  return cm;
}

// T x (J+1) constraint matrix: leading ones column, then centered products
// H_tj = (h1_j(a_t) - mu_j(t)) (h2_j(Y_{t-1}) - nu_j(t)). Weeks without the
// needed lags get the row (1, 0, ..., 0), pulling their weights toward the
// uniform feasible solution.
inline Eigen::MatrixXd build_H(const RegionSeries& series, const ConditionalMeans& cm,
                               const std::vector<MomentPair>& pairs) {
  const int T = series.T();
  const int J = static_cast<int>(pairs.size());
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(T, J + 1);
  H.col(0).setOnes();
  for (int t = cm.first_usable; t < T; ++t) {
    for (int j = 0; j < J; ++j) {
      const double h1 = detail::apply_h(pairs[j].h1, series.mobility[t]) - cm.mu(t, j);
      const double h2 = detail::apply_h(pairs[j].h2, series.deaths[t - 1]) - cm.nu(t, j);
      H(t, j + 1) = h1 * h2;
    }
  }
  return H;
}

struct WeightVector {
  Eigen::VectorXd values;            // W_1..W_T, sums to T
  Eigen::VectorXd moment_residuals;  // achieved (1/T) sum_t H_tj W_t per constraint
  int markov_order = 1;
  std::vector<MomentPair> pairs;
  std::vector<int> boundary_rows;    // 0-based rows that got the (1,0,...) fill
  bool pseudo_inverse_used = false;
  int negative_count = 0;
};

// Closed-form minimizer of (1/2) sum (1-W_t)^2 subject to sum W_t = T and
// sum_t H_tj W_t = 0: W = 1 - H (H'H)^{-1} (H'1 - D), D = (T, 0, ..., 0)'.
// Columns are rescaled to unit RMS before the solve; the minimizer is
// invariant to that scaling but the Gram matrix conditioning is not.
inline WeightVector solve_weights(const Eigen::MatrixXd& H, int T) {
  if (H.rows() != T) throw ParameterError("solve_weights: H must have T rows");
  const int m = static_cast<int>(H.cols());

  Eigen::MatrixXd Hs = H;
  Eigen::VectorXd colscale = Eigen::VectorXd::Ones(m);
  for (int j = 1; j < m; ++j) {
    const double rms = std::sqrt(H.col(j).squaredNorm() / T);
    if (rms > 0.0) {
      colscale(j) = rms;
      Hs.col(j) /= rms;
    }
  }

  Eigen::VectorXd D = Eigen::VectorXd::Zero(m);
  D(0) = static_cast<double>(T);
  const Eigen::VectorXd rhs = Hs.transpose() * Eigen::VectorXd::Ones(T) - D;
  const Eigen::MatrixXd G = Hs.transpose() * Hs;

  WeightVector out;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  Eigen::VectorXd z;
  const double cond_proxy =
      G.diagonal().maxCoeff() / std::max(ldlt.vectorD().minCoeff(), 1e-300);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0 || cond_proxy > 1e12) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(G);
    cod.setThreshold(1e-12);
    z = cod.solve(rhs);
    out.pseudo_inverse_used = true;
  } else {
    z = ldlt.solve(rhs);
  }

  out.values = Eigen::VectorXd::Ones(T) - Hs * z;
  out.moment_residuals.resize(m - 1);
  for (int j = 1; j < m; ++j) {
    out.moment_residuals(j - 1) = H.col(j).dot(out.values) / T;
  }
  out.negative_count = static_cast<int>((out.values.array() < 0.0).count());
  return out;
}

// Full pipeline: Markov regressions, constraint matrix, closed-form solve.
inline WeightVector estimate_weights(const RegionSeries& series, int k = 1, int delta = 4,
                                     std::vector<MomentPair> pairs = default_moment_pairs()) {
  const auto cm = fit_conditional_means(series, k, delta, pairs);
  const auto H = build_H(series, cm, pairs);
  WeightVector w = solve_weights(H, series.T());
  w.markov_order = k;
  w.pairs = std::move(pairs);
  for (int t = 0; t < cm.first_usable; ++t) w.boundary_rows.push_back(t);
  return w;
}

inline void write_weight_diagnostics(const std::filesystem::path& csv_path,
                                     const std::filesystem::path& json_path,
                                     const WeightVector& w) {
  std::ofstream csv(csv_path);
  csv << "t,weight,row_flag\n";
  for (int t = 0; t < w.values.size(); ++t) {
    const bool boundary =
        std::find(w.boundary_rows.begin(), w.boundary_rows.end(), t) != w.boundary_rows.end();
    csv << (t + 1) << ',' << w.values(t) << ',' << (boundary ? "boundary" : "ok") << '\n';
  }
  nlohmann::json j;
  j["markov_order"] = w.markov_order;
  j["pseudo_inverse_used"] = w.pseudo_inverse_used;
  j["negative_count"] = w.negative_count;
  j["moment_residuals"] = std::vector<double>(
      w.moment_residuals.data(), w.moment_residuals.data() + w.moment_residuals.size());
  std::ofstream(json_path) << j.dump(2) << '\n';
}

}  // namespace epimsm
