#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "epimsm/delay.hpp"
#include "epimsm/msm.hpp"
#include "epimsm/optimize.hpp"
#include "epimsm/types.hpp"

namespace epimsm {

// Scaled latent infections recovered from deaths by penalized non-negative
// deconvolution. `infections` has length T-1: the first row and last
// column of F are dropped so the trimmed system has a nonzero diagonal.
struct DeconvResult {
  Eigen::VectorXd infections;      // I~_1..I~_{T-1}
  double lambda = 0.0;
  Eigen::VectorXd implied_deaths;  // F~ I~, aligned with Y_2..Y_T
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
};

// minimize over I >= 0:  ||Y - F I||^2 + lambda * sum (I_r - I_{r-1})^2
// with Y = (Y_2..Y_T) and the trimmed F. Solved by the box-constrained
// quasi-Newton with an analytic gradient, warm-started from a uniform
// positive vector.
inline DeconvResult deconvolve(const RegionSeries& series, const DelayKernel& kernel,
                               double lambda) {
  const int T = series.T();
  if (lambda < 0.0) throw ParameterError("deconvolve: lambda must be >= 0");
  if (T < 6) throw ParameterError("deconvolve: T must be >= 6");

  const Eigen::MatrixXd F = build_F(kernel, T);
  const int n = T - 1;
  const Eigen::MatrixXd Ft = F.block(1, 0, n, n);  // drop first row, last column
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = series.deaths[i + 1];

  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n - 1, n);
  for (int i = 0; i < n - 1; ++i) {
    D(i, i) = -1.0;
    D(i, i + 1) = 1.0;
  }

  const auto objective = [&](const Eigen::VectorXd& x) {
    return (y - Ft * x).squaredNorm() + lambda * (D * x).squaredNorm();
  };
  const auto gradient = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return -2.0 * Ft.transpose() * (y - Ft * x) + 2.0 * lambda * (D.transpose() * (D * x));
  };

  const double warm = std::max(y.mean(), 1.0);
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(n, warm);
  const Eigen::VectorXd lo = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd hi =
      Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());

  const auto r = minimize_box(objective, gradient, x0, lo, hi);

  DeconvResult out;
  out.infections = r.x;
  out.lambda = lambda;
  out.implied_deaths = Ft * r.x;
  out.objective = r.objective;
  out.converged = r.converged;
  out.iterations = r.iterations;
  return out;
}

// Refit the MSM on log infections: outcome log(max(I~_t, 0.5)), undelayed
// cumulative mobility (delta = 0), over the T-1 infection weeks.
inline MsmFit refit_on_infections(const DeconvResult& result, const RegionSeries& series,
                                  const WeightVector& weights, int k) {
  const int n = static_cast<int>(result.infections.size());
  if (result.infections.maxCoeff() <= 0.0) {
    throw NumericError("refit_on_infections: all infections are zero");
  }

  RegionSeries infection_series;
  infection_series.region_id = series.region_id;
  infection_series.population = series.population;
  for (int t = 0; t < n; ++t) {
    const double inf = std::max(result.infections(t), 0.5);
    infection_series.week_index.push_back(t + 1);
    infection_series.deaths.push_back(inf);  // stands in for the outcome count
    infection_series.mobility_raw.push_back(series.mobility_raw[t]);
    infection_series.mobility.push_back(series.mobility[t]);
    infection_series.log_deaths.push_back(std::log(inf));
  }

  WeightVector w = weights;
  w.values = weights.values.head(n);
  return fit_msm(infection_series, w, k, /*delta=*/0);
}

inline void write_deconv_csv(const std::filesystem::path& path, const RegionSeries& series,
                             const DeconvResult& r) {
  std::ofstream out(path);
  out << "t,infections_scaled,implied_deaths,observed_deaths\n";
  for (int t = 0; t < r.infections.size(); ++t) {
    out << (t + 1) << ',' << r.infections(t) << ',' << r.implied_deaths(t) << ','
        << series.deaths[t + 1] << '\n';
  }
}

}  // namespace epimsm
