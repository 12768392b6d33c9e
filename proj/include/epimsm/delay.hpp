#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/gamma.hpp>
#include <cmath>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

#include "epimsm/random.hpp"
#include "epimsm/types.hpp"

namespace epimsm {

// Infection-to-death delay: a Gamma on the day scale, discretized into
// weekly lag bins, plus its point-mass approximation in whole weeks.
struct DelayKernel {
  double mean_days = 0.0;
  double cv = 0.0;
  double shape = 0.0;
  double scale = 0.0;
  std::vector<double> weekly_pmf;  // index = lag in weeks; weekly_pmf[0] == 0
  int delta_weeks = 0;
};

// Bins the Gamma into weeks centered on multiples of 7 days, so lag w covers
// (7w-3.5, 7w+3.5]. Week 0 carries no mass (deaths lag infections by at
// least one week) and the tail past `horizon_weeks` is folded back by
// renormalization.
inline DelayKernel build_gamma_kernel(double mean_days, double cv, int horizon_weeks) {
  if (!(mean_days > 0.0)) throw ParameterError("build_gamma_kernel: mean_days must be positive");
  if (!(cv > 0.0 && cv < 2.0)) throw ParameterError("build_gamma_kernel: cv must be in (0,2)");
  if (horizon_weeks < 1) throw ParameterError("build_gamma_kernel: horizon must be >= 1");

  DelayKernel k;
  k.mean_days = mean_days;
  k.cv = cv;
  k.shape = 1.0 / (cv * cv);
  k.scale = mean_days * cv * cv;
  const boost::math::gamma_distribution<double> g(k.shape, k.scale);

  k.weekly_pmf.assign(horizon_weeks + 1, 0.0);
  double total = 0.0;
  for (int w = 1; w <= horizon_weeks; ++w) {
    const double lo = std::max(0.0, 7.0 * w - 3.5);
    const double hi = 7.0 * w + 3.5;
    k.weekly_pmf[w] = boost::math::cdf(g, hi) - boost::math::cdf(g, lo);
    total += k.weekly_pmf[w];
  }
  if (total <= 0.0) throw ParameterError("build_gamma_kernel: no mass within horizon");
  for (auto& p : k.weekly_pmf) p /= total;

  k.delta_weeks = std::max(1, static_cast<int>(std::ceil(mean_days / 7.0 - 1e-9)));
  return k;
}

// Monte-Carlo moments of the sum of two independent Gammas given as
// (mean, cv) pairs; used to check a single-Gamma refit of a convolution.
struct ComposedDelay {
  double mean = 0.0;
  double cv = 0.0;
};

inline ComposedDelay compose_delay(double mean1, double cv1, double mean2, double cv2,
                                   std::int64_t n_draws, std::uint64_t seed = 20200215) {
  if (!(mean1 > 0.0 && cv1 > 0.0 && mean2 > 0.0 && cv2 > 0.0)) {
    throw ParameterError("compose_delay: both components require positive mean and cv");
  }
  if (n_draws < 100000) throw ParameterError("compose_delay: n_draws must be >= 1e5");

  const double shape1 = 1.0 / (cv1 * cv1), scale1 = mean1 * cv1 * cv1;
  const double shape2 = 1.0 / (cv2 * cv2), scale2 = mean2 * cv2 * cv2;
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  for (std::int64_t i = 0; i < n_draws; ++i) {
    const double x = rng.gamma(shape1, scale1) + rng.gamma(shape2, scale2);
    sum += x;
    sumsq += x * x;
  }
  ComposedDelay out;
  out.mean = sum / static_cast<double>(n_draws);
  const double var = sumsq / static_cast<double>(n_draws) - out.mean * out.mean;
  out.cv = std::sqrt(std::max(var, 0.0)) / out.mean;
  return out;
}

// Lower-triangular convolution matrix: F(i,j) = pmf[i-j] for j <= i, zero
// diagonal since the pmf has no week-0 mass.
inline Eigen::MatrixXd build_F(const DelayKernel& kernel, int T) {
  if (T < 2) throw ParameterError("build_F: T must be >= 2");
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(T, T);
  const int H = static_cast<int>(kernel.weekly_pmf.size());
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j <= i; ++j) {
      const int lag = i - j;
      if (lag < H) F(i, j) = kernel.weekly_pmf[lag];
    }
  }
  return F;
}

inline nlohmann::json kernel_to_json(const DelayKernel& k) {
  return nlohmann::json{{"mean_days", k.mean_days},
                        {"cv", k.cv},
                        {"weekly_pmf", k.weekly_pmf},
                        {"delta_weeks", k.delta_weeks}};
}

}  // namespace epimsm
