#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "epimsm/msm.hpp"
#include "epimsm/optimize.hpp"
#include "epimsm/random.hpp"
#include "epimsm/types.hpp"

namespace epimsm {

// Smallest Delta (confounding in standard-error units added to the CI
// half-width) at which the enlarged interval for beta reaches 0.
inline double delta_critical(const MsmFit& fit, double alpha = 0.05) {
  if (!(fit.se_beta > 0.0)) throw ParameterError("delta_critical: se(beta) must be positive");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  return std::max(0.0, std::abs(fit.beta) / fit.se_beta - z);
}

struct GammaBounds {
  double lo = 0.0;
  double hi = 0.0;
};

namespace detail {

// beta as a function of the perturbed weights; coordinatewise it is a
// ratio of affine functions, so box extremes sit at vertices.
struct BetaOfWeights {
  Eigen::MatrixXd X;
  Eigen::VectorXd L;
  int p;

  double operator()(const Eigen::VectorXd& w) const {
    const Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd b = A.fullPivLu().solve(X.transpose() * (w.array() * L.array()).matrix());
    return b(p - 1);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    const Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    const Eigen::VectorXd b = lu.solve(X.transpose() * (w.array() * L.array()).matrix());
    const Eigen::VectorXd resid = L - X * b;
    // d beta / d w_t = [A^{-1} x_t]_p (L_t - x_t' b)
    const Eigen::MatrixXd Arow = lu.inverse().row(p - 1);  // 1 x p
    Eigen::VectorXd g(w.size());
    for (int t = 0; t < w.size(); ++t) {
      g(t) = (Arow * X.row(t).transpose())(0) * resid(t);
    }
    return g;
  }
};

inline double polish_vertexwise(const BetaOfWeights& beta_fn, Eigen::VectorXd& w,
                                const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                double value, int sign) {
  // coordinate flips to box endpoints while they improve sign*beta
  for (int pass = 0; pass < 8; ++pass) {
    bool improved = false;
    for (int t = 0; t < w.size(); ++t) {
      if (lo(t) == hi(t)) continue;
      const double saved = w(t);
      for (const double cand : {lo(t), hi(t)}) {
        if (cand == saved) continue;
        w(t) = cand;
        const double v = beta_fn(w);
        if (sign * v > sign * value + 1e-12) {
          value = v;
          improved = true;
        } else {
          w(t) = saved;
        }
        if (w(t) == cand) break;
      }
    }
    if (!improved) break;
  }
  return value;
}

}  // namespace detail

// Extremes of the weighted-least-squares beta over the weight box
// W_t / Gamma <= W~_t <= Gamma W_t. Non-positive weights are held fixed:
// multiplicative bounds make no sense for them. Multi-start projected
// quasi-Newton plus vertex polishing, with full vertex enumeration on
// small problems (the extremum is attained at a vertex).
inline GammaBounds gamma_bounds(const RegionSeries& series, const WeightVector& weights, int k,
                                int delta, double gamma, int n_starts = 64,
                                std::uint64_t seed = 1234) {
  if (gamma < 1.0) throw ParameterError("gamma_bounds: gamma must be >= 1");
  const int T = series.T();

  detail::BetaOfWeights beta_fn;
  beta_fn.p = k + 2;
  beta_fn.X.resize(T, beta_fn.p);
  beta_fn.X.col(0).setOnes();
  beta_fn.X.block(0, 1, T, k) = Basis::build(T, k).psi;
  beta_fn.X.col(k + 1) = cumulative_mobility(series, delta);
  beta_fn.L = Eigen::Map<const Eigen::VectorXd>(series.log_deaths.data(), T);

  const Eigen::VectorXd& w0 = weights.values;
  Eigen::VectorXd lo(T), hi(T);
  std::vector<int> free_idx;
  for (int t = 0; t < T; ++t) {
    if (w0(t) > 0.0 && gamma > 1.0) {
      lo(t) = w0(t) / gamma;
      hi(t) = w0(t) * gamma;
      free_idx.push_back(t);
    } else {
      lo(t) = hi(t) = w0(t);
    }
  }

  const double beta_point = beta_fn(w0);
  GammaBounds bounds{beta_point, beta_point};
  if (free_idx.empty()) return bounds;

  for (const int sign : {+1, -1}) {  // +1 maximizes, -1 minimizes
    double best = beta_point;
    Eigen::VectorXd best_w = w0;

    const auto obj = [&](const Eigen::VectorXd& w) { return -sign * beta_fn(w); };
    const auto grd = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
      return -sign * beta_fn.gradient(w);
    };

    Rng rng(seed + (sign > 0 ? 0 : 1));
    BoxOptions opts;
    opts.max_iter = 300;
    for (int s = 0; s <= n_starts; ++s) {
      Eigen::VectorXd w = w0;
      if (s > 0) {
        for (const int t : free_idx) w(t) = rng.uniform() < 0.5 ? lo(t) : hi(t);
      }
      const auto r = minimize_box(obj, grd, w, lo, hi, opts);
      w = r.x;
      double val = beta_fn(w);
      val = detail::polish_vertexwise(beta_fn, w, lo, hi, val, sign);
      if (sign * val > sign * best) {
        best = val;
        best_w = w;
      }
    }

    // exhaustive vertex search certifies small instances
    if (static_cast<int>(free_idx.size()) <= 20 && T <= 20) {
      Eigen::VectorXd w = w0;
      const std::size_t m = free_idx.size();
      for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
        for (std::size_t i = 0; i < m; ++i) {
          w(free_idx[i]) = (mask >> i) & 1 ? hi(free_idx[i]) : lo(free_idx[i]);
        }
        const double val = beta_fn(w);
        if (sign * val > sign * best) best = val;
      }
    }

    if (sign > 0) {
      bounds.hi = best;
    } else {
      bounds.lo = best;
    }
  }
  bounds.lo = std::min(bounds.lo, beta_point);
  bounds.hi = std::max(bounds.hi, beta_point);
  return bounds;
}

struct SensitivityReport {
  std::string region;
  double log_population = std::nan("");
  double delta_critical = 0.0;
  double gamma = 1.0;
  double beta_lo = 0.0;
  double beta_hi = 0.0;
  bool significant_at_gamma = false;  // bounds exclude zero
};

inline SensitivityReport sensitivity_report(const RegionSeries& series, const MsmFit& fit,
                                            double gamma, double alpha = 0.05) {
  SensitivityReport r;
  r.region = series.region_id;
  if (series.population) r.log_population = std::log(*series.population);
  r.delta_critical = delta_critical(fit, alpha);
  r.gamma = gamma;
  const auto gb = gamma_bounds(series, fit.weights_used, fit.k, fit.delta, gamma);
  r.beta_lo = gb.lo;
  r.beta_hi = gb.hi;
  r.significant_at_gamma = (gb.lo > 0.0) || (gb.hi < 0.0);
  return r;
}

inline void write_sensitivity_csv(const std::filesystem::path& path,
                                  const std::vector<SensitivityReport>& rows) {
  std::ofstream out(path);
  out << "region,log_population,delta_critical,gamma,beta_lo,beta_hi\n";
  for (const auto& r : rows) {
    out << r.region << ',';
    if (std::isnan(r.log_population)) {
      out << "";
    } else {
      out << r.log_population;
    }
    out << ',' << r.delta_critical << ',' << r.gamma << ',' << r.beta_lo << ',' << r.beta_hi
        << '\n';
  }
}

}  // namespace epimsm
