#pragma once

#include <cmath>
#include <vector>

#include "epimsm/simulate.hpp"
#include "epimsm/weights.hpp"

namespace epimsm::test {

inline WeightVector unit_weights(int T) {
  WeightVector w;
  w.values = Eigen::VectorXd::Ones(T);
  w.moment_residuals = Eigen::VectorXd::Zero(0);
  return w;
}

inline std::vector<double> hump_raw(int T, double base = 0.10, double scale = 0.10) {
  return default_anti_mobility_path(T, base, scale);
}

// well-behaved blip DGP: deterministic hump mobility with jitter, linear
// r(t), log deaths bounded away from zero
inline BlipSimSpec standard_blip_spec(std::uint64_t seed, double beta = -5.0,
                                      double noise_sd = 0.15, double jitter = 0.004) {
  BlipSimSpec spec;
  spec.T = 45;
  spec.beta = beta;
  spec.drift_coeffs = {0.35, -0.012};
  spec.noise_sd = noise_sd;
  spec.L1 = 2.5;
  spec.base_mobility_raw = hump_raw(45);
  spec.policy.noise_sd = jitter;
  spec.policy.kappa = 0.0;
  spec.seed = seed;
  return spec;
}

}  // namespace epimsm::test
