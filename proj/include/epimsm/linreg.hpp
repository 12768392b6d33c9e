#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "epimsm/types.hpp"

namespace epimsm {

// Ordinary least squares via column-pivoted QR with classic covariance.
// Rank problems are reported, not thrown; callers decide.
struct LeastSquares {
  Eigen::VectorXd coef;
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd xtx_inv;  // (X'X)^-1, minimum-norm flavor when rank deficient
  double sigma2 = 0.0;      // RSS / (n - p)
  double rss = 0.0;
  int n = 0;
  int p = 0;
  int rank = 0;
  bool rank_deficient = false;

  double se(int j) const { return std::sqrt(sigma2 * xtx_inv(j, j)); }
  double t_stat(int j) const {
    const double s = se(j);
    return s > 0.0 ? coef(j) / s : 0.0;
  }
};

inline LeastSquares ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  LeastSquares out;
  out.n = static_cast<int>(X.rows());
  out.p = static_cast<int>(X.cols());
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  cod.setThreshold(1e-10);
  out.rank = static_cast<int>(cod.rank());
  out.rank_deficient = out.rank < out.p;
  out.coef = cod.solve(y);
  out.fitted = X * out.coef;
  out.residuals = y - out.fitted;
  out.rss = out.residuals.squaredNorm();
  const int dof = out.n - out.rank;
  out.sigma2 = dof > 0 ? out.rss / dof : 0.0;
  out.xtx_inv = cod.pseudoInverse() * cod.pseudoInverse().transpose();
  return out;
}

// Weighted least squares for strictly positive weights (sqrt scaling).
inline LeastSquares wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w) {
  if (w.minCoeff() <= 0.0) throw ParameterError("wls: weights must be positive");
  const Eigen::VectorXd sw = w.array().sqrt();
  LeastSquares out = ols(sw.asDiagonal() * X, (sw.array() * y.array()).matrix());
  out.fitted = X * out.coef;
  out.residuals = y - out.fitted;
  return out;
}

// true when a design column is (numerically) constant — degenerate regressor
inline bool is_constant(const Eigen::VectorXd& col) {
  const double mean = col.mean();
  return (col.array() - mean).abs().maxCoeff() < 1e-12 * (1.0 + std::abs(mean));
}

}  // namespace epimsm
