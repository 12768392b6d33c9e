#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "epimsm/types.hpp"
#include "epimsm/weights.hpp"

namespace epimsm {

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

inline double student_t_quantile(double p, int dof) {
  if (dof <= 0) return normal_quantile(p);
  return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

// Orthogonal polynomial drift basis over the observed grid t = 1..T:
// monomials t, t^2, ..., t^k orthogonalized against the constant and each
// other (two Gram-Schmidt passes), scaled to unit norm. The first column is
// an affine image of t.
struct Basis {
  int degree = 0;
  Eigen::MatrixXd psi;  // T x degree

  static Basis build(int T, int k) {
    if (k < 1) throw ParameterError("Basis: degree must be >= 1");
    if (T <= k + 1) throw ParameterError("Basis: T too small for degree");
    Basis b;
    b.degree = k;
    b.psi.resize(T, k);
    Eigen::VectorXd t(T);
    for (int i = 0; i < T; ++i) t(i) = static_cast<double>(i + 1);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(T);
    for (int j = 0; j < k; ++j) {
      Eigen::VectorXd v = t.array().pow(j + 1).matrix();
      for (int pass = 0; pass < 2; ++pass) {
        v -= ones * (ones.dot(v) / T);
        for (int l = 0; l < j; ++l) v -= b.psi.col(l) * b.psi.col(l).dot(v);
      }
      const double nrm = v.norm();
      if (nrm < 1e-12) throw NumericError("Basis: degenerate polynomial column");
      b.psi.col(j) = v / nrm;
    }
    return b;
  }
};

// M_t = sum_{s=1}^{t-delta} a_s (empty sum = 0)
inline Eigen::VectorXd cumulative_mobility(const std::vector<double>& mobility, int delta) {
  if (delta < 0) throw ParameterError("cumulative_mobility: delta must be >= 0");
  const int T = static_cast<int>(mobility.size());
  Eigen::VectorXd M = Eigen::VectorXd::Zero(T);
  double acc = 0.0;
  for (int t = 0; t < T; ++t) {
    const int upto = t + 1 - delta;  // 1-based count of included terms
    if (upto >= 1) acc += mobility[upto - 1];
    M(t) = upto >= 1 ? acc : 0.0;
  }
  return M;
}

inline Eigen::VectorXd cumulative_mobility(const RegionSeries& series, int delta) {
  return cumulative_mobility(series.mobility, delta);
}

// Small-sample switches for the sandwich. Defaults give the plain
// estimator (lag 0 reduces exactly to HC0); fits turn both on.
struct HacOptions {
  bool leverage_adjust = false;  // scale residuals by 1/(1 - h_t)
  bool df_correct = false;       // scale by T/(T-p)
};

inline int default_hac_lag(int T) {
  return static_cast<int>(std::floor(4.0 * std::pow(T / 100.0, 2.0 / 9.0)));
}

// HAC sandwich A^{-1} B A^{-T} on the weighted score, Bartlett kernel up to
// `lag`. Weights are treated as known.
inline Eigen::MatrixXd hac_covariance(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& resid, int lag,
                                      const HacOptions& opts = {}) {
  const int T = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (lag < 0) throw ParameterError("hac_covariance: lag must be >= 0");

  const Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
  const Eigen::MatrixXd Ainv = A.fullPivLu().inverse();

  Eigen::VectorXd r = resid;
  if (opts.leverage_adjust) {
    for (int t = 0; t < T; ++t) {
      const double h = w(t) * X.row(t) * Ainv * X.row(t).transpose();
      const double clamped = std::min(std::max(h, 0.0), 0.999);
      r(t) /= (1.0 - clamped);
    }
  }

  Eigen::MatrixXd U(T, p);  // score rows u_t = W_t r_t x_t
  for (int t = 0; t < T; ++t) U.row(t) = w(t) * r(t) * X.row(t);

  Eigen::MatrixXd B = U.transpose() * U;
  for (int l = 1; l <= lag && l < T; ++l) {
    const double bw = 1.0 - static_cast<double>(l) / (lag + 1.0);
    const Eigen::MatrixXd G =
        U.bottomRows(T - l).transpose() * U.topRows(T - l);
    B += bw * (G + G.transpose());
  }

  Eigen::MatrixXd S = Ainv * B * Ainv.transpose();
  if (opts.df_correct && T > p) S *= static_cast<double>(T) / (T - p);
  // symmetrize against accumulated round-off
  return 0.5 * (S + S.transpose());
}

struct MsmFit {
  std::string region;
  int k = 0;
  int delta = 0;
  Eigen::VectorXd coef;        // [intercept, psi_1..psi_k, M]
  double beta = 0.0;           // mobility coefficient (last entry of coef)
  double se_beta = 0.0;
  Eigen::MatrixXd covariance;  // (k+2) x (k+2) HAC
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
  Eigen::VectorXd M;           // cumulative mobility used in the fit
  Basis basis;
  WeightVector weights_used;
  int hac_lag = 0;
  int dof = 0;                 // T - (k+2)
  bool rank_warning = false;

  Eigen::MatrixXd design() const {
    const int T = static_cast<int>(fitted.size());
    Eigen::MatrixXd X(T, k + 2);
    X.col(0).setOnes();
    X.block(0, 1, T, k) = basis.psi;
    X.col(k + 1) = M;
    return X;
  }
};

struct FitOptions {
  int hac_lag = -1;  // -1: floor(4 (T/100)^{2/9})
  HacOptions hac{true, true};
};

// Weighted least squares of L_t on (1, psi(t), M_t). Solved via the normal
// equations with a full-pivot LU since estimated weights can be negative.
inline MsmFit fit_msm(const RegionSeries& series, const WeightVector& weights, int k, int delta,
                      const FitOptions& opts = {}) {
  const int T = series.T();
  if (T <= k + 3) throw ParameterError("fit_msm: series too short for basis degree");
  if (weights.values.size() != T) throw ParameterError("fit_msm: weight length mismatch");

  MsmFit fit;
  fit.region = series.region_id;
  fit.k = k;
  fit.delta = delta;
  fit.basis = Basis::build(T, k);
  fit.M = cumulative_mobility(series, delta);
  fit.weights_used = weights;

  const int p = k + 2;
  Eigen::MatrixXd X(T, p);
  X.col(0).setOnes();
  X.block(0, 1, T, k) = fit.basis.psi;
  X.col(p - 1) = fit.M;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  fit.rank_warning = qr.rank() < p;

  const Eigen::VectorXd& w = weights.values;
  const Eigen::VectorXd L =
      Eigen::Map<const Eigen::VectorXd>(series.log_deaths.data(), T);
  const Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
  const Eigen::VectorXd XtWL = X.transpose() * (w.array() * L.array()).matrix();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(XtWX);
  if (!lu.isInvertible()) {
    fit.rank_warning = true;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(XtWX);
    cod.setThreshold(1e-12);
    fit.coef = cod.solve(XtWL);
  } else {
    fit.coef = lu.solve(XtWL);
  }

  fit.fitted = X * fit.coef;
  fit.residuals = L - fit.fitted;
  fit.hac_lag = opts.hac_lag >= 0 ? opts.hac_lag : default_hac_lag(T);
  fit.covariance = hac_covariance(X, w, fit.residuals, fit.hac_lag, opts.hac);
  fit.beta = fit.coef(p - 1);
  fit.se_beta = std::sqrt(std::max(fit.covariance(p - 1, p - 1), 0.0));
  fit.dof = T - p;
  return fit;
}

struct Prediction {
  Eigen::VectorXd point;  // nu(t) + beta M(path)_t on the log scale
  Eigen::VectorXd se;
};

inline Prediction predict_log(const MsmFit& fit, const std::vector<double>& path_mobility) {
  const int T = static_cast<int>(fit.fitted.size());
  if (static_cast<int>(path_mobility.size()) != T) {
    throw ParameterError("predict_log: path length must equal fitted T");
  }
  const Eigen::VectorXd Mpath = cumulative_mobility(path_mobility, fit.delta);
  Eigen::MatrixXd X(T, fit.k + 2);
  X.col(0).setOnes();
  X.block(0, 1, T, fit.k) = fit.basis.psi;
  X.col(fit.k + 1) = Mpath;

  Prediction out;
  out.point = X * fit.coef;
  out.se.resize(T);
  for (int t = 0; t < T; ++t) {
    const double q = (X.row(t) * fit.covariance * X.row(t).transpose())(0);
    out.se(t) = std::sqrt(std::max(0.0, q));
  }
  return out;
}

inline nlohmann::json fit_to_json(const MsmFit& fit) {
  return nlohmann::json{
      {"region", fit.region},
      {"k", fit.k},
      {"delta", fit.delta},
      {"beta", fit.beta},
      {"se_beta", fit.se_beta},
      {"drift_coeffs",
       std::vector<double>(fit.coef.data(), fit.coef.data() + fit.k + 1)},
      {"hac_lag", fit.hac_lag}};
}

inline void write_fit_csv(const std::filesystem::path& path, const RegionSeries& series,
                          const MsmFit& fit) {
  std::ofstream out(path);
  out << "t,L,fitted,weight,M\n";
  for (int t = 0; t < series.T(); ++t) {
    out << (t + 1) << ',' << series.log_deaths[t] << ',' << fit.fitted(t) << ','
        << fit.weights_used.values(t) << ',' << fit.M(t) << '\n';
  }
}

}  // namespace epimsm
