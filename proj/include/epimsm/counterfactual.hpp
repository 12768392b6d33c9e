#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "epimsm/msm.hpp"
#include "epimsm/types.hpp"

namespace epimsm {

enum class Scenario { observed, early1, early2, vigilant, custom };

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::observed: return "observed";
    case Scenario::early1: return "early1";
    case Scenario::early2: return "early2";
    case Scenario::vigilant: return "vigilant";
    case Scenario::custom: return "custom";
  }
  return "unknown";
}

inline Scenario scenario_from_name(const std::string& name) {
  if (name == "observed") return Scenario::observed;
  if (name == "early1") return Scenario::early1;
  if (name == "early2") return Scenario::early2;
  if (name == "vigilant") return Scenario::vigilant;
  if (name == "custom") return Scenario::custom;
  throw ParameterError("unknown intervention label '" + name + "'");
}

struct InterventionPath {
  Scenario label = Scenario::custom;
  std::vector<double> mobility;
  std::string rule;  // provenance of the construction
};

// The three counterfactual mobility regimes: shift the observed path left
// by one or two weeks (holding the last observed value for the missing
// tail), or keep weeks 1-9 and then repeat each subsequent value twice,
// halving the decline after the week-9 peak.
inline InterventionPath make_intervention(const RegionSeries& series, Scenario label) {
  const int T = series.T();
  const auto& a = series.mobility;
  InterventionPath path;
  path.label = label;
  path.mobility.resize(T);
  switch (label) {
    case Scenario::observed:
      path.mobility = a;
      path.rule = "observed mobility";
      break;
    case Scenario::early1:
      for (int t = 0; t < T; ++t) path.mobility[t] = a[std::min(t + 1, T - 1)];
      path.rule = "shift left 1 week, hold final value";
      break;
    case Scenario::early2:
      for (int t = 0; t < T; ++t) path.mobility[t] = a[std::min(t + 2, T - 1)];
      path.rule = "shift left 2 weeks, hold final value";
      break;
    case Scenario::vigilant: {
      if (T < 12) throw ParameterError("vigilant intervention needs T >= 12");
      for (int t = 0; t < 9; ++t) path.mobility[t] = a[t];
      // weeks 10, 11, 12, 13, ... take values A_10, A_10, A_11, A_11, ...
      for (int t = 9; t < T; ++t) path.mobility[t] = a[9 + (t - 9) / 2];
      path.rule = "hold weeks 1-9, then repeat each value twice";
      break;
    }
    case Scenario::custom:
      throw ParameterError("custom paths are built with custom_path()");
  }
  return path;
}

inline InterventionPath custom_path(std::vector<double> mobility, std::string rule) {
  InterventionPath p;
  p.label = Scenario::custom;
  p.mobility = std::move(mobility);
  p.rule = std::move(rule);
  return p;
}

inline Prediction predict_log(const MsmFit& fit, const InterventionPath& path) {
  return predict_log(fit, path.mobility);
}

struct CurvePoint {
  double theta = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// theta_t = exp(point_t) with pointwise bands exp(point_t +- z se_t)
inline std::vector<CurvePoint> counterfactual_curve(const MsmFit& fit,
                                                    const InterventionPath& path,
                                                    double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw ParameterError("counterfactual_curve: level in (0,1)");
  const auto pred = predict_log(fit, path);
  const double z = normal_quantile(0.5 + level / 2.0);
  std::vector<CurvePoint> out(pred.point.size());
  for (int t = 0; t < pred.point.size(); ++t) {
    out[t].theta = std::exp(pred.point(t));
    out[t].lo = std::exp(pred.point(t) - z * pred.se(t));
    out[t].hi = std::exp(pred.point(t) + z * pred.se(t));
  }
  return out;
}

struct ExcessDeaths {
  double total = 0.0;
  double total_lo = 0.0, total_hi = 0.0;
  double relative = 0.0;
  double relative_lo = 0.0, relative_hi = 0.0;
};

// Total: sum_t exp(E[L^a_t]) - sum_t Y_t, with a delta-method interval for
// the sum through the joint HAC covariance. The observed total is data,
// not an estimate, so the relative form divides everything by it.
inline ExcessDeaths excess_deaths(const MsmFit& fit, const RegionSeries& series,
                                  const InterventionPath& path, double level = 0.95) {
  const int T = series.T();
  double observed_total = 0.0;
  for (double y : series.deaths) observed_total += y;
  if (observed_total <= 0.0) throw ParameterError("excess_deaths: observed deaths sum to zero");

  const auto pred = predict_log(fit, path);
  const Eigen::VectorXd Mpath = cumulative_mobility(path.mobility, fit.delta);
  Eigen::MatrixXd X(T, fit.k + 2);
  X.col(0).setOnes();
  X.block(0, 1, T, fit.k) = fit.basis.psi;
  X.col(fit.k + 1) = Mpath;

  double cf_total = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(fit.k + 2);
  for (int t = 0; t < T; ++t) {
    const double e = std::exp(pred.point(t));
    cf_total += e;
    grad += e * X.row(t).transpose();
  }
  const double var = std::max(0.0, grad.dot(fit.covariance * grad));
  const double z = normal_quantile(0.5 + level / 2.0);
  const double half = z * std::sqrt(var);

  ExcessDeaths out;
  out.total = cf_total - observed_total;
  out.total_lo = out.total - half;
  out.total_hi = out.total + half;
  out.relative = out.total / observed_total;
  out.relative_lo = out.total_lo / observed_total;
  out.relative_hi = out.total_hi / observed_total;
  return out;
}

inline void write_curve_csv(const std::filesystem::path& path, const RegionSeries& series,
                            const std::vector<CurvePoint>& curve) {
  std::ofstream out(path);
  out << "t,theta,lo,hi,observed\n";
  for (std::size_t t = 0; t < curve.size(); ++t) {
    out << (t + 1) << ',' << curve[t].theta << ',' << curve[t].lo << ',' << curve[t].hi << ','
        << series.deaths[t] << '\n';
  }
}

inline nlohmann::json excess_to_json(const ExcessDeaths& e) {
  return nlohmann::json{{"total", e.total},         {"total_lo", e.total_lo},
                        {"total_hi", e.total_hi},   {"relative", e.relative},
                        {"relative_lo", e.relative_lo}, {"relative_hi", e.relative_hi}};
}

}  // namespace epimsm
