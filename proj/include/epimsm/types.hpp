#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace epimsm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemaError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct GapError : Error { using Error::Error; };
struct NoDataError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct RankError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };

struct TransportError : Error {
  TransportError(const std::string& what, int retries_attempted)
      : Error(what), retries(retries_attempted) {}
  int retries;
};

// One region's aligned weekly series. `deaths` holds counts for ingested
// data but is kept real-valued: the simulators emit exact (possibly
// fractional) trajectories so that log_deaths == log(deaths+1) holds to
// machine precision.
struct RegionSeries {
  std::string region_id;
  std::vector<int> week_index;       // 1..T, strictly increasing, no gaps
  std::vector<double> deaths;        // Y_t >= 0
  std::vector<double> mobility_raw;  // A_t in [0,1]
  std::vector<double> mobility;      // a_t = A_t - A_1
  std::vector<double> log_deaths;    // L_t = log(Y_t + 1)
  std::optional<double> population;

  int T() const { return static_cast<int>(deaths.size()); }
};

// Builds a series from raw inputs, applying the log transform and the
// start-at-zero mobility standardization. Shape and range checks only;
// ingestion-level policy (minimum length, week gaps) lives in the loaders.
inline RegionSeries make_region_series(std::string region_id, std::vector<double> deaths,
                                       std::vector<double> mobility_raw,
                                       std::optional<double> population = std::nullopt) {
  if (deaths.size() != mobility_raw.size()) {
    throw ValidationError("series '" + region_id + "': deaths and mobility lengths differ");
  }
  if (deaths.empty()) throw ValidationError("series '" + region_id + "' is empty");
  RegionSeries s;
  s.region_id = std::move(region_id);
  s.deaths = std::move(deaths);
  s.mobility_raw = std::move(mobility_raw);
  s.population = population;
  const int T = s.T();
  s.week_index.resize(T);
  s.mobility.resize(T);
  s.log_deaths.resize(T);
  for (int t = 0; t < T; ++t) {
    if (!(s.deaths[t] >= 0.0)) {
      throw ValidationError("series '" + s.region_id + "': negative deaths at week " +
                            std::to_string(t + 1));
    }
    if (!(s.mobility_raw[t] >= 0.0 && s.mobility_raw[t] <= 1.0)) {
      throw ValidationError("series '" + s.region_id + "': mobility outside [0,1] at week " +
                            std::to_string(t + 1));
    }
    s.week_index[t] = t + 1;
    s.mobility[t] = s.mobility_raw[t] - s.mobility_raw[0];
    s.log_deaths[t] = std::log1p(s.deaths[t]);
  }
  return s;
}

inline void validate_ingested(const RegionSeries& s, int min_length = 10) {
  if (s.T() < min_length) {
    throw ValidationError("series '" + s.region_id + "': only " + std::to_string(s.T()) +
                          " weeks, need at least " + std::to_string(min_length));
  }
}

}  // namespace epimsm
