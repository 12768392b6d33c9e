#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "epimsm/types.hpp"

namespace epimsm {

// Column mapping for the ingestion schema. `population` is optional and
// carried through for the sensitivity report when present.
struct CsvSchema {
  std::string region = "region";
  std::string week = "week";
  std::string deaths = "deaths";
  std::string mobility = "mobility";
  std::string population = "population";
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& what, std::size_t row) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || (end && *end != '\0')) {
    throw ValidationError("row " + std::to_string(row) + ": cannot parse " + what + " '" + s + "'");
  }
  return v;
}

// shortest representation that strtod round-trips exactly
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace detail

inline std::vector<RegionSeries> load_csv(const std::filesystem::path& path,
                                          const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw NoDataError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty file");
  const auto header = detail::split_csv_line(line);
  auto col = [&](const std::string& name, bool required) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw SchemaError(path.string() + ": missing column '" + name + "'");
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const int c_region = col(schema.region, true);
  const int c_week = col(schema.week, true);
  const int c_deaths = col(schema.deaths, true);
  const int c_mobility = col(schema.mobility, true);
  const int c_pop = col(schema.population, false);

  struct Row {
    int week;
    double deaths, mobility;
    std::optional<double> population;
  };
  std::map<std::string, std::vector<Row>> by_region;
  std::vector<std::string> region_order;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    const int width = static_cast<int>(f.size());
    if (c_region >= width || c_week >= width || c_deaths >= width || c_mobility >= width) {
      throw SchemaError(path.string() + ": row " + std::to_string(row_no) + " has too few fields");
    }
    Row r;
    r.week = static_cast<int>(detail::parse_double(f[c_week], "week", row_no));
    r.deaths = detail::parse_double(f[c_deaths], "deaths", row_no);
    r.mobility = detail::parse_double(f[c_mobility], "mobility", row_no);
    if (r.deaths < 0.0) {
      throw ValidationError(path.string() + ": row " + std::to_string(row_no) +
                            ": negative deaths");
    }
    if (r.mobility < 0.0 || r.mobility > 1.0) {
      throw ValidationError(path.string() + ": row " + std::to_string(row_no) +
                            ": mobility outside [0,1]");
    }
    if (c_pop >= 0 && c_pop < width && !f[c_pop].empty()) {
      r.population = detail::parse_double(f[c_pop], "population", row_no);
    }
    auto& rows = by_region[f[c_region]];
    if (rows.empty()) region_order.push_back(f[c_region]);
    rows.push_back(r);
  }
  if (by_region.empty()) throw NoDataError(path.string() + ": no data rows");

  std::vector<RegionSeries> out;
  for (const auto& region : region_order) {
    auto rows = by_region[region];
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.week < b.week; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].week == rows[i - 1].week) {
        throw ValidationError("region '" + region + "': duplicate week " +
                              std::to_string(rows[i].week));
      }
      if (rows[i].week != rows[i - 1].week + 1) {
        throw GapError("region '" + region + "': gap between weeks " +
                       std::to_string(rows[i - 1].week) + " and " + std::to_string(rows[i].week));
      }
    }
    std::vector<double> deaths, mobility;
    std::optional<double> pop;
    for (const auto& r : rows) {
      deaths.push_back(r.deaths);
      mobility.push_back(r.mobility);
      if (r.population) pop = r.population;
    }
    auto s = make_region_series(region, std::move(deaths), std::move(mobility), pop);
    validate_ingested(s);
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<RegionSeries>& series,
                      const CsvSchema& schema = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const bool any_pop =
      std::any_of(series.begin(), series.end(), [](const auto& s) { return s.population.has_value(); });
  out << schema.region << ',' << schema.week << ',' << schema.deaths << ',' << schema.mobility;
  if (any_pop) out << ',' << schema.population;
  out << '\n';
  for (const auto& s : series) {
    for (int t = 0; t < s.T(); ++t) {
      out << s.region_id << ',' << s.week_index[t] << ',' << detail::format_double(s.deaths[t])
          << ',' << detail::format_double(s.mobility_raw[t]);
      if (any_pop) {
        out << ',';
        if (s.population) out << detail::format_double(*s.population);
      }
      out << '\n';
    }
  }
}

}  // namespace epimsm
