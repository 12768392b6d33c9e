#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include <httplib.h>
#ifdef _res
#undef _res  // glibc resolv.h macro, collides with Eigen parameter names
#endif

#include "epimsm/types.hpp"

namespace epimsm {

struct CovidcastConfig {
  std::string endpoint;  // empty: EPIMSM_COVIDCAST_URL env var, then the public API
  std::string deaths_source = "jhu-csse";
  std::string deaths_signal = "deaths_incidence_num";
  std::string mobility_source = "safegraph";
  std::string mobility_signal = "completely_home_prop";
  int max_retries = 3;
  int timeout_sec = 15;
};

namespace detail {

inline std::chrono::sys_days parse_date(const std::string& iso) {
  int y = 0, m = 0, d = 0;
  if (std::sscanf(iso.c_str(), "%d-%d-%d", &y, &m, &d) != 3) {
    throw ParameterError("cannot parse date '" + iso + "', expected YYYY-MM-DD");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                                        std::chrono::day{unsigned(d)}};
  if (!ymd.ok()) throw ParameterError("invalid date '" + iso + "'");
  return std::chrono::sys_days{ymd};
}

inline std::chrono::sys_days parse_time_value(long tv) {
  const int y = static_cast<int>(tv / 10000);
  const unsigned m = static_cast<unsigned>((tv / 100) % 100);
  const unsigned d = static_cast<unsigned>(tv % 100);
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  return std::chrono::sys_days{ymd};
}

inline std::string compact_date(std::chrono::sys_days day) {
  const std::chrono::year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d%02u%02u", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()));
  return buf;
}

struct ParsedUrl {
  bool https = false;
  std::string host_port;
  std::string base_path;
};

inline ParsedUrl parse_url(const std::string& url) {
  ParsedUrl p;
  std::string rest = url;
  if (rest.rfind("https://", 0) == 0) {
    p.https = true;
    rest = rest.substr(8);
  } else if (rest.rfind("http://", 0) == 0) {
    rest = rest.substr(7);
  } else {
    throw ParameterError("covidcast endpoint must start with http:// or https://");
  }
  const auto slash = rest.find('/');
  p.host_port = slash == std::string::npos ? rest : rest.substr(0, slash);
  p.base_path = slash == std::string::npos ? "/" : rest.substr(slash);
  return p;
}

// one request in flight per process; the public API rate-limits per host
inline std::mutex& request_mutex() {
  static std::mutex m;
  return m;
}

inline nlohmann::json covidcast_get(const CovidcastConfig& cfg, const std::string& source,
                                    const std::string& signal, const std::string& region,
                                    std::chrono::sys_days start, std::chrono::sys_days end) {
  std::string endpoint = cfg.endpoint;
  if (endpoint.empty()) {
    if (const char* env = std::getenv("EPIMSM_COVIDCAST_URL")) endpoint = env;
  }
  if (endpoint.empty()) endpoint = "https://api.covidcast.cmu.edu/epidata/covidcast/";
  const auto url = parse_url(endpoint);

  std::string lower_region = region;
  for (auto& c : lower_region) c = static_cast<char>(std::tolower(c));
  const std::string query = "data_source=" + source + "&signal=" + signal +
                            "&time_type=day&geo_type=state&geo_value=" + lower_region +
                            "&time_values=" + compact_date(start) + "-" + compact_date(end);
  std::string path = url.base_path;
  path += (path.find('?') == std::string::npos ? "?" : "&") + query;

  std::lock_guard<std::mutex> lock(request_mutex());
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    httplib::Result res;
#ifdef CPPHTTPLIB_OPENSSL_SUPPORT
    if (url.https) {
      httplib::SSLClient cli(url.host_port);
      cli.set_connection_timeout(cfg.timeout_sec);
      cli.set_read_timeout(cfg.timeout_sec);
      res = cli.Get(path);
    } else
#endif
    {
      httplib::Client cli(url.host_port);
      cli.set_connection_timeout(cfg.timeout_sec);
      cli.set_read_timeout(cfg.timeout_sec);
      res = cli.Get(path);
    }
    if (res && res->status == 200) {
      return nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/true);
    }
    last_error = res ? "HTTP status " + std::to_string(res->status)
                     : "connection error " + httplib::to_string(res.error());
  }
  throw TransportError("covidcast request failed after " + std::to_string(cfg.max_retries + 1) +
                           " attempts: " + last_error,
                       cfg.max_retries + 1);
}

}  // namespace detail

// Fetches daily deaths and at-home fraction, bins them into 7-day windows
// anchored at `start` (deaths summed, mobility averaged), and returns a
// weekly series. Negative daily death corrections are clamped to 0 with a
// warning; trailing partial weeks are dropped.
inline RegionSeries fetch_covidcast(const std::string& region, const std::string& start,
                                    const std::string& end, const CovidcastConfig& cfg = {},
                                    std::vector<std::string>* warnings = nullptr) {
  if (region.size() != 2) throw ParameterError("region must be a two-letter state code");
  const auto start_day = detail::parse_date(start);
  const auto end_day = detail::parse_date(end);
  if (end_day <= start_day) throw NoDataError("zero-length date range " + start + " to " + end);

  const auto to_daily = [&](const nlohmann::json& body,
                            const char* what) -> std::map<long, double> {
    if (!body.contains("epidata") || !body["epidata"].is_array() || body["epidata"].empty()) {
      throw NoDataError(std::string("covidcast returned no ") + what + " data for " + region);
    }
    std::map<long, double> out;
    for (const auto& row : body["epidata"]) {
      if (!row.contains("time_value") || !row.contains("value") || row["value"].is_null()) continue;
      out[row["time_value"].get<long>()] = row["value"].get<double>();
    }
    return out;
  };

  const auto deaths_daily = to_daily(
      detail::covidcast_get(cfg, cfg.deaths_source, cfg.deaths_signal, region, start_day, end_day),
      "death");
  const auto mobility_daily = to_daily(detail::covidcast_get(cfg, cfg.mobility_source,
                                                             cfg.mobility_signal, region,
                                                             start_day, end_day),
                                       "mobility");

  const int n_days = static_cast<int>((end_day - start_day).count()) + 1;
  const int n_weeks = n_days / 7;
  if (n_weeks < 1) throw NoDataError("date range shorter than one week");

  std::vector<double> deaths, mobility;
  int clamped = 0;
  for (int w = 0; w < n_weeks; ++w) {
    double death_sum = 0.0;
    double mob_sum = 0.0;
    int mob_n = 0, death_n = 0;
    for (int d = 0; d < 7; ++d) {
      const auto day = start_day + std::chrono::days{w * 7 + d};
      const long tv = std::stol(detail::compact_date(day));
      if (const auto it = deaths_daily.find(tv); it != deaths_daily.end()) {
        double v = it->second;
        if (v < 0.0) {
          v = 0.0;
          ++clamped;
        }
        death_sum += v;
        ++death_n;
      }
      if (const auto it = mobility_daily.find(tv); it != mobility_daily.end()) {
        mob_sum += it->second;
        ++mob_n;
      }
    }
    if (death_n == 0 || mob_n == 0) {
      throw GapError("region '" + region + "': no data in week " + std::to_string(w + 1));
    }
    deaths.push_back(death_sum);
    mobility.push_back(std::min(std::max(mob_sum / mob_n, 0.0), 1.0));
  }
  if (clamped > 0 && warnings) {
    warnings->push_back(region + ": clamped " + std::to_string(clamped) +
                        " negative daily death corrections to 0");
  }

  auto series = make_region_series(region, std::move(deaths), std::move(mobility));
  validate_ingested(series);
  return series;
}

}  // namespace epimsm
