// Command-line front end: fit marginal structural models to weekly
// mobility/death series, project counterfactual death curves, and run the
// sensitivity and diagnostic analyses. Subcommands write plot-ready CSV and
// JSON artifacts, one set per region.

#include <CLI11.hpp>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "epimsm/blip.hpp"
#include "epimsm/counterfactual.hpp"
#include "epimsm/covidcast.hpp"
#include "epimsm/csv.hpp"
#include "epimsm/deconv.hpp"
#include "epimsm/delay.hpp"
#include "epimsm/msm.hpp"
#include "epimsm/sensitivity.hpp"
#include "epimsm/simulate.hpp"
#include "epimsm/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonOpts {
  std::string input;
  std::string regions;  // comma-separated filter, empty = all
  std::string k = "auto";
  int k_max = 5;
  int delta = 4;
  double level = 0.95;
  std::string out_dir = ".";
  int jobs = 0;  // 0: hardware concurrency
  std::string start = "2020-02-15";
  std::string end = "2020-12-25";
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_input = true) {
  auto* opt = cmd->add_option("--input", o.input,
                              "input CSV path, or covidcast:XX[,YY...] to fetch states");
  if (needs_input) opt->required();
  cmd->add_option("--regions", o.regions, "comma-separated region filter");
  cmd->add_option("--k", o.k, "drift basis degree, or 'auto' for AIC selection");
  cmd->add_option("--k-max", o.k_max, "largest degree tried by AIC");
  cmd->add_option("--delta", o.delta, "infection-to-death lag in weeks")->check(CLI::NonNegativeNumber);
  cmd->add_option("--level", o.level, "confidence level")->check(CLI::Range(1e-6, 0.999999));
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--jobs", o.jobs, "parallel region workers (default: cores)");
  cmd->add_option("--start", o.start, "covidcast window start (YYYY-MM-DD)");
  cmd->add_option("--end", o.end, "covidcast window end (YYYY-MM-DD)");
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<epimsm::RegionSeries> load_input(const CommonOpts& o) {
  std::vector<epimsm::RegionSeries> all;
  if (o.input.rfind("covidcast:", 0) == 0) {
    for (const auto& region : split_commas(o.input.substr(10))) {
      std::vector<std::string> warnings;
      all.push_back(epimsm::fetch_covidcast(region, o.start, o.end, {}, &warnings));
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    }
  } else {
    all = epimsm::load_csv(o.input);
  }
  if (!o.regions.empty()) {
    const auto keep = split_commas(o.regions);
    std::erase_if(all, [&](const auto& s) {
      return std::find(keep.begin(), keep.end(), s.region_id) == keep.end();
    });
    if (all.empty()) throw epimsm::NoDataError("region filter matched nothing");
  }
  return all;
}

int resolve_k(const CommonOpts& o, const epimsm::RegionSeries& s) {
  if (o.k == "auto") return epimsm::select_k(s, o.k_max, o.delta);
  return std::stoi(o.k);
}

// region-parallel runner: workers pull indices, failures are collected and
// reported per region on stderr
template <typename Fn>
int for_each_region(const std::vector<epimsm::RegionSeries>& all, int jobs, Fn&& fn) {
  const int n = static_cast<int>(all.size());
  int workers = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, n));
  std::atomic<int> next{0};
  std::mutex mu;
  std::vector<std::pair<std::string, std::string>> failures;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(all[i]);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(mu);
          failures.emplace_back(all[i].region_id, e.what());
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (!failures.empty()) {
    std::cerr << "region failures:\n";
    for (const auto& [region, what] : failures) {
      std::cerr << "  " << region << ": " << what << '\n';
    }
    return kExitNumeric;
  }
  return 0;
}

struct FitBundle {
  epimsm::WeightVector weights;
  epimsm::MsmFit fit;
  int k;
};

FitBundle fit_region(const epimsm::RegionSeries& s, const CommonOpts& o) {
  FitBundle b;
  b.k = resolve_k(o, s);
  b.weights = epimsm::estimate_weights(s, 1, o.delta);
  b.fit = epimsm::fit_msm(s, b.weights, b.k, o.delta);
  return b;
}

int cmd_fit(const CommonOpts& o) {
  const auto all = load_input(o);
  fs::create_directories(o.out_dir);
  return for_each_region(all, o.jobs, [&](const epimsm::RegionSeries& s) {
    const auto b = fit_region(s, o);
    const fs::path base = fs::path(o.out_dir) / s.region_id;
    std::ofstream(base.string() + "_fit.json") << epimsm::fit_to_json(b.fit).dump(2) << '\n';
    epimsm::write_fit_csv(base.string() + "_fit.csv", s, b.fit);
    epimsm::write_weight_diagnostics(base.string() + "_weights.csv",
                                     base.string() + "_weights.json", b.weights);
  });
}

int cmd_counterfactual(const CommonOpts& o, const std::string& scenario) {
  const auto all = load_input(o);
  fs::create_directories(o.out_dir);
  const auto scenarios =
      scenario == "all"
          ? std::vector<std::string>{"observed", "early1", "early2", "vigilant"}
          : std::vector<std::string>{scenario};
  return for_each_region(all, o.jobs, [&](const epimsm::RegionSeries& s) {
    const auto b = fit_region(s, o);
    for (const auto& name : scenarios) {
      const auto path = epimsm::make_intervention(s, epimsm::scenario_from_name(name));
      const auto curve = epimsm::counterfactual_curve(b.fit, path, o.level);
      const auto excess = epimsm::excess_deaths(b.fit, s, path, o.level);
      const fs::path base = fs::path(o.out_dir) / (s.region_id + "_" + name);
      epimsm::write_curve_csv(base.string() + "_curve.csv", s, curve);
      std::ofstream(base.string() + "_excess.json")
          << epimsm::excess_to_json(excess).dump(2) << '\n';
    }
  });
}

int cmd_sensitivity(const CommonOpts& o, double gamma) {
  const auto all = load_input(o);
  fs::create_directories(o.out_dir);
  std::vector<epimsm::SensitivityReport> rows(all.size());
  std::atomic<std::size_t> idx{0};
  const int rc = for_each_region(all, o.jobs, [&](const epimsm::RegionSeries& s) {
    const auto b = fit_region(s, o);
    const auto rep = epimsm::sensitivity_report(s, b.fit, gamma, 1.0 - o.level);
    // stable output order: place by region position, not completion order
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i].region_id == s.region_id) {
        rows[i] = rep;
        break;
      }
    }
    idx.fetch_add(1);
  });
  if (rc == 0) {
    epimsm::write_sensitivity_csv(fs::path(o.out_dir) / "sensitivity.csv", rows);
  }
  return rc;
}

int cmd_deconvolve(const CommonOpts& o, double lambda, const std::string& lambda_grid) {
  const auto all = load_input(o);
  fs::create_directories(o.out_dir);
  std::vector<double> lambdas{lambda};
  if (!lambda_grid.empty()) {
    lambdas.clear();
    for (const auto& tok : split_commas(lambda_grid)) lambdas.push_back(std::stod(tok));
  }
  const auto kernel = epimsm::build_gamma_kernel(23.9, 0.40, 12);
  return for_each_region(all, o.jobs, [&](const epimsm::RegionSeries& s) {
    const auto weights = epimsm::estimate_weights(s, 1, o.delta);
    const int k = resolve_k(o, s);
    for (const double lam : lambdas) {
      const auto r = epimsm::deconvolve(s, kernel, lam);
      const auto refit = epimsm::refit_on_infections(r, s, weights, k);
      char lam_tag[32];
      std::snprintf(lam_tag, sizeof(lam_tag), "%g", lam);
      const fs::path base =
          fs::path(o.out_dir) / (s.region_id + "_lambda" + std::string(lam_tag));
      epimsm::write_deconv_csv(base.string() + "_infections.csv", s, r);
      json j = epimsm::fit_to_json(refit);
      j["lambda"] = lam;
      j["converged"] = r.converged;
      std::ofstream(base.string() + "_refit.json") << j.dump(2) << '\n';
    }
  });
}

int cmd_blip(const CommonOpts& o) {
  const auto all = load_input(o);
  fs::create_directories(o.out_dir);
  return for_each_region(all, o.jobs, [&](const epimsm::RegionSeries& s) {
    const int k = resolve_k(o, s);
    const auto fit = epimsm::fit_blip(s, k, o.delta);
    std::ofstream((fs::path(o.out_dir) / (s.region_id + "_blip.json")).string())
        << epimsm::blip_to_json(fit).dump(2) << '\n';
  });
}

int cmd_markov(const CommonOpts& o) {
  const auto all = load_input(o);
  fs::create_directories(o.out_dir);
  std::vector<std::pair<std::string, epimsm::MarkovDiagnostics>> rows(all.size());
  const int rc = for_each_region(all, o.jobs, [&](const epimsm::RegionSeries& s) {
    const auto d = epimsm::markov_diagnostics(s, o.delta);
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i].region_id == s.region_id) {
        rows[i] = {s.region_id, d};
        break;
      }
    }
  });
  if (rc == 0) epimsm::write_markov_csv(fs::path(o.out_dir) / "markov_check.csv", rows);
  return rc;
}

int cmd_pooled(const CommonOpts& o) {
  const auto all = load_input(o);
  fs::create_directories(o.out_dir);
  int k = o.k == "auto" ? 1 : std::stoi(o.k);
  const auto fit = epimsm::fit_pooled(all, k, o.delta);
  std::ofstream(fs::path(o.out_dir) / "pooled.json")
      << epimsm::pooled_to_json(fit).dump(2) << '\n';
  return 0;
}

struct SimulateOpts {
  std::string spec_path;
  std::string out_dir = ".";
  int reps = 1;
  std::string check;  // "", "coverage"
  std::uint64_t seed = 1;
};

epimsm::BlipSimSpec blip_spec_from_json(const json& j) {
  epimsm::BlipSimSpec spec;
  spec.T = j.value("T", 45);
  spec.beta = j.value("beta", -5.0);
  spec.drift_coeffs = j.value("drift_coeffs", std::vector<double>{0.35, -0.012});
  spec.delta = j.value("delta", 4);
  spec.noise_sd = j.value("noise_sd", 0.15);
  spec.L1 = j.value("L1", 2.5);
  spec.noise_mode = j.value("noise_mode", std::string("level")) == "increment"
                        ? epimsm::BlipSimSpec::NoiseMode::increment
                        : epimsm::BlipSimSpec::NoiseMode::level;
  if (j.contains("base_mobility_raw")) {
    spec.base_mobility_raw = j["base_mobility_raw"].get<std::vector<double>>();
  } else if (!j.contains("policy")) {
    spec.base_mobility_raw = epimsm::default_anti_mobility_path(spec.T);
    spec.policy.noise_sd = 0.004;
  }
  if (j.contains("policy")) {
    const auto& p = j["policy"];
    spec.policy.a1 = p.value("a1", spec.policy.a1);
    spec.policy.intercept = p.value("intercept", spec.policy.intercept);
    spec.policy.rho = p.value("rho", spec.policy.rho);
    spec.policy.kappa = p.value("kappa", spec.policy.kappa);
    spec.policy.noise_sd = p.value("noise_sd", spec.policy.noise_sd);
  }
  spec.seed = j.value("seed", 1);
  return spec;
}

int cmd_simulate(const SimulateOpts& so, const CommonOpts& o) {
  std::ifstream in(so.spec_path);
  if (!in) throw epimsm::NoDataError("cannot open spec " + so.spec_path);
  json j = json::parse(in);
  fs::create_directories(so.out_dir);

  if (j.value("model", "blip") != "blip") {
    throw epimsm::ParameterError("unknown simulation model '" + j.value("model", "") + "'");
  }

  if (so.check.empty()) {
    std::vector<epimsm::RegionSeries> out;
    for (int rep = 0; rep < so.reps; ++rep) {
      auto spec = blip_spec_from_json(j);
      spec.seed = so.seed + rep;
      auto s = epimsm::simulate_blip(spec);
      s.region_id = "sim" + std::to_string(rep + 1);
      out.push_back(std::move(s));
    }
    epimsm::write_csv(fs::path(so.out_dir) / "simulated.csv", out);
    return 0;
  }
  if (so.check != "coverage") {
    throw epimsm::ParameterError("unknown --check mode '" + so.check + "'");
  }

  // estimator-recovery report: mean beta-hat and CI coverage over reps
  auto base = blip_spec_from_json(j);
  const int k = o.k == "auto" ? static_cast<int>(base.drift_coeffs.size()) + 1 : std::stoi(o.k);
  int covered = 0;
  double sum = 0.0, sumsq = 0.0;
  for (int rep = 0; rep < so.reps; ++rep) {
    auto spec = base;
    spec.seed = so.seed + rep;
    const auto s = epimsm::simulate_blip(spec);
    epimsm::WeightVector w;
    w.values = Eigen::VectorXd::Ones(spec.T);
    const auto fit = epimsm::fit_msm(s, w, k, spec.delta);
    const double crit = epimsm::student_t_quantile(0.5 + o.level / 2.0, fit.dof);
    if (std::abs(fit.beta - spec.beta) <= crit * fit.se_beta) ++covered;
    sum += fit.beta;
    sumsq += fit.beta * fit.beta;
  }
  json report;
  report["reps"] = so.reps;
  report["true_beta"] = base.beta;
  report["mean_beta"] = sum / so.reps;
  report["sd_beta"] = std::sqrt(std::max(0.0, sumsq / so.reps - (sum / so.reps) * (sum / so.reps)));
  report["coverage"] = static_cast<double>(covered) / so.reps;
  report["level"] = o.level;
  std::ofstream(fs::path(so.out_dir) / "coverage.json") << report.dump(2) << '\n';
  std::cout << report.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"marginal structural models for weekly mobility and death series"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string scenario = "all";
  double gamma = 3.0;
  double lambda = 1.0;
  std::string lambda_grid;
  SimulateOpts so;

  auto* fit = app.add_subcommand("fit", "estimate weights and the MSM per region");
  add_common(fit, o);

  auto* cf = app.add_subcommand("counterfactual", "project death curves under interventions");
  add_common(cf, o);
  cf->add_option("--scenario", scenario, "observed|early1|early2|vigilant|all");

  auto* sens = app.add_subcommand("sensitivity", "confounding sensitivity report");
  add_common(sens, o);
  sens->add_option("--gamma", gamma, "weight perturbation bound")->check(CLI::Range(1.0, 1e6));

  auto* dec = app.add_subcommand("deconvolve", "recover infections and refit on log infections");
  add_common(dec, o);
  dec->add_option("--lambda", lambda, "smoothness penalty")->check(CLI::NonNegativeNumber);
  dec->add_option("--lambda-grid", lambda_grid, "comma-separated penalties");

  auto* blip = app.add_subcommand("blip", "AR(1) blip-model fit per region");
  add_common(blip, o);

  auto* markov = app.add_subcommand("markov-check", "three-lag Markov diagnostics");
  add_common(markov, o);

  auto* pooled = app.add_subcommand("pooled", "fixed-effects blip fit across regions");
  add_common(pooled, o);

  auto* sim = app.add_subcommand("simulate", "generate synthetic series from a spec");
  sim->add_option("--spec", so.spec_path, "JSON simulation spec")->required();
  sim->add_option("--reps", so.reps, "number of replicates");
  sim->add_option("--check", so.check, "run a replicate study: coverage");
  sim->add_option("--seed", so.seed, "base seed");
  sim->add_option("--out", so.out_dir, "output directory");
  sim->add_option("--k", o.k, "basis degree for the coverage check");
  sim->add_option("--level", o.level, "confidence level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (fit->parsed()) return cmd_fit(o);
    if (cf->parsed()) return cmd_counterfactual(o, scenario);
    if (sens->parsed()) return cmd_sensitivity(o, gamma);
    if (dec->parsed()) return cmd_deconvolve(o, lambda, lambda_grid);
    if (blip->parsed()) return cmd_blip(o);
    if (markov->parsed()) return cmd_markov(o);
    if (pooled->parsed()) return cmd_pooled(o);
    if (sim->parsed()) return cmd_simulate(so, o);
  } catch (const epimsm::SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const epimsm::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const epimsm::GapError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const epimsm::NoDataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const epimsm::TransportError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return 0;
}
