#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "epimsm/counterfactual.hpp"
#include "epimsm/csv.hpp"
#include "epimsm/msm.hpp"
#include "epimsm/simulate.hpp"
#include "epimsm/weights.hpp"
#include "helpers.hpp"

using namespace epimsm;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return EPIMSM_CLI_PATH; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "epimsm_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_sample_csv(const fs::path& dir) {
  std::vector<RegionSeries> regions;
  for (int r = 0; r < 2; ++r) {
    auto spec = test::standard_blip_spec(1000 + r);
    auto s = simulate_blip(spec);
    s.region_id = r == 0 ? "AA" : "BB";
    regions.push_back(std::move(s));
  }
  const auto p = dir / "sample.csv";
  write_csv(p, regions);
  return p;
}

}  // namespace

TEST_CASE("cli fit matches direct library calls", "[cli]") {
  const auto dir = fresh_dir("fit");
  const auto csv = write_sample_csv(dir);
  const auto out = dir / "artifacts";
  REQUIRE(run_cli("fit --input " + csv.string() + " --k 2 --delta 4 --out " + out.string()) == 0);

  const auto loaded = load_csv(csv);
  for (const auto& s : loaded) {
    const auto w = estimate_weights(s, 1, 4);
    const auto fit = fit_msm(s, w, 2, 4);
    const auto j = nlohmann::json::parse(slurp(out / (s.region_id + "_fit.json")));
    CHECK(j["beta"].get<double>() == fit.beta);
    CHECK(j["se_beta"].get<double>() == fit.se_beta);
    CHECK(j["k"].get<int>() == 2);

    // per-t csv equals the library emitter byte for byte
    const auto lib_csv = dir / (s.region_id + "_lib.csv");
    write_fit_csv(lib_csv, s, fit);
    CHECK(slurp(out / (s.region_id + "_fit.csv")) == slurp(lib_csv));
  }
}

TEST_CASE("cli counterfactual curves equal library output byte for byte", "[cli]") {
  const auto dir = fresh_dir("cf");
  const auto csv = write_sample_csv(dir);
  const auto out = dir / "artifacts";
  REQUIRE(run_cli("counterfactual --input " + csv.string() +
                  " --k 2 --delta 4 --scenario vigilant --out " + out.string()) == 0);

  const auto loaded = load_csv(csv);
  for (const auto& s : loaded) {
    const auto w = estimate_weights(s, 1, 4);
    const auto fit = fit_msm(s, w, 2, 4);
    const auto path = make_intervention(s, Scenario::vigilant);
    const auto curve = counterfactual_curve(fit, path, 0.95);
    const auto lib_csv = dir / (s.region_id + "_lib_curve.csv");
    write_curve_csv(lib_csv, s, curve);
    CHECK(slurp(out / (s.region_id + "_vigilant_curve.csv")) == slurp(lib_csv));
  }
}

TEST_CASE("rerunning with the same seed reproduces artifacts bit-exactly", "[cli]") {
  const auto dir = fresh_dir("repro");
  const auto spec = dir / "spec.json";
  std::ofstream(spec) << R"({"model":"blip","T":45,"beta":-5.0,"noise_sd":0.15,"seed":7})";
  const auto out1 = dir / "run1";
  const auto out2 = dir / "run2";
  REQUIRE(run_cli("simulate --spec " + spec.string() + " --reps 3 --seed 7 --out " +
                  out1.string()) == 0);
  REQUIRE(run_cli("simulate --spec " + spec.string() + " --reps 3 --seed 7 --out " +
                  out2.string()) == 0);
  CHECK(slurp(out1 / "simulated.csv") == slurp(out2 / "simulated.csv"));
  CHECK(!slurp(out1 / "simulated.csv").empty());
}

TEST_CASE("cli exit codes distinguish config and data errors", "[cli]") {
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("fit --no-such-flag x") == 2);
  CHECK(run_cli("fit --input /nonexistent/file.csv") == 3);

  const auto dir = fresh_dir("badcsv");
  std::ofstream(dir / "bad.csv") << "region,week,deaths\nCA,1,2\n";
  CHECK(run_cli("fit --input " + (dir / "bad.csv").string()) == 3);
}

TEST_CASE("simulate coverage check writes a report", "[cli]") {
  const auto dir = fresh_dir("cov");
  const auto spec = dir / "spec.json";
  // tiny replicate count: smoke only, the acceptance suite runs 500
  std::ofstream(spec) << R"({"model":"blip","T":45,"beta":-5.0,"noise_sd":0.15,)"
                      << R"("drift_coeffs":[0.35,-0.012],"seed":1})";
  REQUIRE(run_cli("simulate --spec " + spec.string() +
                  " --reps 20 --check coverage --k 3 --seed 42 --out " + dir.string()) == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "coverage.json"));
  CHECK(j["reps"].get<int>() == 20);
  CHECK(j["coverage"].get<double>() >= 0.0);
  CHECK(j["coverage"].get<double>() <= 1.0);
  CHECK(std::abs(j["mean_beta"].get<double>() - (-5.0)) < 1.0);
}
