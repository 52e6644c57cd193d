// ncrel: run reliability trials from a manifest, sweep one parameter, or
// run the built-in self tests.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ncrel/harness.hpp"
#include "ncrel/manifest.hpp"
#include "ncrel/selftest.hpp"

#ifndef NCREL_FIXTURE_DIR
#define NCREL_FIXTURE_DIR "tests/fixtures"
#endif

namespace fs = std::filesystem;
using namespace ncrel;

namespace {

int run_trials(const std::vector<harness::ExperimentConfig>& trials, const fs::path& csv_path,
               std::vector<harness::MetricsReport>* keep = nullptr) {
  std::vector<harness::MetricsReport> rows;
  rows.reserve(trials.size());
  bool failed = false;
  for (const auto& t : trials) {
    std::cerr << "running " << t.id << " (" << t.reliability.name() << ")\n";
    rows.push_back(harness::run_trial(t));
    if (!rows.back().error.empty()) {
      failed = true;
      std::cerr << "  error: " << rows.back().error << '\n';
    }
  }
  std::ofstream out(csv_path);
  if (!out) {
    std::cerr << "cannot write " << csv_path << '\n';
    return 2;
  }
  manifest::write_csv_header(out);
  for (const auto& r : rows) manifest::write_csv_row(out, r);
  std::cerr << "wrote " << csv_path << '\n';
  if (keep) *keep = std::move(rows);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Network-coded packet erasure codec: trials, sweeps and self tests"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  std::size_t repeat = 0;
  std::string out_dir = ".";
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (overrides the manifest)");
  auto* repeat_opt = app.add_option("--repeat", repeat, "Repetitions per trial (overrides the manifest)")
                         ->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory");

  std::string manifest_path;
  auto* run = app.add_subcommand("run", "Run every trial of a manifest and write results.csv");
  run->add_option("manifest", manifest_path, "Manifest file (JSON)")->required();

  std::string param;
  std::string values;
  auto* sweep = app.add_subcommand("sweep", "Sweep one parameter of the manifest's first trial");
  sweep->add_option("manifest", manifest_path, "Manifest file (JSON)")->required();
  sweep->add_option("--param", param, "Nm, p, offered_load or Np")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  std::string fixtures = NCREL_FIXTURE_DIR;
  auto* self = app.add_subcommand("selftest", "Field, codec and wire-fixture checks");
  self->add_option("--fixtures", fixtures, "Golden fixture directory");

  CLI11_PARSE(app, argc, argv);

  manifest::Overrides ov;
  if (*seed_opt) ov.seed = seed;
  if (*repeat_opt) ov.repeat = repeat;

  if (*self) {
    const auto results = selftest::run_all(fixtures);
    return selftest::report(std::cout, results) ? 0 : 1;
  }

  try {
    const auto m = manifest::load_manifest(manifest_path, ov);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (*run) return run_trials(m.trials, fs::path(out_dir) / "results.csv");

    const auto p = manifest::parse_sweep_param(param);
    const auto xs = manifest::parse_values(values);
    const auto trials = manifest::expand_sweep(m.trials.front(), p, xs);
    const auto stem = "sweep_" + manifest::sweep_param_name(p);
    std::vector<harness::MetricsReport> rows;
    const int rc = run_trials(trials, fs::path(out_dir) / (stem + ".csv"), &rows);
    std::ofstream dat(fs::path(out_dir) / (stem + ".dat"));
    manifest::write_plot_data(dat, p, xs, rows);
    return rc;
  } catch (const manifest::ManifestError& e) {
    std::cerr << "manifest error: " << e.what() << '\n';
    return 2;
  }
}
