// ohmm: run online HMM learning experiments and compare their outputs.
//
//   ohmm run --config <file> --out <dir> [--seed N] [--threads K]
//   ohmm compare <manifest> <manifest>...
//
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ohmm/runner.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online learning of discrete hidden Markov models in a teacher-student setting"};
  app.footer(ohmm::config_defaults_help());
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  auto* run_cmd = app.add_subcommand("run", "Run every learner in a config file and write CSV curves + manifest");
  run_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run_cmd->add_option("--out", out_dir, "Output directory")->required();
  run_cmd->add_option("--seed", seed, "Master seed (overrides the config file)");
  run_cmd->add_option("--threads", threads, "Worker threads for replicas, 0 = all cores (overrides the config)");

  std::vector<std::string> manifests;
  auto* compare_cmd = app.add_subcommand("compare", "Summarize final KL, area under curve and wall clock");
  compare_cmd->add_option("manifests", manifests, "manifest.json files (at least two)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  if (*run_cmd) {
    ohmm::ExperimentConfig config;
    try {
      config = ohmm::parse_config(config_path);
      if (seed) config.seed = *seed;
      if (threads) config.threads = *threads;
      ohmm::check_experiment(config);
    } catch (const ohmm::Error& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kConfigError;
    }
    try {
      const auto manifest = ohmm::run(config, out_dir);
      for (const auto& l : manifest.learners) {
        std::cout << l.name << ": " << (std::filesystem::path(out_dir) / l.csv).string() << " ("
                  << l.wall_clock_seconds << " s)\n";
      }
      std::cout << "manifest: " << (std::filesystem::path(out_dir) / "manifest.json").string() << '\n';
    } catch (const std::exception& e) {
      std::cerr << "run failed: " << e.what() << '\n';
      return kRuntimeError;
    }
    return 0;
  }

  std::vector<std::filesystem::path> paths(manifests.begin(), manifests.end());
  try {
    const auto rows = ohmm::compare(paths);
    std::cout << ohmm::format_summary(rows);
  } catch (const ohmm::ConfigError& e) {
    std::cerr << "compare: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "compare failed: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
