#pragma once

// Experiment configuration files, run orchestration, CSV/manifest output and
// cross-run comparison. Backs the `ohmm` command-line tool.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ohmm/harness.hpp"

namespace ohmm {

std::string_view artifact_version();

/// Strict parse: unknown keys and invalid values raise ConfigError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Full echo with every default spelled out; config_from_json(config_to_json(c)) == c.
nlohmann::json config_to_json(const ExperimentConfig& c);

ExperimentConfig parse_config(const std::filesystem::path& file);

/// Text for --help listing every default.
std::string config_defaults_help();

struct LearnerOutput {
  std::string name;
  Algorithm algorithm = Algorithm::mpa;
  std::string csv;  // relative to the manifest's directory
  double wall_clock_seconds = 0.0;
  long annotations = 0;
  double max_projection_residual = 0.0;
};

struct RunManifest {
  std::string artifact_version;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  std::vector<LearnerOutput> learners;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
RunManifest read_manifest(const std::filesystem::path& file);

/// Columns: p, kl_mean, kl_stderr, inf_flag, then pi_i, A_ij, B_ik when
/// `with_snapshots` (cells empty on rows without a snapshot). Infinite KL is
/// written as kInfiniteKlSentinel with inf_flag = 1.
void write_curve_csv(std::ostream& os, const AveragedCurve& curve, const ModelDims& dims, bool with_snapshots);

struct CurveTable {
  std::vector<long> p;
  std::vector<double> kl_mean;
  std::vector<double> kl_stderr;
  std::vector<int> inf_flag;
};
CurveTable read_curve_csv(const std::filesystem::path& file);

/// Runs every configured learner over the same replicas and writes
/// <out>/<learner>.csv plus <out>/manifest.json.
RunManifest run(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct SummaryRow {
  std::string manifest;
  std::string learner;
  double final_kl = 0.0;
  double auc = 0.0;  // trapezoidal area under kl_mean over p
  double wall_clock_seconds = 0.0;
};

/// Needs >= 2 manifests over identical dims and schedules (ConfigError otherwise).
std::vector<SummaryRow> compare(std::span<const std::filesystem::path> manifests);
std::string format_summary(std::span<const SummaryRow> rows);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double x);

}  // namespace ohmm
