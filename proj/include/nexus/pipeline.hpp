#pragma once

#include "nexus/dataset.hpp"
#include "nexus/glasso.hpp"
#include "nexus/qqr.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nexus {

inline constexpr const char* kVersion = "nexus 1.0.0";
inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kOutDirEnv = "NEXUS_OUT_DIR";

struct NamedGrid {
  std::string name;
  QuantileGrid grid;
};

struct PipelineConfig {
  int schema_version = kConfigSchemaVersion;
  std::filesystem::path input_path;
  std::string id_column = "iso3";
  std::string happiness = "Happiness";
  std::string sdg = "SDG";
  std::vector<std::string> controls;  // empty: every control in the schema

  std::string ols_response;                 // empty: the happiness outcome
  std::vector<std::string> ols_predictors;  // empty: every other variable

  std::vector<std::string> cluster_features;  // empty: every variable
  int k_min = 2;
  int k_max = 8;
  int restarts = 10;

  std::vector<std::string> glasso_variables;  // empty: every variable
  int glasso_grid_size = 30;
  double glasso_ratio = 0.01;
  CriterionSpec<double> criterion;
  double glasso_tol = 1e-6;
  int glasso_max_iter = 1000;
  std::optional<std::filesystem::path> covariance_path;
  Index covariance_n = 0;

  std::vector<NamedGrid> grids{{"central", QuantileGrid::central()}};
  KernelSpec kernel;
  std::string mode = "controls";  // or "residuals"
  unsigned threads = 0;

  int gam_num_basis = 10;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "nexus_out";
  Schema schema = default_schema();

  // Defaults filled in.
  std::vector<std::string> resolved_controls() const;
  std::string resolved_ols_response() const;
  std::vector<std::string> resolved_ols_predictors() const;
  std::vector<std::string> resolved_cluster_features() const;
  std::vector<std::string> resolved_glasso_variables() const;
};

/// Parses the JSON config. Unknown keys and malformed values throw
/// ConfigError. Relative paths resolve against `base_dir`.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& c);

/// Checks codes, grids, ranges and the input header. Touches nothing on disk.
void validate_config(const PipelineConfig& c);

std::optional<NamedGrid> grid_preset(const std::string& name);

struct StageRecord {
  std::string name;
  std::string status;  // completed, failed
  double seconds = 0.0;
  std::string error;
  std::vector<std::string> outputs;  // relative to the output directory
};

struct RunManifest {
  std::string version = kVersion;
  std::string config;  // JSON snapshot
  std::filesystem::path output_dir;
  std::vector<StageRecord> stages;

  const StageRecord* stage(const std::string& name) const;
  bool completed(const std::string& name) const;
  /// Every file the run produced, sorted, each listed once, including
  /// manifest.json and, once emitted, report.txt.
  std::vector<std::string> inventory() const;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"ingest", "diagnose", "cluster", "glasso", "qqr"};
  return names;
}

/// Runs the named stages in pipeline order, reusing cached standardized data
/// from the output directory when it exists. A failing stage is recorded in
/// the manifest, which is written, and StageFailure is thrown.
RunManifest run_stages(const PipelineConfig& c, const std::vector<std::string>& stages);
RunManifest run_pipeline(const PipelineConfig& c);

void write_manifest(const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& output_dir);

std::string render_report(const RunManifest& m);
/// Writes report.txt next to the manifest and records it. Returns its path.
std::filesystem::path emit_report(RunManifest& m);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace nexus
