#include "nexus/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace nexus {

namespace {

struct CliOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string grid;
  std::string mode;
};

PipelineConfig build_config(const CliOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  PipelineConfig c = load_config(o.config);
  if (const char* env = std::getenv(kOutDirEnv); env && *env) c.output_dir = env;
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  if (!o.grid.empty()) c.grids = {*grid_preset(o.grid)};
  if (!o.mode.empty()) c.mode = o.mode;
  return c;
}

std::filesystem::path report_dir(const CliOptions& o) {
  if (!o.out.empty()) return o.out;
  if (!o.config.empty()) return build_config(o).output_dir;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  throw ConfigError("report needs --out or --config");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Happiness and sustainability analysis pipeline", "nexus"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1, 1);

  CliOptions o;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"ingest", "Load, filter to complete cases and standardize the input"},
      {"diagnose", "Correlations, VIF and Cook's distance"},
      {"cluster", "k-means and Ward clustering with silhouette selection and PCA"},
      {"glasso", "Graphical lasso network with BIC/EBIC penalty selection"},
      {"qqr", "Quantile-on-quantile slope surfaces"},
      {"run", "Full pipeline followed by the report"},
      {"report", "Summarize a finished run"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--out", o.out, "Output directory");
    if (name == "report") continue;
    sub->add_option("--seed", o.seed, "Global random seed");
    sub->add_option("--grid", o.grid, "Quantile grid preset")->check(CLI::IsMember({"central", "fine"}));
    sub->add_option("--mode", o.mode, "Treatment of the controls")->check(CLI::IsMember({"controls", "residuals"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    if (cmd == "report") {
      RunManifest m = read_manifest(report_dir(o));
      std::cout << emit_report(m).string() << "\n";
      return 0;
    }
    const PipelineConfig c = build_config(o);
    if (cmd == "run") {
      RunManifest m = run_pipeline(c);
      emit_report(m);
    } else {
      run_stages(c, {cmd});
    }
    std::cout << (c.output_dir / "manifest.json").string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const StageFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace nexus
