#include "support.hpp"

#include "nexus/pipeline.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <set>

using namespace nexus;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json base_config(const fs::path& input, const fs::path& out) {
  return {{"schema_version", 1},
          {"input_path", input.string()},
          {"output_dir", out.string()},
          {"seed", 7},
          {"clustering", {{"k_min", 2}, {"k_max", 5}, {"restarts", 4}}},
          {"glasso", {{"grid_size", 10}}},
          {"qqr", {{"kernel", {{"bandwidth", 0.2}}}}}};
}

std::set<std::string> files_under(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), dir).generic_string());
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& x) { return std::find(v.begin(), v.end(), x) != v.end(); }

int run_cli_process(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + " \"" NEXUS_CLI_PATH "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Fixture {
  testing::TempDir dir{"pipeline"};
  fs::path input = dir / "countries.csv";
  explicit Fixture(int n = 30, std::uint64_t seed = 3) { csv::write_file(input, testing::country_csv(n, seed, {{4, "GE"}})); }
  PipelineConfig config(const std::string& out, json extra = json::object()) const {
    json j = base_config(input, dir / out);
    j.merge_patch(extra);
    return parse_config(j.dump(), dir.path());
  }
};

}  // namespace

TEST_CASE("config parsing") {
  Fixture f;
  SUBCASE("defaults and overrides") {
    const PipelineConfig c = f.config("out");
    CHECK(c.input_path == f.input);
    CHECK(c.k_max == 5);
    CHECK(c.glasso_grid_size == 10);
    CHECK(c.kernel.bandwidth == 0.2);
    CHECK(c.kernel.locate_on == KernelLocation::RankScale);
    CHECK(c.mode == "controls");
    REQUIRE(c.grids.size() == 1);
    CHECK(c.grids[0].name == "central");
    CHECK(c.resolved_controls().size() == 12);
    CHECK(c.resolved_glasso_variables().size() == 14);
    CHECK(c.criterion.refit);
    CHECK_NOTHROW(validate_config(c));
  }
  SUBCASE("grids from presets and ranges") {
    const PipelineConfig c = f.config(
        "out", {{"qqr", {{"grids", {"fine", {{"name", "coarse"}, {"taus", {{"start", 0.25}, {"stop", 0.75}, {"step", 0.25}}},
                                                {"thetas", {0.2, 0.8}}}}}}}});
    REQUIRE(c.grids.size() == 2);
    CHECK(c.grids[0].grid.taus.size() == 99);
    CHECK(c.grids[1].grid.taus == std::vector<double>{0.25, 0.5, 0.75});
    CHECK(c.grids[1].grid.thetas == std::vector<double>{0.2, 0.8});
  }
  SUBCASE("relative paths resolve against the config directory") {
    json j = base_config("countries.csv", "results");
    const PipelineConfig c = parse_config(j.dump(), f.dir.path());
    CHECK(c.input_path == f.dir / "countries.csv");
    CHECK(c.output_dir == f.dir / "results");
  }
  SUBCASE("round trip through JSON") {
    const PipelineConfig c = f.config("out", {{"glasso", {{"criterion", "ebic"}, {"gamma", 0.25}}}});
    const PipelineConfig back = parse_config(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(back.criterion.kind == Criterion::Ebic);
  }
  SUBCASE("malformed configs") {
    for (const json& bad : std::vector<json>{
             {{"bogus", 1}},
             {{"schema_version", 2}},
             {{"glasso", {{"criterion", "aic"}}}},
             {{"qqr", {{"kernel", {{"bandwidth", -1}}}}}},
             {{"qqr", {{"grids", {"medium"}}}}},
             {{"qqr", {{"mode", "both"}}}},
             {{"clustering", {{"k_min", 5}, {"k_max", 3}}}},
             {{"outcomes", {{"happiness", "SDG"}}}},
             {{"controls", {"Nope"}}},
             {{"seed", "seven"}}}) {
      CAPTURE(bad.dump());
      CHECK_THROWS_AS(validate_config(f.config("out", bad)), ConfigError);
    }
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    CHECK_THROWS_AS(parse_config("{}"), ConfigError);
  }
  SUBCASE("missing input and missing columns") {
    PipelineConfig c = f.config("out");
    c.input_path = f.dir / "absent.csv";
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    csv::write_file(f.dir / "short.csv", "iso3,Happiness,SDG\nA,1,2\n");
    c.input_path = f.dir / "short.csv";
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    CHECK_THROWS_AS(run_pipeline(c), ConfigError);
    CHECK_FALSE(fs::exists(f.dir / "out"));
  }
}

TEST_CASE("full run writes every stage output") {
  Fixture f;
  const PipelineConfig c = f.config("out");
  RunManifest m = run_pipeline(c);
  for (const auto& s : stage_names()) {
    CAPTURE(s);
    REQUIRE(m.stage(s));
    CHECK(m.stage(s)->status == "completed");
    CHECK_FALSE(m.stage(s)->outputs.empty());
  }
  for (const char* file : {"standardized.csv", "dataset_summary.json", "correlation.csv", "vif.csv", "cooks.csv",
                           "cluster_kmeans.csv", "cluster_ward.csv", "cluster_pca.csv", "glasso_precision.csv",
                           "glasso_edges.csv", "glasso_network.graphml", "qqr_central.csv", "qqr_central.json"})
    CHECK(contains(m.inventory(), file));
  emit_report(m);
  const auto inv = m.inventory();
  CHECK(std::set<std::string>(inv.begin(), inv.end()) == files_under(c.output_dir));

  const json ds = json::parse(csv::read_file(c.output_dir / "dataset_summary.json"));
  CHECK(ds.at("rows_loaded") == 30);
  CHECK(ds.at("rows_complete") == 29);
  const QqrSurface s = read_surface(c.output_dir / "qqr_central.csv", c.output_dir / "qqr_central.json");
  CHECK(s.skipped.empty());
  CHECK(s.cells.size() == 81);

  const std::string report = csv::read_file(c.output_dir / "report.txt");
  for (const char* heading : {"Dataset", "Diagnostics", "Clustering", "network", "Quantile-on-quantile"})
    CHECK(report.find(heading) != std::string::npos);
  CHECK(report.find("complete cases (n):   29") != std::string::npos);
  // read back from disk renders the same report
  const RunManifest back = read_manifest(c.output_dir);
  CHECK(render_report(back) == report);
  CHECK(back.inventory() == m.inventory());
}

TEST_CASE("reruns are byte identical") {
  Fixture f;
  const PipelineConfig a = f.config("a"), b = f.config("b");
  RunManifest ma = run_pipeline(a);
  emit_report(ma);
  RunManifest mb = run_pipeline(b);
  emit_report(mb);
  REQUIRE(ma.inventory() == mb.inventory());
  for (const auto& file : ma.inventory()) {
    if (file == "manifest.json") continue;
    CAPTURE(file);
    CHECK(csv::read_file(a.output_dir / file) == csv::read_file(b.output_dir / file));
  }
  // and again into the same directory
  std::map<std::string, std::string> before;
  for (const auto& file : ma.inventory()) before[file] = csv::read_file(a.output_dir / file);
  RunManifest again = run_pipeline(a);
  emit_report(again);
  for (const auto& [file, text] : before)
    if (file != "manifest.json") CHECK(csv::read_file(a.output_dir / file) == text);
}

TEST_CASE("stages run in isolation") {
  Fixture f;
  const PipelineConfig c = f.config("out");
  RunManifest m = run_stages(c, {"ingest"});
  CHECK(m.completed("ingest"));
  CHECK_FALSE(m.completed("qqr"));
  const std::string report = render_report(m);
  CHECK(report.find("Dataset") != std::string::npos);
  CHECK(report.find("network") == std::string::npos);

  m = run_stages(c, {"qqr"});
  CHECK(m.completed("ingest"));
  CHECK(m.completed("qqr"));
  const std::string first = csv::read_file(c.output_dir / "qqr_central.csv");
  m = run_stages(c, {"glasso", "diagnose"});
  CHECK(m.completed("glasso"));
  CHECK(m.completed("diagnose"));
  CHECK(m.completed("qqr"));
  m = run_stages(c, {"qqr"});
  CHECK(csv::read_file(c.output_dir / "qqr_central.csv") == first);
  // a different grid replaces the previous stage outputs
  PipelineConfig fine = c;
  fine.grids = {*grid_preset("fine")};
  m = run_stages(fine, {"qqr"});
  CHECK_FALSE(fs::exists(c.output_dir / "qqr_central.csv"));
  CHECK(fs::exists(c.output_dir / "qqr_fine.csv"));
  const auto inv = m.inventory();
  CHECK(std::set<std::string>(inv.begin(), inv.end()) == files_under(c.output_dir));
  CHECK_THROWS_AS(run_stages(c, {"plot"}), ConfigError);
}

TEST_CASE("a failing stage is recorded") {
  Fixture f;
  // more spline knots than distinct control values
  PipelineConfig c = f.config("out", {{"controls", {"GDPpc"}}, {"gam", {{"num_basis", 40}}}, {"qqr", {{"mode", "residuals"}}}});
  CHECK_THROWS_AS(run_stages(c, {"qqr"}), StageFailure);
  const RunManifest m = read_manifest(c.output_dir);
  REQUIRE(m.stage("qqr"));
  CHECK(m.stage("qqr")->status == "failed");
  CHECK_FALSE(m.stage("qqr")->error.empty());
  CHECK(m.completed("ingest"));
}

TEST_CASE("residuals mode partials out the controls with smooths") {
  Fixture f(60, 4);
  const PipelineConfig c =
      f.config("out", {{"controls", {"GDPpc", "LE"}}, {"gam", {{"num_basis", 5}}}, {"qqr", {{"mode", "residuals"}}}});
  const RunManifest m = run_stages(c, {"qqr"});
  for (const char* file : {"gam_Happiness.json", "gam_SDG.json", "gam_residuals_Happiness.csv", "gam_residuals_SDG.csv"})
    CHECK(contains(m.inventory(), file));
  const QqrSurface s = read_surface(c.output_dir / "qqr_central.csv", c.output_dir / "qqr_central.json");
  CHECK(s.mode == "residuals");
}

TEST_CASE("constant slope data gives a flat surface through the pipeline") {
  testing::TempDir dir("pipeline-flat");
  Rng rng(5);
  const auto schema = default_schema();
  std::string text = "iso3";
  for (const auto& v : schema) text += "," + v.code;
  text += "\n";
  const Index n = 400;
  VectorX<double> sdg(n), hap(n);
  for (Index i = 0; i < n; ++i) {
    sdg(i) = rng.uniform(50, 85);
    hap(i) = 1.0 + 0.08 * sdg(i) + 0.05 * rng.normal();
    text += testing::country_id(static_cast<int>(i));
    for (const auto& v : schema) {
      const double value = v.code == "Happiness" ? hap(i) : v.code == "SDG" ? sdg(i) : rng.normal();
      text += "," + csv::format(value);
    }
    text += "\n";
  }
  csv::write_file(dir / "flat.csv", text);
  json j = base_config(dir / "flat.csv", dir / "out");
  j["controls"] = {"GDPpc"};
  j["qqr"]["kernel"]["bandwidth"] = 0.1;
  const PipelineConfig c = parse_config(j.dump());
  run_stages(c, {"qqr"});
  const QqrSurface s = read_surface(c.output_dir / "qqr_central.csv", c.output_dir / "qqr_central.json");
  REQUIRE(s.skipped.empty());
  // slope on the standardized scale
  auto sd = [](const VectorX<double>& v) { return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1)); };
  const double truth = 0.08 * sd(sdg) / sd(hap);
  const auto q = quadrant_summary(s);
  for (double v : {q.lower_left, q.lower_right, q.upper_left, q.upper_right, q.center}) CHECK(std::abs(v - truth) < 0.05);
}

TEST_CASE("command line") {
  Fixture f;
  const json j = base_config(f.input, f.dir / "cli_out");
  csv::write_file(f.dir / "config.json", j.dump());
  const std::string cfg = "--config \"" + (f.dir / "config.json").string() + "\"";

  CHECK(run_cli_process("--help") == 0);
  CHECK(run_cli_process("run --help") == 0);
  CHECK(run_cli_process("") == 2);
  CHECK(run_cli_process("frobnicate") == 2);
  CHECK(run_cli_process("run " + cfg + " --grid medium") == 2);
  CHECK(run_cli_process("run --config \"" + (f.dir / "absent.json").string() + "\"") == 2);
  csv::write_file(f.dir / "bad.json", R"({"schema_version": 1, "mystery": true})");
  CHECK(run_cli_process("run --config \"" + (f.dir / "bad.json").string() + "\"") == 2);

  CHECK(run_cli_process("ingest " + cfg) == 0);
  CHECK(fs::exists(f.dir / "cli_out" / "standardized.csv"));
  CHECK(run_cli_process("report --out \"" + (f.dir / "cli_out").string() + "\"") == 0);
  CHECK(fs::exists(f.dir / "cli_out" / "report.txt"));
  CHECK(run_cli_process("qqr " + cfg + " --grid central --mode controls --seed 3") == 0);
  CHECK(fs::exists(f.dir / "cli_out" / "qqr_central.csv"));

  CHECK(run_cli_process("run " + cfg + " --out \"" + (f.dir / "flag_out").string() + "\"") == 0);
  CHECK(fs::exists(f.dir / "flag_out" / "report.txt"));
  CHECK(run_cli_process("ingest " + cfg, "NEXUS_OUT_DIR=\"" + (f.dir / "env_out").string() + "\"") == 0);
  CHECK(fs::exists(f.dir / "env_out" / "manifest.json"));
  // the flag beats the environment
  CHECK(run_cli_process("ingest " + cfg + " --out \"" + (f.dir / "flag2").string() + "\"",
                        "NEXUS_OUT_DIR=\"" + (f.dir / "env2").string() + "\"") == 0);
  CHECK(fs::exists(f.dir / "flag2" / "manifest.json"));
  CHECK_FALSE(fs::exists(f.dir / "env2"));

  // runtime failure
  json failing = j;
  failing["controls"] = {"GDPpc"};
  failing["gam"] = {{"num_basis", 40}};
  failing["qqr"]["mode"] = "residuals";
  csv::write_file(f.dir / "failing.json", failing.dump());
  CHECK(run_cli_process("qqr --config \"" + (f.dir / "failing.json").string() + "\"") == 3);
  CHECK(run_cli_process("report --out \"" + (f.dir / "nowhere").string() + "\"") == 3);
}
