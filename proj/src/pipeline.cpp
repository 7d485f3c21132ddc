#include "nexus/pipeline.hpp"

#include "nexus/clustering.hpp"
#include "nexus/csv.hpp"
#include "nexus/diagnostics.hpp"
#include "nexus/gam.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

namespace nexus {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string num(double v, int prec = 4) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_into(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid value for '" + std::string(key) + "' in " + where);
  }
}

std::vector<double> axis_from_json(const json& v, const std::string& where) {
  if (v.is_array()) {
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(where + " must hold numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  check_keys(v, {"start", "stop", "step"}, where);
  double start = 0, stop = 0, step = 0;
  read_into(v, "start", start, where);
  read_into(v, "stop", stop, where);
  read_into(v, "step", step, where);
  try {
    return quantile_range(start, stop, step);
  } catch (const InvalidArgument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

template <typename Container>
bool contains(const Container& c, const std::string& v) {
  return std::find(c.begin(), c.end(), v) != c.end();
}

std::vector<std::string> schema_codes(const Schema& s) {
  std::vector<std::string> out;
  for (const auto& v : s) out.push_back(v.code);
  return out;
}

}  // namespace

std::optional<NamedGrid> grid_preset(const std::string& name) {
  if (name == "central") return NamedGrid{name, QuantileGrid::central()};
  if (name == "fine") return NamedGrid{name, QuantileGrid::fine()};
  return std::nullopt;
}

std::vector<std::string> PipelineConfig::resolved_controls() const {
  if (!controls.empty()) return controls;
  std::vector<std::string> out;
  for (const auto& v : schema)
    if (v.code != happiness && v.code != sdg) out.push_back(v.code);
  return out;
}

std::string PipelineConfig::resolved_ols_response() const { return ols_response.empty() ? happiness : ols_response; }

std::vector<std::string> PipelineConfig::resolved_ols_predictors() const {
  if (!ols_predictors.empty()) return ols_predictors;
  std::vector<std::string> out;
  const std::string response = resolved_ols_response();
  for (const auto& v : schema)
    if (v.code != response) out.push_back(v.code);
  return out;
}

std::vector<std::string> PipelineConfig::resolved_cluster_features() const {
  return cluster_features.empty() ? schema_codes(schema) : cluster_features;
}

std::vector<std::string> PipelineConfig::resolved_glasso_variables() const {
  return glasso_variables.empty() ? schema_codes(schema) : glasso_variables;
}

PipelineConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"schema_version", "input_path", "id_column", "outcomes", "controls", "diagnostics", "clustering",
                 "glasso", "qqr", "gam", "seed", "output_dir"},
             "config");
  PipelineConfig c;
  if (!j.contains("schema_version")) throw ConfigError("config needs a schema_version field");
  read_into(j, "schema_version", c.schema_version, "config");
  std::string input;
  read_into(j, "input_path", input, "config");
  if (!input.empty()) c.input_path = resolve(input, base_dir);
  read_into(j, "id_column", c.id_column, "config");
  if (j.contains("outcomes")) {
    const auto& o = j["outcomes"];
    check_keys(o, {"happiness", "sdg"}, "outcomes");
    read_into(o, "happiness", c.happiness, "outcomes");
    read_into(o, "sdg", c.sdg, "outcomes");
  }
  read_into(j, "controls", c.controls, "config");
  if (j.contains("diagnostics")) {
    const auto& d = j["diagnostics"];
    check_keys(d, {"response", "predictors"}, "diagnostics");
    read_into(d, "response", c.ols_response, "diagnostics");
    read_into(d, "predictors", c.ols_predictors, "diagnostics");
  }
  if (j.contains("clustering")) {
    const auto& d = j["clustering"];
    check_keys(d, {"features", "k_min", "k_max", "restarts"}, "clustering");
    read_into(d, "features", c.cluster_features, "clustering");
    read_into(d, "k_min", c.k_min, "clustering");
    read_into(d, "k_max", c.k_max, "clustering");
    read_into(d, "restarts", c.restarts, "clustering");
  }
  if (j.contains("glasso")) {
    const auto& d = j["glasso"];
    check_keys(d, {"variables", "grid_size", "ratio", "criterion", "gamma", "refit", "tol", "max_iter",
                   "covariance_path", "covariance_n"},
               "glasso");
    read_into(d, "variables", c.glasso_variables, "glasso");
    read_into(d, "grid_size", c.glasso_grid_size, "glasso");
    read_into(d, "ratio", c.glasso_ratio, "glasso");
    std::string crit = "bic";
    read_into(d, "criterion", crit, "glasso");
    if (crit == "bic") c.criterion.kind = Criterion::Bic;
    else if (crit == "ebic") c.criterion.kind = Criterion::Ebic;
    else throw ConfigError("glasso criterion must be 'bic' or 'ebic'");
    read_into(d, "gamma", c.criterion.gamma, "glasso");
    read_into(d, "refit", c.criterion.refit, "glasso");
    read_into(d, "tol", c.glasso_tol, "glasso");
    read_into(d, "max_iter", c.glasso_max_iter, "glasso");
    std::string cov;
    read_into(d, "covariance_path", cov, "glasso");
    if (!cov.empty()) c.covariance_path = resolve(cov, base_dir);
    long long n = 0;
    read_into(d, "covariance_n", n, "glasso");
    c.covariance_n = static_cast<Index>(n);
  }
  if (j.contains("qqr")) {
    const auto& d = j["qqr"];
    check_keys(d, {"grids", "kernel", "mode", "threads"}, "qqr");
    if (d.contains("grids")) {
      if (!d["grids"].is_array()) throw ConfigError("qqr grids must be a list");
      c.grids.clear();
      for (const auto& g : d["grids"]) {
        if (g.is_string()) {
          auto preset = grid_preset(g.get<std::string>());
          if (!preset) throw ConfigError("unknown grid preset '" + g.get<std::string>() + "'");
          c.grids.push_back(*preset);
          continue;
        }
        check_keys(g, {"name", "taus", "thetas"}, "qqr grid");
        NamedGrid ng;
        read_into(g, "name", ng.name, "qqr grid");
        if (!g.contains("taus") || !g.contains("thetas")) throw ConfigError("qqr grid needs taus and thetas");
        ng.grid.taus = axis_from_json(g["taus"], "qqr grid taus");
        ng.grid.thetas = axis_from_json(g["thetas"], "qqr grid thetas");
        c.grids.push_back(std::move(ng));
      }
    }
    if (d.contains("kernel")) {
      const auto& k = d["kernel"];
      check_keys(k, {"family", "bandwidth", "locate_on"}, "qqr kernel");
      read_into(k, "family", c.kernel.family, "qqr kernel");
      read_into(k, "bandwidth", c.kernel.bandwidth, "qqr kernel");
      std::string loc = kernel_location_name(c.kernel.locate_on);
      read_into(k, "locate_on", loc, "qqr kernel");
      try {
        c.kernel.locate_on = parse_kernel_location(loc);
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
    }
    read_into(d, "mode", c.mode, "qqr");
    read_into(d, "threads", c.threads, "qqr");
  }
  if (j.contains("gam")) {
    check_keys(j["gam"], {"num_basis"}, "gam");
    read_into(j["gam"], "num_basis", c.gam_num_basis, "gam");
  }
  read_into(j, "seed", c.seed, "config");
  std::string out;
  read_into(j, "output_dir", out, "config");
  if (!out.empty()) c.output_dir = resolve(out, base_dir);
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = csv::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_config(text, path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  ojson j;
  j["schema_version"] = c.schema_version;
  j["input_path"] = c.input_path.string();
  j["id_column"] = c.id_column;
  j["outcomes"] = {{"happiness", c.happiness}, {"sdg", c.sdg}};
  j["controls"] = c.resolved_controls();
  j["diagnostics"] = {{"response", c.resolved_ols_response()}, {"predictors", c.resolved_ols_predictors()}};
  j["clustering"] = {{"features", c.resolved_cluster_features()},
                     {"k_min", c.k_min},
                     {"k_max", c.k_max},
                     {"restarts", c.restarts}};
  ojson g = {{"variables", c.resolved_glasso_variables()},
             {"grid_size", c.glasso_grid_size},
             {"ratio", c.glasso_ratio},
             {"criterion", c.criterion.kind == Criterion::Bic ? "bic" : "ebic"},
             {"gamma", c.criterion.gamma},
             {"refit", c.criterion.refit},
             {"tol", c.glasso_tol},
             {"max_iter", c.glasso_max_iter}};
  if (c.covariance_path) {
    g["covariance_path"] = c.covariance_path->string();
    g["covariance_n"] = c.covariance_n;
  }
  j["glasso"] = g;
  ojson grids = ojson::array();
  for (const auto& ng : c.grids) grids.push_back({{"name", ng.name}, {"taus", ng.grid.taus}, {"thetas", ng.grid.thetas}});
  j["qqr"] = {{"grids", grids},
              {"kernel",
               {{"family", c.kernel.family},
                {"bandwidth", c.kernel.bandwidth},
                {"locate_on", kernel_location_name(c.kernel.locate_on)}}},
              {"mode", c.mode},
              {"threads", c.threads}};
  j["gam"] = {{"num_basis", c.gam_num_basis}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  return j.dump(2);
}

void validate_config(const PipelineConfig& c) {
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version));
  try {
    validate_schema(c.schema);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const auto codes = schema_codes(c.schema);
  auto known = [&](const std::vector<std::string>& list, const std::string& where) {
    std::set<std::string> seen;
    for (const auto& code : list) {
      if (!contains(codes, code)) throw ConfigError("unknown variable code '" + code + "' in " + where);
      if (!seen.insert(code).second) throw ConfigError("duplicate variable code '" + code + "' in " + where);
    }
  };
  known({c.happiness}, "outcomes");
  known({c.sdg}, "outcomes");
  if (c.happiness == c.sdg) throw ConfigError("outcome codes must be distinct");
  const auto controls = c.resolved_controls();
  known(controls, "controls");
  if (contains(controls, c.happiness) || contains(controls, c.sdg)) throw ConfigError("controls must not include an outcome");
  const auto response = c.resolved_ols_response();
  known({response}, "diagnostics response");
  const auto predictors = c.resolved_ols_predictors();
  known(predictors, "diagnostics predictors");
  if (predictors.size() < 2) throw ConfigError("diagnostics needs at least two predictors");
  if (contains(predictors, response)) throw ConfigError("diagnostics predictors must not include the response");
  const auto features = c.resolved_cluster_features();
  known(features, "clustering features");
  if (features.empty()) throw ConfigError("clustering needs at least one feature");
  if (c.k_min < 2 || c.k_max < c.k_min) throw ConfigError("clustering needs 2 <= k_min <= k_max");
  if (c.restarts < 1) throw ConfigError("clustering restarts must be at least 1");
  const auto gvars = c.resolved_glasso_variables();
  known(gvars, "glasso variables");
  if (gvars.size() < 2) throw ConfigError("glasso needs at least two variables");
  if (c.glasso_grid_size < 1) throw ConfigError("glasso grid_size must be at least 1");
  if (!(c.glasso_ratio > 0.0 && c.glasso_ratio <= 1.0)) throw ConfigError("glasso ratio must lie in (0, 1]");
  if (!(c.criterion.gamma >= 0.0)) throw ConfigError("glasso gamma must be non-negative");
  if (!(c.glasso_tol > 0.0)) throw ConfigError("glasso tol must be positive");
  if (c.glasso_max_iter < 1) throw ConfigError("glasso max_iter must be at least 1");
  if (c.covariance_path) {
    if (!fs::is_regular_file(*c.covariance_path))
      throw ConfigError("covariance file not found: " + c.covariance_path->string());
    if (c.covariance_n < 2) throw ConfigError("glasso covariance_n must be at least 2");
  }
  if (c.grids.empty()) throw ConfigError("qqr needs at least one grid");
  std::set<std::string> names;
  for (const auto& ng : c.grids) {
    if (ng.name.empty() || !std::all_of(ng.name.begin(), ng.name.end(), [](char ch) {
          return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
        }))
      throw ConfigError("qqr grid names must be non-empty and use letters, digits, '_' or '-'");
    if (!names.insert(ng.name).second) throw ConfigError("duplicate qqr grid name '" + ng.name + "'");
    try {
      ng.grid.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError("qqr grid '" + ng.name + "': " + e.what());
    }
  }
  if (c.kernel.family != "gaussian") throw ConfigError("qqr kernel family must be 'gaussian'");
  if (!(c.kernel.bandwidth > 0.0) || !std::isfinite(c.kernel.bandwidth)) throw ConfigError("qqr bandwidth must be positive");
  if (c.mode != "controls" && c.mode != "residuals") throw ConfigError("qqr mode must be 'controls' or 'residuals'");
  if (c.gam_num_basis < 4) throw ConfigError("gam num_basis must be at least 4");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (c.id_column.empty()) throw ConfigError("id_column must not be empty");

  if (c.input_path.empty()) throw ConfigError("config needs an input_path");
  if (!fs::is_regular_file(c.input_path)) throw ConfigError("input file not found: " + c.input_path.string());
  std::vector<std::string> header;
  try {
    const std::string text = csv::read_file(c.input_path);
    const auto eol = text.find('\n');
    header = csv::parse(text.substr(0, eol)).header;
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read input header: ") + e.what());
  }
  if (!contains(header, c.id_column)) throw ConfigError("input has no id column '" + c.id_column + "'");
  for (const auto& code : codes)
    if (!contains(header, code)) throw ConfigError("input has no column '" + code + "'");
}

// ---------------------------------------------------------------------------

const StageRecord* RunManifest::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

bool RunManifest::completed(const std::string& name) const {
  const auto* s = stage(name);
  return s && s->status == "completed";
}

std::vector<std::string> RunManifest::inventory() const {
  std::set<std::string> files{"manifest.json"};
  for (const auto& s : stages) files.insert(s.outputs.begin(), s.outputs.end());
  return {files.begin(), files.end()};
}

void write_manifest(const RunManifest& m) {
  ojson j;
  j["version"] = m.version;
  j["config"] = m.config.empty() ? ojson::object() : ojson::parse(m.config);
  j["stages"] = ojson::array();
  for (const auto& s : m.stages) {
    ojson r = {{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}, {"outputs", s.outputs}};
    if (!s.error.empty()) r["error"] = s.error;
    j["stages"].push_back(r);
  }
  j["inventory"] = m.inventory();
  csv::write_file(m.output_dir / "manifest.json", j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& output_dir) {
  const fs::path path = output_dir / "manifest.json";
  if (!fs::is_regular_file(path)) throw IoError("no manifest in " + output_dir.string());
  json j;
  try {
    j = json::parse(csv::read_file(path));
    RunManifest m;
    m.output_dir = output_dir;
    m.version = j.at("version").get<std::string>();
    m.config = j.at("config").dump(2);
    for (const auto& r : j.at("stages")) {
      StageRecord s;
      s.name = r.at("name").get<std::string>();
      s.status = r.at("status").get<std::string>();
      s.seconds = r.at("seconds").get<double>();
      s.outputs = r.at("outputs").get<std::vector<std::string>>();
      if (r.contains("error")) s.error = r["error"].get<std::string>();
      m.stages.push_back(std::move(s));
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

namespace {

int stage_rank(const std::string& name) {
  const auto& names = stage_names();
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? static_cast<int>(names.size()) : static_cast<int>(it - names.begin());
}

class Runner {
 public:
  Runner(const PipelineConfig& c, RunManifest& m) : c_(c), m_(m), out_(c.output_dir) {}

  void stage(const std::string& name, const std::function<std::vector<std::string>()>& body) {
    discard(name);
    StageRecord rec;
    rec.name = name;
    const auto start = std::chrono::steady_clock::now();
    try {
      rec.outputs = body();
      rec.status = "completed";
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& f : written_)
      if (!contains(rec.outputs, f)) rec.outputs.push_back(f);
    written_.clear();
    const auto pos = std::find_if(m_.stages.begin(), m_.stages.end(),
                                  [&](const StageRecord& s) { return stage_rank(s.name) > stage_rank(name); });
    const bool failed = rec.status == "failed";
    const std::string error = rec.error;
    m_.stages.insert(pos, std::move(rec));
    write_manifest(m_);
    if (failed) throw StageFailure(name, error);
  }

  // Output path for a file, recorded against the running stage.
  fs::path file(const std::string& rel) {
    written_.push_back(rel);
    return out_ / rel;
  }

  void discard(const std::string& name) {
    const auto it = std::find_if(m_.stages.begin(), m_.stages.end(), [&](const StageRecord& s) { return s.name == name; });
    if (it == m_.stages.end()) return;
    for (const auto& f : it->outputs) {
      std::error_code ec;
      fs::remove(out_ / f, ec);
    }
    m_.stages.erase(it);
  }

  const StandardizedDataset& data() {
    if (data_) return *data_;
    const fs::path table = out_ / "standardized.csv", sidecar = out_ / "standardized_moments.csv";
    if (m_.completed("ingest") && fs::is_regular_file(table) && fs::is_regular_file(sidecar)) {
      data_ = read_standardized(table, sidecar, c_.schema, c_.id_column);
      return *data_;
    }
    ingest();
    return *data_;
  }

  void ingest() {
    stage("ingest", [&] {
      const Dataset raw = load_csv(c_.input_path, c_.schema, c_.id_column);
      const Dataset complete = complete_cases(raw);
      data_ = standardize(complete);
      write_standardized(*data_, file("standardized.csv"), file("standardized_moments.csv"), c_.id_column);
      ojson s;
      s["rows_loaded"] = raw.rows();
      s["rows_complete"] = complete.rows();
      s["columns"] = complete.cols();
      std::vector<std::string> dropped;
      for (const auto& id : raw.row_ids)
        if (!contains(complete.row_ids, id)) dropped.push_back(id);
      s["dropped"] = dropped;
      csv::write_file(file("dataset_summary.json"), s.dump(2) + "\n");
      return std::vector<std::string>{};
    });
  }

  void diagnose_stage() {
    const auto& d = data();
    stage("diagnose", [&] {
      const auto r = diagnose(d, c_.resolved_ols_response(), c_.resolved_ols_predictors());
      write_correlation_csv(r, file("correlation.csv"));
      write_vif_csv(r, file("vif.csv"));
      write_cooks_csv(r, file("cooks.csv"), c_.id_column);
      ojson s;
      s["response"] = r.fit.response_code;
      s["r_squared"] = r.fit.r_squared;
      s["cooks_threshold"] = r.cooks.threshold;
      s["influential"] = r.cooks.influential;
      csv::write_file(file("diagnostics_summary.json"), s.dump(2) + "\n");
      return std::vector<std::string>{};
    });
  }

  void cluster_stage() {
    const auto& d = data();
    stage("cluster", [&] {
      const auto features = c_.resolved_cluster_features();
      const MatrixX<double> X = d.select(features);
      const int k_max = std::min<int>(c_.k_max, static_cast<int>(X.rows()) - 1);
      KMeansOptions opts;
      opts.restarts = c_.restarts;
      opts.seed = c_.seed;
      const ElbowScan scan = elbow_scan(X, c_.k_min, k_max, opts);
      const ClusterResult& best = scan.chosen();
      const ClusterResult ward = ward_hierarchical(X, scan.chosen_k);
      const PcaProjection pca = pca2(X);
      write_wss_path_csv(scan, file("cluster_wss_path.csv"));
      write_assignments_csv(d.row_ids(), best.labels, file("cluster_kmeans.csv"), c_.id_column);
      write_assignments_csv(d.row_ids(), ward.labels, file("cluster_ward.csv"), c_.id_column);
      write_centroids_csv(best.centroids, features, file("cluster_centroids.csv"));
      write_pca_csv(d.row_ids(), pca, file("cluster_pca.csv"), c_.id_column);
      ojson s;
      s["k_range"] = {c_.k_min, k_max};
      s["chosen_k"] = scan.chosen_k;
      s["kmeans_silhouette"] = best.silhouette_mean;
      s["kmeans_wss"] = best.wss;
      s["ward_silhouette"] = ward.silhouette_mean;
      s["adjusted_rand_kmeans_ward"] = adjusted_rand_index(best.labels, ward.labels);
      s["pca_variance_explained"] = {pca.variance_explained(0), pca.variance_explained(1)};
      csv::write_file(file("cluster_summary.json"), s.dump(2) + "\n");
      return std::vector<std::string>{};
    });
  }

  void glasso_stage() {
    const StandardizedDataset* d = c_.covariance_path ? nullptr : &data();
    stage("glasso", [&] {
      CovarianceMatrix<double> cov;
      if (c_.covariance_path) {
        cov = read_covariance_csv(*c_.covariance_path, c_.covariance_n);
      } else {
        const auto vars = c_.resolved_glasso_variables();
        cov = sample_covariance(d->select(vars), vars);
      }
      GlassoOptions<double> opts;
      opts.tol = c_.glasso_tol;
      opts.max_iter = c_.glasso_max_iter;
      const auto grid = default_lambda_grid(cov.S, c_.glasso_grid_size, c_.glasso_ratio);
      const auto sel = select_lambda(cov, grid, c_.criterion, opts);
      const auto& fit = sel.chosen_fit();
      write_lambda_path_csv(sel, file("glasso_lambda_path.csv"));
      write_matrix_csv(fit.theta, cov.codes, file("glasso_precision.csv"));
      write_matrix_csv(fit.partial_corr, cov.codes, file("glasso_partial_corr.csv"));
      write_edge_list_csv(fit, file("glasso_edges.csv"));
      write_graphml(fit, file("glasso_network.graphml"));
      ojson s;
      s["criterion"] = c_.criterion.kind == Criterion::Bic ? "bic" : "ebic";
      s["lambda"] = fit.lambda;
      s["edges"] = fit.edges.size();
      s["iterations"] = fit.iterations;
      s["kkt_residual"] = fit.kkt_residual;
      const auto hi = std::find(cov.codes.begin(), cov.codes.end(), c_.happiness);
      const auto si = std::find(cov.codes.begin(), cov.codes.end(), c_.sdg);
      if (hi != cov.codes.end() && si != cov.codes.end()) {
        const double r = fit.partial_corr(hi - cov.codes.begin(), si - cov.codes.begin());
        s["outcome_partial_corr"] = r;
        s["outcome_edge_present"] = std::abs(fit.theta(hi - cov.codes.begin(), si - cov.codes.begin())) > opts.zero_threshold;
      }
      csv::write_file(file("glasso_summary.json"), s.dump(2) + "\n");
      return std::vector<std::string>{};
    });
  }

  void qqr_stage() {
    const auto& d = data();
    stage("qqr", [&] {
      VectorX<double> y = d.column(c_.happiness), x = d.column(c_.sdg);
      MatrixX<double> Z;
      const auto controls = c_.resolved_controls();
      if (c_.mode == "residuals") {
        GamOptions go;
        go.num_basis = c_.gam_num_basis;
        const GamFit fy = fit_gam(d, c_.happiness, controls, go);
        const GamFit fx = fit_gam(d, c_.sdg, controls, go);
        write_gam_json(fy, file("gam_" + c_.happiness + ".json"));
        write_gam_json(fx, file("gam_" + c_.sdg + ".json"));
        write_residuals_csv(d.row_ids(), fy.residuals, file("gam_residuals_" + c_.happiness + ".csv"), c_.id_column);
        write_residuals_csv(d.row_ids(), fx.residuals, file("gam_residuals_" + c_.sdg + ".csv"), c_.id_column);
        y = fy.residuals;
        x = fx.residuals;
        Z.resize(d.rows(), 0);
      } else {
        Z = d.select(controls);
      }
      for (const auto& ng : c_.grids) {
        QqrSurface s = qqr_surface(y, x, Z, ng.grid, c_.kernel, c_.threads);
        s.mode = c_.mode;
        export_surface(s, file("qqr_" + ng.name + ".csv"), file("qqr_" + ng.name + ".json"));
      }
      return std::vector<std::string>{};
    });
  }

  void run(const std::string& name) {
    if (name == "ingest") ingest();
    else if (name == "diagnose") diagnose_stage();
    else if (name == "cluster") cluster_stage();
    else if (name == "glasso") glasso_stage();
    else if (name == "qqr") qqr_stage();
    else throw ConfigError("unknown stage '" + name + "'");
  }

 private:
  const PipelineConfig& c_;
  RunManifest& m_;
  fs::path out_;
  std::optional<StandardizedDataset> data_;
  std::vector<std::string> written_;
};

bool same_input(const RunManifest& prev, const PipelineConfig& c) {
  try {
    const json j = json::parse(prev.config);
    return j.at("input_path").get<std::string>() == c.input_path.string() &&
           j.at("id_column").get<std::string>() == c.id_column;
  } catch (const json::exception&) {
    return false;
  }
}

}  // namespace

RunManifest run_stages(const PipelineConfig& c, const std::vector<std::string>& stages) {
  validate_config(c);
  for (const auto& s : stages)
    if (!contains(stage_names(), s)) throw ConfigError("unknown stage '" + s + "'");

  RunManifest m;
  m.output_dir = c.output_dir;
  if (fs::is_regular_file(c.output_dir / "manifest.json")) {
    RunManifest prev = read_manifest(c.output_dir);
    if (same_input(prev, c)) {
      m.stages = std::move(prev.stages);
    } else {
      for (const auto& f : prev.inventory()) {
        std::error_code ec;
        fs::remove(c.output_dir / f, ec);
      }
    }
  }
  m.config = config_to_json(c);
  fs::create_directories(c.output_dir);

  Runner runner(c, m);
  runner.discard("report");
  std::vector<std::string> ordered = stages;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return stage_rank(a) < stage_rank(b); });
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());
  for (const auto& s : ordered) runner.run(s);
  write_manifest(m);
  return m;
}

RunManifest run_pipeline(const PipelineConfig& c) {
  validate_config(c);
  if (fs::is_regular_file(c.output_dir / "manifest.json")) {
    for (const auto& f : read_manifest(c.output_dir).inventory()) {
      std::error_code ec;
      fs::remove(c.output_dir / f, ec);
    }
  }
  return run_stages(c, stage_names());
}

// ---------------------------------------------------------------------------

namespace {

json read_json(const fs::path& p) {
  try {
    return json::parse(csv::read_file(p));
  } catch (const json::exception& e) {
    throw IoError("malformed " + p.string() + ": " + e.what());
  }
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string render_report(const RunManifest& m) {
  const fs::path& out = m.output_dir;
  std::string r = std::string(kVersion) + " report\n";
  if (!m.completed("ingest")) throw IoError("report needs a completed ingest stage");

  const json ds = read_json(out / "dataset_summary.json");
  r += "\nDataset\n";
  r += "  rows loaded:          " + std::to_string(ds.at("rows_loaded").get<long>()) + "\n";
  r += "  complete cases (n):   " + std::to_string(ds.at("rows_complete").get<long>()) + "\n";
  r += "  variables (p):        " + std::to_string(ds.at("columns").get<long>()) + "\n";

  if (m.completed("diagnose")) {
    const json s = read_json(out / "diagnostics_summary.json");
    r += "\nDiagnostics (OLS of " + s.at("response").get<std::string>() + ", R^2 " + num(s.at("r_squared").get<double>()) + ")\n";
    r += "  variance inflation factors\n";
    const csv::Table vif = csv::read(out / "vif.csv");
    for (const auto& row : vif.rows) {
      double v = 0;
      csv::parse_double(row.at(1), v);
      r += "    " + pad(row.at(0), 10) + num(v, 2) + (v > 10.0 ? "  (> 10)" : "") + "\n";
    }
    r += "  Cook's distance threshold 4/n = " + num(s.at("cooks_threshold").get<double>()) + "\n";
    const auto infl = s.at("influential").get<std::vector<std::string>>();
    std::string list;
    for (const auto& id : infl) list += (list.empty() ? "" : ", ") + id;
    r += "  influential (" + std::to_string(infl.size()) + "): " + (list.empty() ? "none" : list) + "\n";
  }

  if (m.completed("cluster")) {
    const json s = read_json(out / "cluster_summary.json");
    r += "\nClustering\n";
    r += "  chosen k:             " + std::to_string(s.at("chosen_k").get<int>()) + "\n";
    r += "  k-means silhouette:   " + num(s.at("kmeans_silhouette").get<double>()) + "\n";
    r += "  Ward silhouette:      " + num(s.at("ward_silhouette").get<double>()) + "\n";
    r += "  ARI k-means vs Ward:  " + num(s.at("adjusted_rand_kmeans_ward").get<double>()) + "\n";
  }

  if (m.completed("glasso")) {
    const json s = read_json(out / "glasso_summary.json");
    r += "\nConditional dependence network\n";
    r += "  criterion:            " + s.at("criterion").get<std::string>() + "\n";
    r += "  lambda:               " + num(s.at("lambda").get<double>(), 6) + "\n";
    r += "  edges:                " + std::to_string(s.at("edges").get<long>()) + "\n";
    if (s.contains("outcome_partial_corr")) {
      const bool present = s.at("outcome_edge_present").get<bool>();
      r += "  outcome edge:         " + std::string(present ? "present" : "absent") + ", partial correlation " +
           num(s.at("outcome_partial_corr").get<double>()) + "\n";
    }
  }

  if (m.completed("qqr")) {
    const auto* rec = m.stage("qqr");
    for (const auto& f : rec->outputs) {
      if (f.rfind("qqr_", 0) != 0 || fs::path(f).extension() != ".csv") continue;
      const fs::path csv_path = out / f;
      fs::path manifest_path = csv_path;
      manifest_path.replace_extension(".json");
      const QqrSurface s = read_surface(csv_path, manifest_path);
      const QuadrantSummary q = quadrant_summary(s);
      const std::string name = fs::path(f).stem().string().substr(4);
      r += "\nQuantile-on-quantile surface '" + name + "' (mode " + s.mode + ", bandwidth " + num(s.kernel.bandwidth, 3) +
           ", " + kernel_location_name(s.kernel.locate_on) + ")\n";
      r += "  cells fitted:         " + std::to_string(s.cells.size() - s.skipped.size()) + " of " +
           std::to_string(s.cells.size()) + "\n";
      r += "  mean slope, low tau / low theta:    " + num(q.lower_left) + "\n";
      r += "  mean slope, low tau / high theta:   " + num(q.lower_right) + "\n";
      r += "  mean slope, high tau / low theta:   " + num(q.upper_left) + "\n";
      r += "  mean slope, high tau / high theta:  " + num(q.upper_right) + "\n";
      r += "  mean slope, center:                 " + num(q.center) + "\n";
    }
  }
  return r;
}

std::filesystem::path emit_report(RunManifest& m) {
  const std::string text = render_report(m);
  const fs::path path = m.output_dir / "report.txt";
  csv::write_file(path, text);
  m.stages.erase(std::remove_if(m.stages.begin(), m.stages.end(), [](const StageRecord& s) { return s.name == "report"; }),
                 m.stages.end());
  m.stages.push_back({"report", "completed", 0.0, "", {"report.txt"}});
  write_manifest(m);
  return path;
}

}  // namespace nexus
