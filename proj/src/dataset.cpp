#include "nexus/dataset.hpp"

#include "nexus/csv.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

namespace nexus {

Schema default_schema() {
  return {
      {"Happiness", "Cantril ladder life evaluation (0-10)", "World Happiness Report", Role::OutcomeHappiness},
      {"SDG", "SDG Index (0-100)", "sdgindex.org", Role::OutcomeSdg},
      {"GDPpc", "GDP per capita, constant 2015 USD, log", "World Bank WDI", Role::Control},
      {"DCPS", "Domestic credit to private sector (% of GDP)", "World Bank WDI", Role::Control},
      {"LE", "Life expectancy at birth", "World Bank WDI", Role::Control},
      {"UnEmp", "Unemployment rate", "World Bank WDI", Role::Control},
      {"IEF", "Index of Economic Freedom", "heritage.org", Role::Control},
      {"CC", "Control of Corruption", "World Bank WGI", Role::Control},
      {"GE", "Government Effectiveness", "World Bank WGI", Role::Control},
      {"PS", "Political Stability and Absence of Violence/Terrorism", "World Bank WGI", Role::Control},
      {"RQ", "Regulatory Quality", "World Bank WGI", Role::Control},
      {"RL", "Rule of Law", "World Bank WGI", Role::Control},
      {"VA", "Voice and Accountability", "World Bank WGI", Role::Control},
      {"GCI", "Global Competitiveness Index", "World Bank Group", Role::Control},
  };
}

void validate_schema(const Schema& schema) {
  std::set<std::string> seen;
  int happiness = 0, sdg = 0;
  for (const auto& v : schema) {
    if (v.code.empty()) throw InvalidArgument("schema contains an empty variable code");
    if (!seen.insert(v.code).second) throw InvalidArgument("duplicate variable code in schema: " + v.code);
    happiness += v.role == Role::OutcomeHappiness;
    sdg += v.role == Role::OutcomeSdg;
  }
  if (happiness != 1 || sdg != 1)
    throw InvalidArgument("schema needs exactly one happiness outcome and one SDG outcome");
}

const VariableSpec& outcome(const Schema& schema, Role role) {
  for (const auto& v : schema)
    if (v.role == role) return v;
  throw InvalidArgument("schema has no variable with the requested role");
}

Index Dataset::column_index(const std::string& code) const {
  for (std::size_t j = 0; j < columns.size(); ++j)
    if (columns[j].code == code) return static_cast<Index>(j);
  throw MissingColumn(code);
}

MatrixX<double> StandardizedDataset::select(const std::vector<std::string>& codes) const {
  MatrixX<double> out(z.rows(), static_cast<Index>(codes.size()));
  for (std::size_t j = 0; j < codes.size(); ++j) out.col(static_cast<Index>(j)) = column(codes[j]);
  return out;
}

MatrixX<double> StandardizedDataset::unstandardize() const {
  return (z.array().rowwise() * sds.transpose().array()).rowwise() + means.transpose().array();
}

bool is_missing_token(std::string_view field) {
  std::string t;
  for (char c : field)
    if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t.empty() || t == "na" || t == "nan") return true;
  double v;
  return !csv::parse_double(t, v) || !std::isfinite(v);
}

Dataset parse_csv(std::string_view text, const Schema& schema, const std::string& id_column) {
  validate_schema(schema);
  const csv::Table table = csv::parse(text);
  if (table.header.empty() || table.rows.empty()) throw EmptyFile("CSV has no header or no data rows");

  const long id_pos = table.column(id_column);
  if (id_pos < 0) throw MissingColumn(id_column);
  std::vector<long> pos;
  for (const auto& v : schema) {
    const long c = table.column(v.code);
    if (c < 0) throw MissingColumn(v.code);
    pos.push_back(c);
  }

  const Index n = static_cast<Index>(table.rows.size());
  const Index p = static_cast<Index>(schema.size());
  Dataset d;
  d.columns = schema;
  d.values.resize(n, p);
  d.missing.resize(n, p);
  std::set<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    std::string id = static_cast<std::size_t>(id_pos) < row.size() ? row[static_cast<std::size_t>(id_pos)] : "";
    if (id.empty()) throw InvalidArgument("row " + std::to_string(i + 2) + " has an empty country id");
    if (!ids.insert(id).second) throw DuplicateCountry(id);
    d.row_ids.push_back(std::move(id));
    for (Index j = 0; j < p; ++j) {
      const auto c = static_cast<std::size_t>(pos[static_cast<std::size_t>(j)]);
      const std::string_view field = c < row.size() ? std::string_view(row[c]) : std::string_view();
      double v = 0.0;
      const bool miss = is_missing_token(field) || !csv::parse_double(field, v);
      d.missing(i, j) = miss;
      d.values(i, j) = miss ? std::numeric_limits<double>::quiet_NaN() : v;
    }
  }
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const Schema& schema, const std::string& id_column) {
  if (!std::filesystem::exists(path)) throw IoError("input file not found: " + path.string());
  return parse_csv(csv::read_file(path), schema, id_column);
}

Dataset complete_cases(const Dataset& d) {
  std::vector<Index> keep;
  for (Index i = 0; i < d.rows(); ++i)
    if (!d.missing.row(i).any()) keep.push_back(i);
  if (keep.empty()) throw AllRowsDropped("no complete rows remain");

  Dataset out;
  out.columns = d.columns;
  out.values.resize(static_cast<Index>(keep.size()), d.cols());
  out.missing = MissingMask::Constant(static_cast<Index>(keep.size()), d.cols(), false);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.values.row(static_cast<Index>(r)) = d.values.row(keep[r]);
    out.row_ids.push_back(d.row_ids[static_cast<std::size_t>(keep[r])]);
  }
  return out;
}

StandardizedDataset standardize(const Dataset& d) {
  if (d.has_missing()) throw InvalidArgument("standardize requires complete cases");
  if (d.rows() < 2) throw InvalidArgument("standardize requires at least two rows");
  StandardizedDataset s;
  s.base = d;
  s.means = d.values.colwise().mean().transpose();
  const MatrixX<double> centered = d.values.rowwise() - s.means.transpose();
  s.sds = (centered.colwise().squaredNorm() / static_cast<double>(d.rows() - 1)).cwiseSqrt().transpose();
  for (Index j = 0; j < d.cols(); ++j) {
    const double scale = std::max(1.0, s.means.cwiseAbs()(j));
    if (!(s.sds(j) > 1e-12 * scale)) throw ZeroVarianceColumn(d.columns[static_cast<std::size_t>(j)].code);
  }
  s.z = centered.array().rowwise() / s.sds.transpose().array();
  return s;
}

namespace {

std::string header_line(const std::string& first, const Schema& cols) {
  std::vector<std::string> h{first};
  for (const auto& v : cols) h.push_back(v.code);
  return csv::join(h) + "\n";
}

}  // namespace

void write_standardized(const StandardizedDataset& s, const std::filesystem::path& table,
                        const std::filesystem::path& sidecar, const std::string& id_column) {
  std::string out = header_line(id_column, s.base.columns);
  for (Index i = 0; i < s.rows(); ++i) {
    std::vector<std::string> f{s.row_ids()[static_cast<std::size_t>(i)]};
    for (Index j = 0; j < s.cols(); ++j) f.push_back(csv::format(s.z(i, j)));
    out += csv::join(f) + "\n";
  }
  csv::write_file(table, out);

  std::string side = header_line(id_column, s.base.columns);
  std::vector<std::string> m{"mean"}, sd{"sd"};
  for (Index j = 0; j < s.cols(); ++j) {
    m.push_back(csv::format(s.means(j)));
    sd.push_back(csv::format(s.sds(j)));
  }
  side += csv::join(m) + "\n" + csv::join(sd) + "\n";
  csv::write_file(sidecar, side);
}

StandardizedDataset read_standardized(const std::filesystem::path& table,
                                      const std::filesystem::path& sidecar, const Schema& schema,
                                      const std::string& id_column) {
  const Dataset zd = load_csv(table, schema, id_column);
  if (zd.has_missing()) throw IoError("standardized table contains missing cells: " + table.string());
  const Dataset moments = load_csv(sidecar, schema, id_column);
  if (moments.rows() != 2 || moments.has_missing()) throw IoError("malformed moments sidecar: " + sidecar.string());

  StandardizedDataset s;
  s.z = zd.values;
  s.means = moments.values.row(0).transpose();
  s.sds = moments.values.row(1).transpose();
  s.base = zd;
  s.base.values = s.unstandardize();
  return s;
}

}  // namespace nexus
