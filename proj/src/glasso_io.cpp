#include "nexus/glasso.hpp"

#include "nexus/csv.hpp"

#include <map>

namespace nexus {

CovarianceMatrix<double> sample_covariance(const StandardizedDataset& d) {
  std::vector<std::string> codes;
  for (const auto& v : d.base.columns) codes.push_back(v.code);
  return sample_covariance(d.z, std::move(codes));
}

void write_matrix_csv(const MatrixX<double>& M, const std::vector<std::string>& codes, const std::filesystem::path& path) {
  std::vector<std::string> h{"code"};
  h.insert(h.end(), codes.begin(), codes.end());
  std::string out = csv::join(h) + "\n";
  for (Index i = 0; i < M.rows(); ++i) {
    std::vector<std::string> f{codes[static_cast<std::size_t>(i)]};
    for (Index j = 0; j < M.cols(); ++j) f.push_back(csv::format(M(i, j)));
    out += csv::join(f) + "\n";
  }
  csv::write_file(path, out);
}

MatrixX<double> read_matrix_csv(const std::filesystem::path& path, std::vector<std::string>& codes) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 2) throw IoError("matrix CSV needs a header with at least one code: " + path.string());
  codes.assign(t.header.begin() + 1, t.header.end());
  const auto p = static_cast<Index>(codes.size());
  if (static_cast<Index>(t.rows.size()) != p) throw IoError("matrix CSV is not square: " + path.string());
  MatrixX<double> M(p, p);
  for (Index i = 0; i < p; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    if (static_cast<Index>(row.size()) != p + 1 || row[0] != codes[static_cast<std::size_t>(i)])
      throw IoError("matrix CSV row " + std::to_string(i + 1) + " does not match the header: " + path.string());
    for (Index j = 0; j < p; ++j)
      if (!csv::parse_double(row[static_cast<std::size_t>(j + 1)], M(i, j)))
        throw IoError("non-numeric matrix entry in " + path.string());
  }
  return M;
}

CovarianceMatrix<double> read_covariance_csv(const std::filesystem::path& path, Index n) {
  if (n < 2) throw InvalidArgument("covariance input needs the sample size n >= 2");
  CovarianceMatrix<double> cov;
  cov.S = read_matrix_csv(path, cov.codes);
  cov.n = n;
  return cov;
}

void write_edge_list_csv(const PrecisionEstimate<double>& est, const std::filesystem::path& path) {
  std::string out = "i,j,partial_corr\n";
  for (const auto& e : est.edges) out += csv::join({e.code_i, e.code_j, csv::format(e.partial_corr)}) + "\n";
  csv::write_file(path, out);
}

std::vector<Edge<double>> read_edge_list_csv(const std::filesystem::path& path, const std::vector<std::string>& codes) {
  const csv::Table t = csv::read(path);
  if (t.header != std::vector<std::string>{"i", "j", "partial_corr"}) throw IoError("unexpected edge list header: " + path.string());
  std::map<std::string, Index> pos;
  for (std::size_t k = 0; k < codes.size(); ++k) pos[codes[k]] = static_cast<Index>(k);
  std::vector<Edge<double>> edges;
  for (const auto& row : t.rows) {
    if (row.size() != 3) throw IoError("malformed edge list row in " + path.string());
    Edge<double> e;
    e.code_i = row[0];
    e.code_j = row[1];
    if (!pos.count(e.code_i) || !pos.count(e.code_j)) throw IoError("edge refers to an unknown code in " + path.string());
    e.i = pos[e.code_i];
    e.j = pos[e.code_j];
    if (!csv::parse_double(row[2], e.partial_corr)) throw IoError("non-numeric edge weight in " + path.string());
    edges.push_back(std::move(e));
  }
  return edges;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string graphml_string(const PrecisionEstimate<double>& est) {
  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n";
  out += "  <key id=\"code\" for=\"node\" attr.name=\"code\" attr.type=\"string\"/>\n";
  out += "  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n";
  out += "  <key id=\"sign\" for=\"edge\" attr.name=\"sign\" attr.type=\"string\"/>\n";
  out += "  <graph id=\"conditional_dependence\" edgedefault=\"undirected\">\n";
  const auto p = est.theta.rows();
  for (Index i = 0; i < p; ++i) {
    const std::string code = i < static_cast<Index>(est.codes.size()) ? est.codes[static_cast<std::size_t>(i)] : std::to_string(i);
    out += "    <node id=\"" + xml_escape(code) + "\"><data key=\"code\">" + xml_escape(code) + "</data></node>\n";
  }
  for (std::size_t k = 0; k < est.edges.size(); ++k) {
    const auto& e = est.edges[k];
    out += "    <edge id=\"e" + std::to_string(k) + "\" source=\"" + xml_escape(e.code_i) + "\" target=\"" +
           xml_escape(e.code_j) + "\"><data key=\"weight\">" + csv::format(e.partial_corr) +
           "</data><data key=\"sign\">" + (e.partial_corr >= 0 ? "positive" : "negative") + "</data></edge>\n";
  }
  out += "  </graph>\n</graphml>\n";
  return out;
}

void write_graphml(const PrecisionEstimate<double>& est, const std::filesystem::path& path) {
  csv::write_file(path, graphml_string(est));
}

void write_lambda_path_csv(const PenaltySelection<double>& sel, const std::filesystem::path& path) {
  std::string out = "lambda,edges,score,chosen\n";
  for (std::size_t a = 0; a < sel.grid.size(); ++a)
    out += csv::join({csv::format(sel.grid[a]), std::to_string(sel.edge_counts[a]), csv::format(sel.scores[a]),
                      a == sel.chosen_index ? "true" : "false"}) +
           "\n";
  csv::write_file(path, out);
}

}  // namespace nexus
