#include "nexus/diagnostics.hpp"

#include "nexus/csv.hpp"

namespace nexus {

MatrixX<double> pearson_matrix(const StandardizedDataset& d) { return pearson_matrix(d.z); }

OlsFit ols(const MatrixX<double>& X, const VectorX<double>& y) {
  const Index n = X.rows();
  const Index k = X.cols() + 1;
  if (y.size() != n) throw InvalidArgument("ols: response length does not match design rows");
  if (n <= k) throw InvalidArgument("ols: need more observations than coefficients");

  MatrixX<double> design(n, k);
  design.col(0).setOnes();
  design.rightCols(k - 1) = X;

  Eigen::ColPivHouseholderQR<MatrixX<double>> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) throw RankDeficientDesign("design matrix is rank deficient");

  OlsFit fit;
  fit.coefficients = qr.solve(y);
  fit.response = y;
  fit.fitted = design * fit.coefficients;
  fit.residuals = y - fit.fitted;
  const MatrixX<double> q = qr.householderQ() * MatrixX<double>::Identity(n, k);
  fit.leverage = q.rowwise().squaredNorm();
  const double rss = fit.residuals.squaredNorm();
  fit.sigma2 = rss / static_cast<double>(n - k);
  const double tss = (y.array() - y.mean()).matrix().squaredNorm();
  fit.r_squared = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  return fit;
}

OlsFit ols(const StandardizedDataset& d, const std::string& response,
           const std::vector<std::string>& predictors) {
  OlsFit fit = ols(d.select(predictors), VectorX<double>(d.column(response)));
  fit.response_code = response;
  fit.predictor_codes = predictors;
  return fit;
}

VectorX<double> vif(const MatrixX<double>& X, const std::vector<std::string>& codes) {
  const Index p = X.cols();
  if (p < 2) throw InvalidArgument("vif needs at least two predictors");
  if (static_cast<Index>(codes.size()) != p) throw InvalidArgument("vif: one code per column required");
  VectorX<double> out(p);
  for (Index j = 0; j < p; ++j) {
    MatrixX<double> others(X.rows(), p - 1);
    others << X.leftCols(j), X.rightCols(p - j - 1);
    double r2 = 0.0;
    try {
      r2 = ols(others, X.col(j)).r_squared;
    } catch (const RankDeficientDesign&) {
      throw PerfectCollinearity(codes[static_cast<std::size_t>(j)]);
    }
    if (r2 >= 1.0 - 1e-12) throw PerfectCollinearity(codes[static_cast<std::size_t>(j)]);
    out(j) = 1.0 / (1.0 - r2);
  }
  return out;
}

std::map<std::string, double> vif(const StandardizedDataset& d, const std::vector<std::string>& predictors) {
  const VectorX<double> v = vif(d.select(predictors), predictors);
  std::map<std::string, double> out;
  for (std::size_t j = 0; j < predictors.size(); ++j) out[predictors[j]] = v(static_cast<Index>(j));
  return out;
}

CooksDistance cooks_distance(const OlsFit& fit, const std::vector<std::string>& row_ids) {
  const Index n = fit.residuals.size();
  if (static_cast<Index>(row_ids.size()) != n) throw InvalidArgument("cooks_distance: one row id per observation");
  if (!(fit.sigma2 > 0.0)) throw InvalidArgument("cooks_distance: residual variance must be positive");
  const auto k = static_cast<double>(fit.num_coefficients());

  CooksDistance out;
  out.row_ids = row_ids;
  out.values.resize(n);
  out.threshold = 4.0 / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    const double h = fit.leverage(i);
    if (h >= 1.0 - 1e-12) throw LeverageOne(row_ids[static_cast<std::size_t>(i)]);
    const double r = fit.residuals(i);
    out.values(i) = r * r * h / (k * fit.sigma2 * (1.0 - h) * (1.0 - h));
    if (out.values(i) > out.threshold) out.influential.push_back(row_ids[static_cast<std::size_t>(i)]);
  }
  return out;
}

DiagnosticsReport diagnose(const StandardizedDataset& d, const std::string& response,
                           const std::vector<std::string>& predictors) {
  DiagnosticsReport r;
  for (const auto& v : d.base.columns) r.codes.push_back(v.code);
  r.correlation = pearson_matrix(d);
  r.vif_codes = predictors;
  r.vif = vif(d.select(predictors), predictors);
  r.fit = ols(d, response, predictors);
  r.cooks = cooks_distance(r.fit, d.row_ids());
  return r;
}

void write_correlation_csv(const DiagnosticsReport& r, const std::filesystem::path& path) {
  std::vector<std::string> h{"code"};
  h.insert(h.end(), r.codes.begin(), r.codes.end());
  std::string out = csv::join(h) + "\n";
  for (Index i = 0; i < r.correlation.rows(); ++i) {
    std::vector<std::string> f{r.codes[static_cast<std::size_t>(i)]};
    for (Index j = 0; j < r.correlation.cols(); ++j) f.push_back(csv::format(r.correlation(i, j)));
    out += csv::join(f) + "\n";
  }
  csv::write_file(path, out);
}

void write_vif_csv(const DiagnosticsReport& r, const std::filesystem::path& path) {
  std::string out = "code,value\n";
  for (std::size_t j = 0; j < r.vif_codes.size(); ++j)
    out += csv::join({r.vif_codes[j], csv::format(r.vif(static_cast<Index>(j)))}) + "\n";
  csv::write_file(path, out);
}

void write_cooks_csv(const DiagnosticsReport& r, const std::filesystem::path& path, const std::string& id_column) {
  std::string out = csv::join({id_column, "value", "influential_flag"}) + "\n";
  for (std::size_t i = 0; i < r.cooks.row_ids.size(); ++i) {
    const double v = r.cooks.values(static_cast<Index>(i));
    out += csv::join({r.cooks.row_ids[i], csv::format(v), v > r.cooks.threshold ? "true" : "false"}) + "\n";
  }
  csv::write_file(path, out);
}

}  // namespace nexus
