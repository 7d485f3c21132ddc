#pragma once

#include "nexus/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nexus {

/// Pearson correlation of the columns of X. Symmetric with an exact unit diagonal.
template <typename Derived>
MatrixX<typename Derived::Scalar> pearson_matrix(const Eigen::MatrixBase<Derived>& X) {
  using Scalar = typename Derived::Scalar;
  if (X.rows() < 3) throw InvalidArgument("pearson_matrix needs at least 3 rows");
  const MatrixX<Scalar> centered = X.rowwise() - X.colwise().mean();
  const VectorX<Scalar> norms = centered.colwise().norm().transpose();
  MatrixX<Scalar> r = centered.transpose() * centered;
  r = r.array() / (norms * norms.transpose()).array();
  r = (r + r.transpose()).eval() / Scalar(2);
  for (Index i = 0; i < r.rows(); ++i) {
    for (Index j = 0; j < r.cols(); ++j) r(i, j) = std::clamp(r(i, j), Scalar(-1), Scalar(1));
    r(i, i) = Scalar(1);
  }
  return r;
}

MatrixX<double> pearson_matrix(const StandardizedDataset& d);

struct OlsFit {
  std::string response_code;
  std::vector<std::string> predictor_codes;
  VectorX<double> coefficients;  // intercept first
  VectorX<double> response;
  VectorX<double> fitted;
  VectorX<double> residuals;
  VectorX<double> leverage;  // hat-matrix diagonal
  double sigma2 = 0.0;       // RSS / (n - k)
  double r_squared = 0.0;

  Index num_coefficients() const { return coefficients.size(); }
};

/// Least squares of y on [1, X] through a column-pivoted QR. A design whose
/// numerical rank (relative threshold 1e-10) falls short of full rank throws
/// RankDeficientDesign.
OlsFit ols(const MatrixX<double>& X, const VectorX<double>& y);
OlsFit ols(const StandardizedDataset& d, const std::string& response,
           const std::vector<std::string>& predictors);

/// Variance inflation factors 1/(1 - R^2_j), one auxiliary regression per column.
VectorX<double> vif(const MatrixX<double>& X, const std::vector<std::string>& codes);
std::map<std::string, double> vif(const StandardizedDataset& d, const std::vector<std::string>& predictors);

struct CooksDistance {
  std::vector<std::string> row_ids;
  VectorX<double> values;
  double threshold = 0.0;  // 4/n
  std::vector<std::string> influential;
};

/// D_i = r_i^2 h_i / (k s^2 (1 - h_i)^2), k counting the intercept.
CooksDistance cooks_distance(const OlsFit& fit, const std::vector<std::string>& row_ids);

struct DiagnosticsReport {
  std::vector<std::string> codes;  // correlation order
  MatrixX<double> correlation;
  std::vector<std::string> vif_codes;
  VectorX<double> vif;
  OlsFit fit;
  CooksDistance cooks;
};

DiagnosticsReport diagnose(const StandardizedDataset& d, const std::string& response,
                           const std::vector<std::string>& predictors);

void write_correlation_csv(const DiagnosticsReport& r, const std::filesystem::path& path);
void write_vif_csv(const DiagnosticsReport& r, const std::filesystem::path& path);
void write_cooks_csv(const DiagnosticsReport& r, const std::filesystem::path& path,
                     const std::string& id_column = "iso3");

}  // namespace nexus
