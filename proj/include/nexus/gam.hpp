#pragma once

#include "nexus/dataset.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace nexus {

/// Natural cubic regression spline parametrized by its values at the knots.
/// Knots sit at evenly spaced quantiles of the distinct covariate values,
/// the first and last at the observed extremes. Beyond the end knots the
/// spline continues linearly.
struct SplineBasis {
  std::string code;
  VectorX<double> knots;
  int num_basis = 0;
  MatrixX<double> penalty;  // integrated squared second derivative, K x K

  /// Basis matrix, one row per point.
  MatrixX<double> evaluate(const VectorX<double>& x) const;
  /// Maps knot values to the second derivatives at the knots (K x K).
  MatrixX<double> second_derivative_map() const;
};

SplineBasis build_basis(const VectorX<double>& x, int num_basis, std::string code = {});

/// Penalized least-squares problem behind an additive model: an intercept
/// column followed by one sum-to-zero constrained block per smooth term.
struct GamDesign {
  MatrixX<double> X;
  std::vector<SplineBasis> bases;
  std::vector<MatrixX<double>> constraints;  // K x (K-1) null-space maps
  std::vector<MatrixX<double>> penalties;    // (K-1) x (K-1), per term, unscaled
  std::vector<Index> offsets;                // first column of each term in X

  Index num_coefficients() const { return X.cols(); }
  /// Block-diagonal penalty for the given smoothing parameters.
  MatrixX<double> total_penalty(const std::vector<double>& lambdas) const;
};

GamDesign gam_design(const MatrixX<double>& smooth_inputs, const std::vector<std::string>& codes, int num_basis);

struct GamTerm {
  SplineBasis basis;
  VectorX<double> coefficients;  // values at the knots (centered smooth)
  double lambda = 0.0;
  double edf = 0.0;
  VectorX<double> fitted;  // f_j at the sample points
  bool lambda_on_boundary = false;
};

struct GamFit {
  std::string response_code;
  double intercept = 0.0;
  std::vector<GamTerm> terms;
  VectorX<double> response;
  VectorX<double> fitted;
  VectorX<double> residuals;
  VectorX<double> coefficients;  // in design-column order
  double edf = 0.0;              // trace of the influence matrix
  double gcv = 0.0;
  double rss = 0.0;
};

struct GamOptions {
  int num_basis = 10;
  std::vector<double> lambda_grid = default_lambda_grid();
  int sweeps = 3;

  /// 25 log-spaced values from 1e-4 to 1e4.
  static std::vector<double> default_lambda_grid();
};

/// Fit with the smoothing parameters held fixed.
GamFit fit_gam_fixed(const GamDesign& design, const VectorX<double>& y, const std::vector<double>& lambdas);

/// GCV criterion n * RSS / (n - edf)^2 at the given smoothing parameters.
double gcv_score(const GamDesign& design, const VectorX<double>& y, const std::vector<double>& lambdas);

/// Smoothing parameters chosen per term by GCV over the lambda grid,
/// cycling over terms for the configured number of sweeps. Grid values whose
/// score is indistinguishable from the minimum resolve to the smoother fit.
GamFit fit_gam(const MatrixX<double>& smooth_inputs, const std::vector<std::string>& codes,
               const VectorX<double>& y, const GamOptions& opts = {});
GamFit fit_gam(const StandardizedDataset& d, const std::string& response,
               const std::vector<std::string>& smooth_terms, const GamOptions& opts = {});

/// Residuals of the additive fit of `target` on smooths of `controls`.
VectorX<double> partial_out(const StandardizedDataset& d, const std::string& target,
                            const std::vector<std::string>& controls, const GamOptions& opts = {});

void write_gam_json(const GamFit& fit, const std::filesystem::path& path);
void write_residuals_csv(const std::vector<std::string>& row_ids, const VectorX<double>& residuals,
                         const std::filesystem::path& path, const std::string& id_column = "iso3");

}  // namespace nexus
