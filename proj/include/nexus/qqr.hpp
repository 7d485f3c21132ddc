#pragma once

#include "nexus/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nexus {

/// Evenly spaced values start, start + step, ..., stop, rounded to 12 decimals.
std::vector<double> quantile_range(double start, double stop, double step);

struct QuantileGrid {
  std::vector<double> taus;
  std::vector<double> thetas;

  /// 0.10 to 0.90 in steps of 0.10 on both axes.
  static QuantileGrid central();
  /// 0.01 to 0.99 in steps of 0.01 on both axes.
  static QuantileGrid fine();
  /// Throws InvalidArgument unless both axes are strictly increasing inside (0, 1).
  void validate() const;
};

enum class KernelLocation { RankScale, ValueScale };

struct KernelSpec {
  std::string family = "gaussian";
  double bandwidth = 0.05;
  KernelLocation locate_on = KernelLocation::RankScale;
};

double gaussian_kernel(double u);

/// inf{x : F_n(x) >= theta}: the smallest order statistic x_(k) with k/n >= theta.
double empirical_quantile(const VectorX<double>& x, double theta);

/// Empirical CDF at each observation, tied values sharing their average rank.
VectorX<double> ecdf_ranks(const VectorX<double>& x);

/// Rank scale: K((F_n(x_i) - theta) / h). Value scale: K((x_i - Q_X(theta)) / h) / h.
/// Throws DegenerateWeights when every weight is below 1e-12.
VectorX<double> kernel_weights(const VectorX<double>& x, double theta, const KernelSpec& spec);

/// Smallest admissible weight mass: five observations at full kernel weight.
double weight_mass_floor(const KernelSpec& spec);

struct LocalQuantileFit {
  double tau = 0.0;
  double theta = 0.0;
  double x_theta = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  VectorX<double> gamma;
  double effective_weight_mass = 0.0;
  double objective = 0.0;     // weighted check loss at the estimate
  double lp_objective = 0.0;  // LP optimum, the global-minimum certificate
  bool converged = false;
};

/// Minimizes sum_i w_i rho_tau(y_i - alpha - beta (x_i - x_theta) - Z_i' gamma)
/// exactly by linear programming. Z may have zero columns.
LocalQuantileFit local_quantile_fit(const VectorX<double>& y, const VectorX<double>& x, const MatrixX<double>& Z,
                                    double tau, double theta, const KernelSpec& spec);

struct SkippedCell {
  std::size_t tau_index = 0;
  std::size_t theta_index = 0;
  std::string reason;
};

struct QqrSurface {
  QuantileGrid grid;
  KernelSpec kernel;
  std::string mode = "controls";
  std::vector<std::optional<LocalQuantileFit>> cells;  // tau-major
  std::vector<double> weight_mass;                     // per cell, also for skipped cells
  std::vector<SkippedCell> skipped;

  std::size_t index(std::size_t tau_i, std::size_t theta_i) const { return tau_i * grid.thetas.size() + theta_i; }
  const std::optional<LocalQuantileFit>& cell(std::size_t tau_i, std::size_t theta_i) const {
    return cells[index(tau_i, theta_i)];
  }
  /// |taus| x |thetas| matrix of slopes, NaN where skipped.
  MatrixX<double> beta() const;
  MatrixX<double> alpha() const;
};

/// Fits every (tau, theta) cell independently, spreading cells over
/// `threads` workers (0 picks the hardware concurrency). Results do not
/// depend on the worker count.
QqrSurface qqr_surface(const VectorX<double>& y, const VectorX<double>& x, const MatrixX<double>& Z,
                       const QuantileGrid& grid, const KernelSpec& spec, unsigned threads = 0);

/// Cells where the local intercept decreases in tau for fixed theta, beyond tol.
std::vector<SkippedCell> quantile_crossings(const QqrSurface& s, double tol = 1e-9);

struct QuadrantSummary {
  double lower_left = 0.0;   // low tau, low theta
  double lower_right = 0.0;  // low tau, high theta
  double upper_left = 0.0;   // high tau, low theta
  double upper_right = 0.0;  // high tau, high theta
  double center = 0.0;       // tau and theta within 0.1 of the median
};

/// Mean slope over the fitted cells of each grid quadrant and of the center.
QuadrantSummary quadrant_summary(const QqrSurface& s);

std::string kernel_location_name(KernelLocation k);
KernelLocation parse_kernel_location(const std::string& name);

/// Long CSV (tau, theta, beta, alpha, weight_mass, skipped_flag) plus a JSON manifest.
void export_surface(const QqrSurface& s, const std::filesystem::path& csv_path, const std::filesystem::path& manifest_path);
QqrSurface read_surface(const std::filesystem::path& csv_path, const std::filesystem::path& manifest_path);

}  // namespace nexus
