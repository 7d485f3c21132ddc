#pragma once

#include "nexus/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace nexus {

enum class Role { OutcomeHappiness, OutcomeSdg, Control };

struct VariableSpec {
  std::string code;
  std::string long_name;
  std::string source;
  Role role = Role::Control;
};

using Schema = std::vector<VariableSpec>;

/// The fourteen country-level indicators: two outcomes plus twelve controls.
Schema default_schema();

/// Throws InvalidArgument unless codes are unique and each outcome role
/// appears exactly once.
void validate_schema(const Schema& schema);

const VariableSpec& outcome(const Schema& schema, Role role);

using MissingMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Dataset {
  std::vector<std::string> row_ids;
  Schema columns;
  MatrixX<double> values;  // n x p, entries under a set mask bit are NaN
  MissingMask missing;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  /// Position of `code` among the columns; throws MissingColumn.
  Index column_index(const std::string& code) const;
  bool has_missing() const { return missing.any(); }
};

/// Complete-case data with column z-scores. Moments use the n-1 divisor.
struct StandardizedDataset {
  Dataset base;
  VectorX<double> means;
  VectorX<double> sds;
  MatrixX<double> z;

  Index rows() const { return z.rows(); }
  Index cols() const { return z.cols(); }
  Index column_index(const std::string& code) const { return base.column_index(code); }
  const std::vector<std::string>& row_ids() const { return base.row_ids; }
  auto column(const std::string& code) const { return z.col(column_index(code)); }

  /// Columns in the given order, as an n x |codes| matrix.
  MatrixX<double> select(const std::vector<std::string>& codes) const;
  /// Inverse transform, x = z * sd + mean.
  MatrixX<double> unstandardize() const;
};

/// Empty, "NA" and "NaN" (any case) and anything unparsable become missing.
bool is_missing_token(std::string_view field);

Dataset load_csv(const std::filesystem::path& path, const Schema& schema,
                 const std::string& id_column = "iso3");
Dataset parse_csv(std::string_view text, const Schema& schema,
                  const std::string& id_column = "iso3");

Dataset complete_cases(const Dataset& d);

StandardizedDataset standardize(const Dataset& d);

/// Writes the z-score table and its two-row (mean, sd) sidecar.
void write_standardized(const StandardizedDataset& s, const std::filesystem::path& table,
                        const std::filesystem::path& sidecar, const std::string& id_column = "iso3");

/// Rebuilds a standardized dataset from files written by write_standardized.
/// z is reproduced exactly; base values are recovered through the sidecar.
StandardizedDataset read_standardized(const std::filesystem::path& table,
                                      const std::filesystem::path& sidecar, const Schema& schema,
                                      const std::string& id_column = "iso3");

}  // namespace nexus
