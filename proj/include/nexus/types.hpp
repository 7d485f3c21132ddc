#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace nexus {

/// Dense column vector of dynamic size, templated on scalar type.
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense matrix of dynamic size, templated on scalar type.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

// Library-wide error hierarchy. Each failure named by an operation contract
// gets its own type so callers can dispatch on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Error tagged with the variable code, row id or cell it refers to.
class TaggedError : public Error {
 public:
  TaggedError(const std::string& what, std::string tag)
      : Error(what + ": " + tag), tag_(std::move(tag)) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

// dataset
class EmptyFile : public Error { public: using Error::Error; };
class MissingColumn : public TaggedError { public: explicit MissingColumn(std::string c) : TaggedError("missing column", std::move(c)) {} };
class DuplicateCountry : public TaggedError { public: explicit DuplicateCountry(std::string c) : TaggedError("duplicate country id", std::move(c)) {} };
class AllRowsDropped : public Error { public: using Error::Error; };
class ZeroVarianceColumn : public TaggedError { public: explicit ZeroVarianceColumn(std::string c) : TaggedError("zero variance column", std::move(c)) {} };

// diagnostics
class RankDeficientDesign : public Error { public: using Error::Error; };
class PerfectCollinearity : public TaggedError { public: explicit PerfectCollinearity(std::string c) : TaggedError("perfect collinearity", std::move(c)) {} };
class LeverageOne : public TaggedError { public: explicit LeverageOne(std::string c) : TaggedError("leverage equals one", std::move(c)) {} };

// clustering
class EmptyClusterUnrecoverable : public Error { public: using Error::Error; };
class DegenerateSpectrum : public Error { public: using Error::Error; };

// gam
class TooFewDistinctValues : public Error { public: using Error::Error; };
class IllConditionedSystem : public Error { public: using Error::Error; };

// glasso
class NotConverged : public Error { public: using Error::Error; };
class SingularInput : public Error { public: using Error::Error; };

// qqr
class DegenerateWeights : public Error { public: using Error::Error; };
class InsufficientLocalData : public Error { public: using Error::Error; };
class CollinearLocalDesign : public Error { public: using Error::Error; };

// pipeline
class ConfigError : public Error { public: using Error::Error; };
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace nexus
