#pragma once

#include "nexus/csv.hpp"
#include "nexus/dataset.hpp"
#include "nexus/random.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace testing {

using nexus::Index;
using nexus::MatrixX;
using nexus::VectorX;

inline MatrixX<double> random_normal(nexus::Rng& rng, Index n, Index p) {
  MatrixX<double> X(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

inline VectorX<double> random_uniform(nexus::Rng& rng, Index n, double lo, double hi) {
  VectorX<double> v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("nexus-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string country_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "C%03d", i);
  return buf;
}

/// Country table over the default schema from a two-factor model: a
/// development factor and a governance factor, the five governance scores
/// nearly collinear. Cells listed in `blanks` (row, code) are left empty.
inline std::string country_csv(int n, std::uint64_t seed,
                               const std::vector<std::pair<int, std::string>>& blanks = {}) {
  nexus::Rng rng(seed);
  const auto schema = nexus::default_schema();
  std::string out = "iso3";
  for (const auto& v : schema) out += "," + v.code;
  out += "\n";
  for (int i = 0; i < n; ++i) {
    const double f1 = rng.normal(), f2 = 0.6 * f1 + 0.8 * rng.normal();
    auto e = [&] { return rng.normal(); };
    const double sdg = 65 + 6 * f1 + 3 * f2 + 3 * e();
    const double values[] = {
        5.5 + 0.5 * f1 + 0.3 * f2 + 0.05 * (sdg - 65) + 0.4 * e(),  // Happiness
        sdg,
        9 + f1 + 0.3 * e(),         // GDPpc
        50 + 20 * f1 + 15 * e(),    // DCPS
        70 + 5 * f1 + e(),          // LE
        7 + 3 * e(),                // UnEmp
        60 + 5 * f2 + 5 * e(),      // IEF
        f2 + 0.15 * e(),            // CC
        f2 + 0.15 * e(),            // GE
        0.6 * f2 + 0.8 * e(),       // PS
        f2 + 0.15 * e(),            // RQ
        f2 + 0.15 * e(),            // RL
        0.6 * f2 + 0.8 * e(),       // VA
        60 + 8 * f2 + 1.5 * e(),    // GCI
    };
    out += country_id(i + 1);
    for (std::size_t j = 0; j < schema.size(); ++j) {
      bool blank = false;
      for (const auto& [r, code] : blanks) blank = blank || (r == i && code == schema[j].code);
      out += "," + (blank ? std::string() : nexus::csv::format(values[j]));
    }
    out += "\n";
  }
  return out;
}

}  // namespace testing
