#pragma once

#include "nexus/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nexus {

/// Cluster labels run 1..k and are numbered by first appearance in row order,
/// so two runs producing the same partition produce the same labels.
using Labels = std::vector<int>;

struct ClusterResult {
  int k = 0;
  Labels labels;
  MatrixX<double> centroids;  // k x p
  double wss = 0.0;
  double silhouette_mean = 0.0;
  std::map<int, double> wss_path;
  std::vector<double> wss_trace;  // per Lloyd iteration of the selected run
  int iterations = 0;
};

struct KMeansOptions {
  int restarts = 10;
  int max_iter = 100;
  std::uint64_t seed = 0;
};

ClusterResult kmeans(const MatrixX<double>& X, int k, const KMeansOptions& opts = {});
ClusterResult kmeans(const StandardizedDataset& d, int k, std::uint64_t seed, int restarts = 10);

/// Lloyd iterations from the given initial centroids.
ClusterResult lloyd(const MatrixX<double>& X, MatrixX<double> centroids, int max_iter = 100);

/// One agglomeration step. Cluster ids follow the usual linkage convention:
/// 0..n-1 are observations, n+s is the cluster formed at step s.
struct Merge {
  int left = 0;
  int right = 0;
  double cost = 0.0;  // increase in total within-cluster sum of squares
  int size = 0;
};

struct WardTree {
  int n = 0;
  std::vector<Merge> merges;

  /// Partition obtained by stopping after n - k merges.
  Labels cut(int k) const;
};

WardTree ward_tree(const MatrixX<double>& X);
ClusterResult ward_hierarchical(const MatrixX<double>& X, int k);
ClusterResult ward_hierarchical(const StandardizedDataset& d, int k);

/// Mean silhouette width with Euclidean distances. Singletons score 0.
double silhouette(const MatrixX<double>& X, const Labels& labels);
VectorX<double> silhouette_values(const MatrixX<double>& X, const Labels& labels);

struct PcaProjection {
  MatrixX<double> scores;    // n x 2
  MatrixX<double> loadings;  // p x 2
  Eigen::Vector2d variance_explained;
  VectorX<double> singular_values;
};

PcaProjection pca2(const MatrixX<double>& X);
inline PcaProjection pca2(const StandardizedDataset& d) { return pca2(d.z); }

struct ElbowScan {
  std::vector<ClusterResult> fits;  // one per k, ascending
  int chosen_k = 0;                 // highest mean silhouette, ties to smaller k

  const ClusterResult& chosen() const;
  std::map<int, double> wss_path() const;
};

/// k-means for each k in [k_min, k_max]. From the second k onward the best
/// previous solution plus its worst-fitted point seeds an extra run, which
/// keeps the wss path non-increasing in k.
ElbowScan elbow_scan(const MatrixX<double>& X, int k_min, int k_max, const KMeansOptions& opts = {});

double adjusted_rand_index(const Labels& a, const Labels& b);

/// Relabels a partition by first appearance (1..k).
Labels canonical_labels(const Labels& labels);

/// Per-cluster feature means (k x p), the table behind a radar profile.
MatrixX<double> cluster_profiles(const MatrixX<double>& X, const Labels& labels, int k);

double within_ss(const MatrixX<double>& X, const Labels& labels, const MatrixX<double>& centroids);

void write_assignments_csv(const std::vector<std::string>& row_ids, const Labels& labels,
                           const std::filesystem::path& path, const std::string& id_column = "iso3");
void write_centroids_csv(const MatrixX<double>& centroids, const std::vector<std::string>& codes,
                         const std::filesystem::path& path);
void write_pca_csv(const std::vector<std::string>& row_ids, const PcaProjection& pca,
                   const std::filesystem::path& path, const std::string& id_column = "iso3");
void write_wss_path_csv(const ElbowScan& scan, const std::filesystem::path& path);

}  // namespace nexus
