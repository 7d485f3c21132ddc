#include "nexus/clustering.hpp"

#include "nexus/csv.hpp"
#include "nexus/random.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace nexus {

namespace {

double sq_dist(const MatrixX<double>& X, Index i, const MatrixX<double>& C, Index c) {
  return (X.row(i) - C.row(c)).squaredNorm();
}

// Nearest centroid per row; ties go to the lower centroid index.
std::vector<int> assign(const MatrixX<double>& X, const MatrixX<double>& C, VectorX<double>* best_d2 = nullptr) {
  std::vector<int> a(static_cast<std::size_t>(X.rows()));
  if (best_d2) best_d2->resize(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Index c = 0; c < C.rows(); ++c) {
      const double d = sq_dist(X, i, C, c);
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    a[static_cast<std::size_t>(i)] = arg;
    if (best_d2) (*best_d2)(i) = best;
  }
  return a;
}

MatrixX<double> kmeanspp_seed(const MatrixX<double>& X, int k, Rng& rng) {
  const Index n = X.rows();
  MatrixX<double> C(k, X.cols());
  C.row(0) = X.row(static_cast<Index>(rng.index(static_cast<std::uint64_t>(n))));
  VectorX<double> d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
      while (d2(pick) == 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<Index>(rng.index(static_cast<std::uint64_t>(n)));
    }
    C.row(c) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - C.row(c)).rowwise().squaredNorm());
  }
  return C;
}

}  // namespace

Labels canonical_labels(const Labels& labels) {
  std::map<int, int> remap;
  Labels out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto it = remap.find(l);
    if (it == remap.end()) it = remap.emplace(l, static_cast<int>(remap.size()) + 1).first;
    out.push_back(it->second);
  }
  return out;
}

double within_ss(const MatrixX<double>& X, const Labels& labels, const MatrixX<double>& centroids) {
  double s = 0.0;
  for (Index i = 0; i < X.rows(); ++i) s += sq_dist(X, i, centroids, labels[static_cast<std::size_t>(i)] - 1);
  return s;
}

MatrixX<double> cluster_profiles(const MatrixX<double>& X, const Labels& labels, int k) {
  MatrixX<double> m = MatrixX<double>::Zero(k, X.cols());
  VectorX<double> count = VectorX<double>::Zero(k);
  for (Index i = 0; i < X.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)] - 1;
    m.row(c) += X.row(i);
    count(c) += 1.0;
  }
  for (int c = 0; c < k; ++c)
    if (count(c) > 0) m.row(c) /= count(c);
  return m;
}

ClusterResult lloyd(const MatrixX<double>& X, MatrixX<double> C, int max_iter) {
  const Index n = X.rows();
  const auto k = static_cast<int>(C.rows());
  std::vector<int> a;
  std::vector<int> prev;
  ClusterResult r;
  r.k = k;

  for (int iter = 0; iter < max_iter; ++iter) {
    VectorX<double> d2;
    a = assign(X, C, &d2);

    // Re-seed empty clusters at the point farthest from its nearest centroid.
    for (int attempt = 0; attempt <= k; ++attempt) {
      std::vector<int> size(static_cast<std::size_t>(k), 0);
      for (int l : a) ++size[static_cast<std::size_t>(l)];
      const auto empty = std::find(size.begin(), size.end(), 0);
      if (empty == size.end()) break;
      if (attempt == k) throw EmptyClusterUnrecoverable("k-means could not repopulate an empty cluster");
      Index far = 0;
      d2.maxCoeff(&far);
      if (!(d2(far) > 0.0)) throw EmptyClusterUnrecoverable("k-means: fewer distinct points than clusters");
      C.row(empty - size.begin()) = X.row(far);
      a = assign(X, C, &d2);
    }

    MatrixX<double> next = MatrixX<double>::Zero(k, X.cols());
    std::vector<double> count(static_cast<std::size_t>(k), 0.0);
    for (Index i = 0; i < n; ++i) {
      next.row(a[static_cast<std::size_t>(i)]) += X.row(i);
      count[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (int c = 0; c < k; ++c) next.row(c) /= count[static_cast<std::size_t>(c)];
    C = next;

    double wss = 0.0;
    for (Index i = 0; i < n; ++i) wss += sq_dist(X, i, C, a[static_cast<std::size_t>(i)]);
    r.wss_trace.push_back(wss);
    r.iterations = iter + 1;
    if (a == prev) break;
    prev = a;
  }

  // Renumber clusters by first appearance and permute centroids to match.
  std::vector<int> order;
  std::vector<int> newid(static_cast<std::size_t>(k), -1);
  for (int l : a)
    if (newid[static_cast<std::size_t>(l)] < 0) {
      newid[static_cast<std::size_t>(l)] = static_cast<int>(order.size());
      order.push_back(l);
    }
  r.centroids.resize(k, X.cols());
  for (std::size_t c = 0; c < order.size(); ++c) r.centroids.row(static_cast<Index>(c)) = C.row(order[c]);
  r.labels.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r.labels[i] = newid[static_cast<std::size_t>(a[i])] + 1;
  r.wss = r.wss_trace.back();
  return r;
}

ClusterResult kmeans(const MatrixX<double>& X, int k, const KMeansOptions& opts) {
  if (k < 2 || k > X.rows()) throw InvalidArgument("kmeans needs 2 <= k <= n");
  if (opts.restarts < 1) throw InvalidArgument("kmeans needs at least one restart");
  Rng rng(opts.seed);
  ClusterResult best;
  bool have = false;
  for (int r = 0; r < opts.restarts; ++r) {
    ClusterResult fit = lloyd(X, kmeanspp_seed(X, k, rng), opts.max_iter);
    if (!have || fit.wss < best.wss) {
      best = std::move(fit);
      have = true;
    }
  }
  best.silhouette_mean = silhouette(X, best.labels);
  best.wss_path[k] = best.wss;
  return best;
}

ClusterResult kmeans(const StandardizedDataset& d, int k, std::uint64_t seed, int restarts) {
  return kmeans(d.z, k, KMeansOptions{restarts, 100, seed});
}

Labels WardTree::cut(int k) const {
  if (k < 1 || k > n) throw InvalidArgument("ward cut needs 1 <= k <= n");
  std::vector<int> parent(static_cast<std::size_t>(2 * n), -1);
  for (int s = 0; s < n - k; ++s) {
    parent[static_cast<std::size_t>(merges[static_cast<std::size_t>(s)].left)] = n + s;
    parent[static_cast<std::size_t>(merges[static_cast<std::size_t>(s)].right)] = n + s;
  }
  Labels raw(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int r = i;
    while (parent[static_cast<std::size_t>(r)] >= 0) r = parent[static_cast<std::size_t>(r)];
    raw[static_cast<std::size_t>(i)] = r;
  }
  return canonical_labels(raw);
}

WardTree ward_tree(const MatrixX<double>& X) {
  const auto n = static_cast<int>(X.rows());
  WardTree tree;
  tree.n = n;
  // cost(a, b) is the merge increase in within-cluster sum of squares,
  // updated by the Lance-Williams recurrence for Ward's criterion.
  MatrixX<double> cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = 0.5 * (X.row(i) - X.row(j)).squaredNorm();
  std::vector<int> size(static_cast<std::size_t>(n), 1);
  std::vector<int> id(static_cast<std::size_t>(n));
  std::iota(id.begin(), id.end(), 0);
  std::vector<bool> active(static_cast<std::size_t>(n), true);

  for (int step = 0; step < n - 1; ++step) {
    int bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!active[static_cast<std::size_t>(i)]) continue;
      for (int j = i + 1; j < n; ++j)
        if (active[static_cast<std::size_t>(j)] && cost(i, j) < best) {
          best = cost(i, j);
          bi = i;
          bj = j;
        }
    }
    const double ni = size[static_cast<std::size_t>(bi)], nj = size[static_cast<std::size_t>(bj)];
    for (int m = 0; m < n; ++m) {
      if (!active[static_cast<std::size_t>(m)] || m == bi || m == bj) continue;
      const double nm = size[static_cast<std::size_t>(m)];
      const double c = ((ni + nm) * cost(bi, m) + (nj + nm) * cost(bj, m) - nm * cost(bi, bj)) / (ni + nj + nm);
      cost(bi, m) = cost(m, bi) = c;
    }
    const int a = id[static_cast<std::size_t>(bi)], b = id[static_cast<std::size_t>(bj)];
    tree.merges.push_back({std::min(a, b), std::max(a, b), best, static_cast<int>(ni + nj)});
    size[static_cast<std::size_t>(bi)] += size[static_cast<std::size_t>(bj)];
    id[static_cast<std::size_t>(bi)] = n + step;
    active[static_cast<std::size_t>(bj)] = false;
  }
  return tree;
}

ClusterResult ward_hierarchical(const MatrixX<double>& X, int k) {
  if (k < 2 || k >= X.rows()) throw InvalidArgument("ward_hierarchical needs 2 <= k < n");
  ClusterResult r;
  r.k = k;
  r.labels = ward_tree(X).cut(k);
  r.centroids = cluster_profiles(X, r.labels, k);
  r.wss = within_ss(X, r.labels, r.centroids);
  r.silhouette_mean = silhouette(X, r.labels);
  r.wss_path[k] = r.wss;
  return r;
}

ClusterResult ward_hierarchical(const StandardizedDataset& d, int k) { return ward_hierarchical(d.z, k); }

VectorX<double> silhouette_values(const MatrixX<double>& X, const Labels& labels) {
  const Index n = X.rows();
  if (static_cast<Index>(labels.size()) != n) throw InvalidArgument("silhouette: one label per row");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw InvalidArgument("silhouette needs at least two clusters");

  VectorX<double> s(n);
  for (Index i = 0; i < n; ++i) {
    const int li = labels[static_cast<std::size_t>(i)];
    if (sizes[li] == 1) {
      s(i) = 0.0;
      continue;
    }
    std::map<int, double> sum;
    for (Index j = 0; j < n; ++j)
      if (j != i) sum[labels[static_cast<std::size_t>(j)]] += (X.row(i) - X.row(j)).norm();
    const double a = sum[li] / (sizes[li] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, total] : sum)
      if (l != li) b = std::min(b, total / sizes[l]);
    const double denom = std::max(a, b);
    s(i) = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return s;
}

double silhouette(const MatrixX<double>& X, const Labels& labels) { return silhouette_values(X, labels).mean(); }

PcaProjection pca2(const MatrixX<double>& X) {
  if (X.cols() < 2 || X.rows() < 3) throw InvalidArgument("pca2 needs p >= 2 and n >= 3");
  const MatrixX<double> centered = X.rowwise() - X.colwise().mean();
  Eigen::JacobiSVD<MatrixX<double>> svd(centered, Eigen::ComputeThinV);
  const VectorX<double>& sv = svd.singularValues();
  if (sv.size() < 2 || sv(1) < 1e-12) throw DegenerateSpectrum("second singular value is numerically zero");

  PcaProjection out;
  out.loadings = svd.matrixV().leftCols(2);
  for (Index c = 0; c < 2; ++c) {
    Index arg = 0;
    out.loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.loadings(arg, c) < 0) out.loadings.col(c) *= -1.0;
  }
  out.scores = centered * out.loadings;
  const double total = sv.squaredNorm();
  out.variance_explained << sv(0) * sv(0) / total, sv(1) * sv(1) / total;
  out.singular_values = sv;
  return out;
}

const ClusterResult& ElbowScan::chosen() const {
  for (const auto& f : fits)
    if (f.k == chosen_k) return f;
  throw InvalidArgument("elbow scan is empty");
}

std::map<int, double> ElbowScan::wss_path() const {
  std::map<int, double> m;
  for (const auto& f : fits) m[f.k] = f.wss;
  return m;
}

ElbowScan elbow_scan(const MatrixX<double>& X, int k_min, int k_max, const KMeansOptions& opts) {
  if (k_min < 2 || k_max < k_min || k_max >= X.rows()) throw InvalidArgument("elbow_scan needs 2 <= k_min <= k_max < n");
  ElbowScan scan;
  for (int k = k_min; k <= k_max; ++k) {
    ClusterResult fit = kmeans(X, k, opts);
    if (!scan.fits.empty()) {
      const ClusterResult& prev = scan.fits.back();
      VectorX<double> d2;
      assign(X, prev.centroids, &d2);
      Index far = 0;
      d2.maxCoeff(&far);
      MatrixX<double> init(k, X.cols());
      init << prev.centroids, X.row(far);
      ClusterResult warm = lloyd(X, init, opts.max_iter);
      if (warm.wss < fit.wss) {
        warm.silhouette_mean = silhouette(X, warm.labels);
        fit = std::move(warm);
      }
    }
    scan.fits.push_back(std::move(fit));
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& f : scan.fits)
    if (f.silhouette_mean > best) {
      best = f.silhouette_mean;
      scan.chosen_k = f.k;
    }
  const auto path = scan.wss_path();
  for (auto& f : scan.fits) f.wss_path = path;
  return scan;
}

double adjusted_rand_index(const Labels& a, const Labels& b) {
  if (a.size() != b.size()) throw InvalidArgument("adjusted_rand_index: partitions differ in length");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, v] : joint) sum_joint += c2(v);
  for (const auto& [_, v] : ra) sum_a += c2(v);
  for (const auto& [_, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

void write_assignments_csv(const std::vector<std::string>& row_ids, const Labels& labels,
                           const std::filesystem::path& path, const std::string& id_column) {
  std::string out = csv::join({id_column, "cluster"}) + "\n";
  for (std::size_t i = 0; i < row_ids.size(); ++i) out += csv::join({row_ids[i], std::to_string(labels[i])}) + "\n";
  csv::write_file(path, out);
}

void write_centroids_csv(const MatrixX<double>& centroids, const std::vector<std::string>& codes,
                         const std::filesystem::path& path) {
  std::vector<std::string> h{"cluster"};
  h.insert(h.end(), codes.begin(), codes.end());
  std::string out = csv::join(h) + "\n";
  for (Index c = 0; c < centroids.rows(); ++c) {
    std::vector<std::string> f{std::to_string(c + 1)};
    for (Index j = 0; j < centroids.cols(); ++j) f.push_back(csv::format(centroids(c, j)));
    out += csv::join(f) + "\n";
  }
  csv::write_file(path, out);
}

void write_pca_csv(const std::vector<std::string>& row_ids, const PcaProjection& pca,
                   const std::filesystem::path& path, const std::string& id_column) {
  std::string out = csv::join({id_column, "pc1", "pc2"}) + "\n";
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    const auto r = static_cast<Index>(i);
    out += csv::join({row_ids[i], csv::format(pca.scores(r, 0)), csv::format(pca.scores(r, 1))}) + "\n";
  }
  csv::write_file(path, out);
}

void write_wss_path_csv(const ElbowScan& scan, const std::filesystem::path& path) {
  std::string out = "k,wss,silhouette\n";
  for (const auto& f : scan.fits)
    out += csv::join({std::to_string(f.k), csv::format(f.wss), csv::format(f.silhouette_mean)}) + "\n";
  csv::write_file(path, out);
}

}  // namespace nexus
