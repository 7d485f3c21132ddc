#pragma once

#include "nexus/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace nexus {

template <typename Scalar>
struct CovarianceMatrix {
  MatrixX<Scalar> S;
  Index n = 0;
  std::vector<std::string> codes;
};

/// Maximum-likelihood covariance (divisor n) of the column-centered data.
template <typename Derived>
CovarianceMatrix<typename Derived::Scalar> sample_covariance(const Eigen::MatrixBase<Derived>& X,
                                                             std::vector<std::string> codes = {}) {
  using Scalar = typename Derived::Scalar;
  if (X.rows() < 2) throw InvalidArgument("sample_covariance needs at least two rows");
  const MatrixX<Scalar> c = X.rowwise() - X.colwise().mean();
  CovarianceMatrix<Scalar> out;
  out.S = (c.transpose() * c) / static_cast<Scalar>(X.rows());
  out.S = (out.S + out.S.transpose()).eval() / Scalar(2);
  out.n = X.rows();
  out.codes = std::move(codes);
  return out;
}

CovarianceMatrix<double> sample_covariance(const StandardizedDataset& d);

template <typename Scalar>
struct Edge {
  Index i = 0;
  Index j = 0;
  std::string code_i;
  std::string code_j;
  Scalar partial_corr = 0;
};

template <typename Scalar>
struct PrecisionEstimate {
  MatrixX<Scalar> theta;
  MatrixX<Scalar> W;  // working covariance at termination
  Scalar lambda = 0;
  int iterations = 0;
  Scalar kkt_residual = 0;
  MatrixX<Scalar> partial_corr;
  std::vector<Edge<Scalar>> edges;
  std::vector<std::string> codes;
  /// Penalized log-likelihood of the precision matrix rebuilt after each sweep.
  std::vector<Scalar> objective_trace;
};

template <typename Scalar>
struct GlassoOptions {
  Scalar tol = Scalar(1e-6);
  int max_iter = 1000;
  Scalar zero_threshold = Scalar(1e-8);
  bool trace_objective = false;
};

/// log det(Theta) - tr(S Theta) - lambda * sum_{i != j} |Theta_ij|.
template <typename Scalar>
Scalar glasso_objective(const MatrixX<Scalar>& theta, const MatrixX<Scalar>& S, Scalar lambda) {
  Eigen::LLT<MatrixX<Scalar>> llt(theta);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<Scalar>::infinity();
  const Scalar logdet = Scalar(2) * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Scalar off = theta.cwiseAbs().sum() - theta.diagonal().cwiseAbs().sum();
  return logdet - (S * theta).trace() - lambda * off;
}

/// Largest violation of the stationarity conditions W - S = lambda * Gamma,
/// with W recomputed as the inverse of theta, Gamma_ij = sign(theta_ij) on the
/// support and |Gamma_ij| <= 1 elsewhere, and the diagonal unpenalized.
template <typename Scalar>
Scalar kkt_residual(const MatrixX<Scalar>& theta, const MatrixX<Scalar>& S, Scalar lambda,
                    Scalar zero_threshold = Scalar(1e-8)) {
  const MatrixX<Scalar> W = theta.ldlt().solve(MatrixX<Scalar>::Identity(theta.rows(), theta.cols()));
  Scalar worst = 0;
  for (Index i = 0; i < theta.rows(); ++i)
    for (Index j = 0; j < theta.cols(); ++j) {
      const Scalar g = W(i, j) - S(i, j);
      Scalar v;
      if (i == j) v = std::abs(g);
      else if (std::abs(theta(i, j)) > zero_threshold) v = std::abs(g - lambda * (theta(i, j) > 0 ? 1 : -1));
      else v = std::max(Scalar(0), std::abs(g) - lambda);
      worst = std::max(worst, v);
    }
  return worst;
}

/// -theta_ij / sqrt(theta_ii theta_jj), with a unit diagonal.
template <typename Scalar>
MatrixX<Scalar> partial_correlations(const MatrixX<Scalar>& theta) {
  const VectorX<Scalar> d = theta.diagonal().cwiseSqrt().cwiseInverse();
  MatrixX<Scalar> r = -(d.asDiagonal() * theta * d.asDiagonal());
  r.diagonal().setOnes();
  return r;
}

template <typename Scalar>
std::vector<Edge<Scalar>> graph_edges(const MatrixX<Scalar>& theta, const MatrixX<Scalar>& partial_corr,
                                      const std::vector<std::string>& codes, Scalar zero_threshold = Scalar(1e-8)) {
  std::vector<Edge<Scalar>> edges;
  auto code = [&](Index i) { return i < static_cast<Index>(codes.size()) ? codes[static_cast<std::size_t>(i)] : std::to_string(i); };
  for (Index i = 0; i < theta.rows(); ++i)
    for (Index j = i + 1; j < theta.cols(); ++j)
      if (std::abs(theta(i, j)) > zero_threshold) edges.push_back({i, j, code(i), code(j), partial_corr(i, j)});
  return edges;
}

namespace detail {

// Coordinate descent for min_b 1/2 b'Vb - b's + lambda*|b|_1, warm-started in b.
template <typename Scalar>
void lasso_cd(const MatrixX<Scalar>& V, const VectorX<Scalar>& s, Scalar lambda, VectorX<Scalar>& b, Scalar tol) {
  const Index m = s.size();
  VectorX<Scalar> g = V * b;
  for (int sweep = 0; sweep < 100000; ++sweep) {
    Scalar change = 0;
    for (Index k = 0; k < m; ++k) {
      const Scalar r = s(k) - (g(k) - V(k, k) * b(k));
      const Scalar next = (r > lambda ? r - lambda : (r < -lambda ? r + lambda : Scalar(0))) / V(k, k);
      const Scalar delta = next - b(k);
      if (delta != 0) {
        g += V.col(k) * delta;
        b(k) = next;
        change = std::max(change, std::abs(delta) * V(k, k));
      }
    }
    if (change < tol) return;
  }
}

template <typename Scalar>
MatrixX<Scalar> precision_from(const MatrixX<Scalar>& W, const MatrixX<Scalar>& B) {
  const Index p = W.rows();
  MatrixX<Scalar> theta = MatrixX<Scalar>::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    VectorX<Scalar> w12(p - 1);
    Index r = 0;
    for (Index i = 0; i < p; ++i)
      if (i != j) w12(r++) = W(i, j);
    const Scalar tjj = Scalar(1) / (W(j, j) - w12.dot(B.col(j)));
    theta(j, j) = tjj;
    r = 0;
    for (Index i = 0; i < p; ++i)
      if (i != j) theta(i, j) = -B(r++, j) * tjj;
  }
  return (theta + theta.transpose()) / Scalar(2);
}

}  // namespace detail

/// Block coordinate descent over columns of the working covariance W, one
/// lasso subproblem per column. Only off-diagonal entries are penalized, so
/// W keeps the diagonal of S. Stops when the mean absolute change in W over a
/// sweep drops below tol times the mean absolute off-diagonal of S and the
/// stationarity residual is below 1e-3 tol times the largest variance.
template <typename Scalar>
PrecisionEstimate<Scalar> glasso_fit(const CovarianceMatrix<Scalar>& cov, Scalar lambda,
                                     const GlassoOptions<Scalar>& opts = {}) {
  const MatrixX<Scalar>& S = cov.S;
  const Index p = S.rows();
  if (lambda < 0) throw InvalidArgument("glasso: lambda must be non-negative");
  if (p == 0 || S.cols() != p) throw InvalidArgument("glasso: covariance must be square");
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10) * std::max(Scalar(1), S.cwiseAbs().maxCoeff()))
    throw InvalidArgument("glasso: covariance must be symmetric");
  if ((S.diagonal().array() <= 0).any()) throw SingularInput("glasso: covariance has a non-positive diagonal entry");
  if (lambda == 0) {
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(S, Eigen::EigenvaluesOnly);
    if (es.eigenvalues()(0) <= Scalar(1e-10) * es.eigenvalues()(p - 1))
      throw SingularInput("glasso: lambda = 0 requires a nonsingular covariance");
  }

  PrecisionEstimate<Scalar> est;
  est.lambda = lambda;
  est.codes = cov.codes;
  MatrixX<Scalar> W = S;
  MatrixX<Scalar> B = MatrixX<Scalar>::Zero(std::max<Index>(p - 1, 0), p);

  const Scalar off_mean = p > 1 ? (S.cwiseAbs().sum() - S.diagonal().cwiseAbs().sum()) / Scalar(p * (p - 1)) : Scalar(0);
  const Scalar threshold = opts.tol * off_mean;
  const Scalar inner_tol = std::max(Scalar(1e-14), opts.tol * Scalar(1e-6)) * std::max(off_mean, S.diagonal().maxCoeff());

  const Scalar kkt_target = opts.tol * Scalar(1e-3) * S.diagonal().maxCoeff();
  bool converged = p == 1 || off_mean == 0;
  int iter = 0;
  MatrixX<Scalar> V(p - 1, p - 1);
  VectorX<Scalar> s12(p - 1), b(p - 1);
  while (!converged) {
    if (iter == opts.max_iter)
      throw NotConverged("glasso did not converge within " + std::to_string(opts.max_iter) + " sweeps");
    ++iter;
    Scalar change = 0;
    for (Index j = 0; j < p; ++j) {
      for (Index a = 0, ra = 0; a < p; ++a) {
        if (a == j) continue;
        s12(ra) = S(a, j);
        for (Index c = 0, rc = 0; c < p; ++c) {
          if (c == j) continue;
          V(ra, rc++) = W(a, c);
        }
        ++ra;
      }
      b = B.col(j);
      detail::lasso_cd(V, s12, lambda, b, inner_tol);
      B.col(j) = b;
      const VectorX<Scalar> w12 = V * b;
      for (Index a = 0, ra = 0; a < p; ++a) {
        if (a == j) continue;
        change += Scalar(2) * std::abs(w12(ra) - W(a, j));
        W(a, j) = W(j, a) = w12(ra++);
      }
    }
    if (opts.trace_objective) est.objective_trace.push_back(glasso_objective(detail::precision_from(W, B), S, lambda));
    converged = change / Scalar(p * (p - 1)) < threshold &&
                kkt_residual(detail::precision_from(W, B), S, lambda, opts.zero_threshold) < kkt_target;
  }

  est.iterations = iter;
  est.W = W;
  est.theta = p == 1 ? MatrixX<Scalar>::Constant(1, 1, Scalar(1) / S(0, 0)) : detail::precision_from(W, B);
  if (off_mean == 0) est.theta = S.diagonal().cwiseInverse().asDiagonal();
  est.kkt_residual = kkt_residual(est.theta, S, lambda, opts.zero_threshold);
  est.partial_corr = partial_correlations(est.theta);
  est.edges = graph_edges(est.theta, est.partial_corr, cov.codes, opts.zero_threshold);
  return est;
}

template <typename Scalar>
Scalar max_off_diagonal(const MatrixX<Scalar>& S) {
  Scalar m = 0;
  for (Index i = 0; i < S.rows(); ++i)
    for (Index j = 0; j < S.cols(); ++j)
      if (i != j) m = std::max(m, std::abs(S(i, j)));
  return m;
}

/// `count` log-spaced values from ratio * lambda_max up to lambda_max, the
/// largest off-diagonal magnitude of S.
template <typename Scalar>
std::vector<Scalar> default_lambda_grid(const MatrixX<Scalar>& S, int count = 30, Scalar ratio = Scalar(0.01)) {
  const Scalar hi = max_off_diagonal(S);
  std::vector<Scalar> g(static_cast<std::size_t>(count));
  if (count == 1) {
    g[0] = hi;
    return g;
  }
  for (int i = 0; i < count; ++i)
    g[static_cast<std::size_t>(i)] = hi * std::pow(ratio, Scalar(count - 1 - i) / Scalar(count - 1));
  return g;
}

/// Maximum-likelihood precision with zeros forced outside `support` (a
/// symmetric p x p mask of allowed off-diagonal entries). Regression variant
/// of the block coordinate scheme: each column solves the normal equations
/// restricted to its neighbours.
template <typename Scalar>
MatrixX<Scalar> constrained_mle(const MatrixX<Scalar>& S, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& support,
                                Scalar tol = Scalar(1e-10), int max_iter = 1000) {
  const Index p = S.rows();
  MatrixX<Scalar> W = S;
  MatrixX<Scalar> B = MatrixX<Scalar>::Zero(std::max<Index>(p - 1, 0), p);
  if (p == 1) return MatrixX<Scalar>::Constant(1, 1, Scalar(1) / S(0, 0));
  const Scalar scale = S.diagonal().maxCoeff();
  for (int iter = 0;; ++iter) {
    if (iter == max_iter) throw NotConverged("constrained_mle did not converge within " + std::to_string(max_iter) + " sweeps");
    Scalar change = 0;
    for (Index j = 0; j < p; ++j) {
      std::vector<Index> rest, active;
      for (Index a = 0; a < p; ++a)
        if (a != j) {
          if (support(a, j)) active.push_back(static_cast<Index>(rest.size()));
          rest.push_back(a);
        }
      VectorX<Scalar> b = VectorX<Scalar>::Zero(p - 1);
      if (!active.empty()) {
        const Index m = static_cast<Index>(active.size());
        MatrixX<Scalar> V(m, m);
        VectorX<Scalar> s(m);
        for (Index u = 0; u < m; ++u) {
          s(u) = S(rest[active[u]], j);
          for (Index v = 0; v < m; ++v) V(u, v) = W(rest[active[u]], rest[active[v]]);
        }
        const VectorX<Scalar> sol = V.ldlt().solve(s);
        for (Index u = 0; u < m; ++u) b(active[u]) = sol(u);
      }
      B.col(j) = b;
      for (Index u = 0; u < p - 1; ++u) {
        Scalar w = 0;
        for (Index v = 0; v < p - 1; ++v) w += W(rest[u], rest[v]) * b(v);
        change = std::max(change, std::abs(w - W(rest[u], j)));
        W(rest[u], j) = W(j, rest[u]) = w;
      }
    }
    if (change < tol * scale) break;
  }
  return detail::precision_from(W, B);
}

enum class Criterion { Bic, Ebic };

template <typename Scalar>
struct CriterionSpec {
  Criterion kind = Criterion::Bic;
  Scalar gamma = Scalar(0.5);
  /// Score each graph at its support-constrained MLE rather than at the
  /// shrunken penalized estimate.
  bool refit = true;
};

/// n/2 (log det Theta - tr(S Theta)), constants dropped.
template <typename Scalar>
Scalar gaussian_loglik(const MatrixX<Scalar>& theta, const MatrixX<Scalar>& S, Index n) {
  return Scalar(n) / Scalar(2) * glasso_objective(theta, S, Scalar(0));
}

/// -2 loglik + |E| log n, plus 4 gamma |E| log p for EBIC.
template <typename Scalar>
Scalar information_criterion(const PrecisionEstimate<Scalar>& est, const CovarianceMatrix<Scalar>& cov,
                             const CriterionSpec<Scalar>& crit) {
  const auto edges = static_cast<Scalar>(est.edges.size());
  MatrixX<Scalar> theta = est.theta;
  if (crit.refit) {
    const Index p = cov.S.rows();
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(p, p, false);
    for (const auto& e : est.edges) support(e.i, e.j) = support(e.j, e.i) = true;
    theta = constrained_mle(cov.S, support);
  }
  Scalar score = Scalar(-2) * gaussian_loglik(theta, cov.S, cov.n) + edges * std::log(Scalar(cov.n));
  if (crit.kind == Criterion::Ebic) score += Scalar(4) * crit.gamma * edges * std::log(Scalar(cov.S.rows()));
  return score;
}

template <typename Scalar>
struct PenaltySelection {
  std::vector<Scalar> grid;
  CriterionSpec<Scalar> criterion;
  std::vector<Scalar> scores;
  std::vector<std::size_t> edge_counts;
  std::vector<PrecisionEstimate<Scalar>> fits;
  std::size_t chosen_index = 0;
  Scalar chosen = 0;

  const PrecisionEstimate<Scalar>& chosen_fit() const { return fits[chosen_index]; }
};

/// Fits every grid value independently. The minimum score wins; ties go to
/// the larger lambda.
template <typename Scalar>
PenaltySelection<Scalar> select_lambda(const CovarianceMatrix<Scalar>& cov, std::vector<Scalar> grid,
                                       const CriterionSpec<Scalar>& crit = {},
                                       const GlassoOptions<Scalar>& opts = {}) {
  if (grid.empty()) throw InvalidArgument("select_lambda: empty grid");
  for (Scalar l : grid)
    if (!(l >= 0)) throw InvalidArgument("select_lambda: grid values must be non-negative");
  PenaltySelection<Scalar> sel;
  sel.grid = std::move(grid);
  sel.criterion = crit;
  for (Scalar l : sel.grid) {
    sel.fits.push_back(glasso_fit(cov, l, opts));
    sel.scores.push_back(information_criterion(sel.fits.back(), cov, crit));
    sel.edge_counts.push_back(sel.fits.back().edges.size());
  }
  for (std::size_t a = 1; a < sel.grid.size(); ++a) {
    const std::size_t c = sel.chosen_index;
    const Scalar tol = Scalar(1e-12) * std::max(Scalar(1), std::abs(sel.scores[c]));
    if (sel.scores[a] < sel.scores[c] - tol ||
        (std::abs(sel.scores[a] - sel.scores[c]) <= tol && sel.grid[a] > sel.grid[c]))
      sel.chosen_index = a;
  }
  sel.chosen = sel.grid[sel.chosen_index];
  return sel;
}

// File formats, double precision.
void write_matrix_csv(const MatrixX<double>& M, const std::vector<std::string>& codes, const std::filesystem::path& path);
/// Square matrix CSV with a leading "code" column and a header of codes.
MatrixX<double> read_matrix_csv(const std::filesystem::path& path, std::vector<std::string>& codes);
CovarianceMatrix<double> read_covariance_csv(const std::filesystem::path& path, Index n);

void write_edge_list_csv(const PrecisionEstimate<double>& est, const std::filesystem::path& path);
std::vector<Edge<double>> read_edge_list_csv(const std::filesystem::path& path, const std::vector<std::string>& codes);
void write_graphml(const PrecisionEstimate<double>& est, const std::filesystem::path& path);
std::string graphml_string(const PrecisionEstimate<double>& est);
void write_lambda_path_csv(const PenaltySelection<double>& sel, const std::filesystem::path& path);

}  // namespace nexus
