#include "support.hpp"

#include "nexus/glasso.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace nexus;

namespace {

// Covariance of n draws from N(0, Sigma) with Sigma = A A' + p I.
CovarianceMatrix<double> random_covariance(Rng& rng, Index p, Index n) {
  const MatrixX<double> A = testing::random_normal(rng, p, p);
  const MatrixX<double> L = (A * A.transpose() + MatrixX<double>::Identity(p, p) * static_cast<double>(p)).llt().matrixL();
  const MatrixX<double> X = testing::random_normal(rng, n, p) * L.transpose();
  return sample_covariance(X);
}

// Chain graph precision: unit diagonal, 0.4 on the first off-diagonal.
MatrixX<double> chain_precision(Index p) {
  MatrixX<double> t = MatrixX<double>::Identity(p, p);
  for (Index i = 0; i + 1 < p; ++i) t(i, i + 1) = t(i + 1, i) = 0.4;
  return t;
}

std::set<std::pair<Index, Index>> edge_set(const PrecisionEstimate<double>& e) {
  std::set<std::pair<Index, Index>> s;
  for (const auto& x : e.edges) s.insert({x.i, x.j});
  return s;
}

std::vector<std::string> codes(Index p) {
  std::vector<std::string> c;
  for (Index i = 0; i < p; ++i) c.push_back("v" + std::to_string(i));
  return c;
}

}  // namespace

TEST_CASE("sample covariance") {
  SUBCASE("summation oracle on a 15 x 4 instance") {
    Rng rng(1);
    MatrixX<double> X = testing::random_normal(rng, 15, 4);
    X.col(1) += 3.0 * X.col(0) + VectorX<double>::Constant(15, 5.0);
    const auto cov = sample_covariance(X);
    VectorX<double> mean = VectorX<double>::Zero(4);
    for (Index i = 0; i < 15; ++i) mean += X.row(i).transpose();
    mean /= 15;
    MatrixX<double> S = MatrixX<double>::Zero(4, 4);
    for (Index i = 0; i < 15; ++i) {
      const VectorX<double> c = X.row(i).transpose() - mean;
      S += c * c.transpose();
    }
    S /= 15;
    CHECK((cov.S - S).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(cov.n == 15);
    CHECK(cov.S == cov.S.transpose());
  }
  SUBCASE("standardized data gives the correlation matrix scaled by (n-1)/n") {
    const auto d = standardize(complete_cases(parse_csv(testing::country_csv(30, 2), default_schema())));
    const auto cov = sample_covariance(d);
    CHECK(cov.codes.size() == 14);
    CHECK(cov.n == 30);
    MatrixX<double> c = d.z.rowwise() - d.z.colwise().mean();
    const MatrixX<double> corr = (c.transpose() * c) / 29.0;
    CHECK((cov.S - corr * (29.0 / 30.0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((cov.S.diagonal().array() - 29.0 / 30.0).abs().maxCoeff() < 1e-8);
  }
  SUBCASE("single variable") {
    MatrixX<double> x(4, 1);
    x << 1, 2, 3, 6;
    CHECK(sample_covariance(x).S(0, 0) == doctest::Approx(3.5));
  }
  SUBCASE("one row") { CHECK_THROWS_AS(sample_covariance(MatrixX<double>::Ones(1, 3)), InvalidArgument); }
}

TEST_CASE("unpenalized fit is the matrix inverse") {
  Rng rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const Index p = 4 + rep % 5;
    const auto cov = random_covariance(rng, p, 5 * p);
    const auto est = glasso_fit(cov, 0.0);
    const MatrixX<double> inv = cov.S.inverse();
    CHECK((est.theta - inv).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("stationarity holds at convergence") {
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const Index p = 6 + rep % 5;
    const auto cov = random_covariance(rng, p, 60);
    const double lmax = max_off_diagonal(cov.S);
    for (double frac : {0.05, 0.2, 0.6}) {
      const auto est = glasso_fit(cov, frac * lmax);
      CHECK(est.kkt_residual < 1e-6);
      // independent recomputation from the definition
      const MatrixX<double> W = est.theta.inverse();
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) {
          const double g = W(i, j) - cov.S(i, j);
          if (i == j) CHECK(std::abs(g) < 1e-6);
          else if (std::abs(est.theta(i, j)) > 1e-8) CHECK(std::abs(g - est.lambda * (est.theta(i, j) > 0 ? 1 : -1)) < 1e-6);
          else CHECK(std::abs(g) <= est.lambda + 1e-6);
        }
      CHECK((est.theta - est.theta.transpose()).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(Eigen::SelfAdjointEigenSolver<MatrixX<double>>(est.theta).eigenvalues()(0) > 0);
    }
  }
}

TEST_CASE("full shrinkage leaves a diagonal precision") {
  Rng rng(4);
  const auto cov = random_covariance(rng, 7, 40);
  for (double mult : {1.0, 1.5, 10.0}) {
    const auto est = glasso_fit(cov, mult * max_off_diagonal(cov.S));
    CHECK(est.edges.empty());
    for (Index i = 0; i < 7; ++i) CHECK(est.theta(i, i) == doctest::Approx(1.0 / cov.S(i, i)).epsilon(1e-10));
  }
}

TEST_CASE("bivariate partial correlation equals Pearson") {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    MatrixX<double> X = testing::random_normal(rng, 20, 2);
    X.col(1) += rng.uniform(-2, 2) * X.col(0);
    const auto est = glasso_fit(sample_covariance(X), 0.0);
    const VectorX<double> a = X.col(0).array() - X.col(0).mean(), b = X.col(1).array() - X.col(1).mean();
    CHECK(std::abs(est.partial_corr(0, 1) - a.dot(b) / (a.norm() * b.norm())) < 1e-8);
  }
  const MatrixX<double> diag = VectorX<double>::LinSpaced(3, 1, 3).asDiagonal();
  CHECK(partial_correlations(diag) == MatrixX<double>::Identity(3, 3));
}

TEST_CASE("permutation equivariance") {
  Rng rng(6);
  const auto cov = random_covariance(rng, 8, 50);
  std::vector<Index> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  CovarianceMatrix<double> pc = cov;
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j) pc.S(i, j) = cov.S(perm[i], perm[j]);
  const double lambda = 0.15 * max_off_diagonal(cov.S);
  const auto a = glasso_fit(cov, lambda), b = glasso_fit(pc, lambda);
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j) CHECK(std::abs(b.theta(i, j) - a.theta(perm[i], perm[j])) < 1e-8);
}

TEST_CASE("default penalty grid") {
  Rng rng(7);
  const auto cov = random_covariance(rng, 9, 40);
  const auto grid = default_lambda_grid(cov.S);
  REQUIRE(grid.size() == 30);
  CHECK(grid.back() == max_off_diagonal(cov.S));
  CHECK(grid.front() == doctest::Approx(0.01 * grid.back()));
  for (std::size_t k = 1; k < grid.size(); ++k) CHECK(grid[k] / grid[k - 1] == doctest::Approx(std::pow(100.0, 1.0 / 29.0)));
  CHECK(default_lambda_grid(cov.S, 1) == std::vector<double>{grid.back()});
}

TEST_CASE("edge count shrinks along the penalty grid") {
  auto check_path = [](const CovarianceMatrix<double>& cov) {
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double l : default_lambda_grid(cov.S)) {
      const std::size_t e = glasso_fit(cov, l).edges.size();
      CHECK(e <= prev);
      prev = e;
    }
    CHECK(prev == 0);
  };
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const MatrixX<double> L = MatrixX<double>(chain_precision(6).inverse()).llt().matrixL();
    check_path(sample_covariance(testing::random_normal(rng, 200, 6) * L.transpose()));
  }
}

TEST_CASE("the support path is not monotone in general") {
  // Wherever the edge count rises with the penalty, both fits are certified
  // by the stationarity residual at a tight tolerance, so the rise belongs to
  // the exact solution path.
  GlassoOptions<double> tight;
  tight.tol = 1e-10;
  int rises = 0;
  auto scan = [&](const CovarianceMatrix<double>& cov) {
    const auto grid = default_lambda_grid(cov.S);
    for (std::size_t k = 1; k < grid.size(); ++k) {
      const auto lo = glasso_fit(cov, grid[k - 1], tight), hi = glasso_fit(cov, grid[k], tight);
      if (hi.edges.size() > lo.edges.size()) {
        ++rises;
        CHECK(lo.kkt_residual < 1e-10);
        CHECK(hi.kkt_residual < 1e-10);
      }
    }
  };
  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) scan(random_covariance(rng, 9, 40));
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    scan(sample_covariance(standardize(complete_cases(parse_csv(testing::country_csv(78, seed), default_schema())))));
  CHECK(rises > 0);
}

TEST_CASE("support-constrained maximum likelihood") {
  Rng rng(12);
  const auto cov = random_covariance(rng, 6, 50);
  using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
  CHECK((constrained_mle(cov.S, Mask::Constant(6, 6, true)) - cov.S.inverse()).cwiseAbs().maxCoeff() < 1e-8);
  const MatrixX<double> diag = constrained_mle(cov.S, Mask::Constant(6, 6, false));
  CHECK((diag - MatrixX<double>(cov.S.diagonal().cwiseInverse().asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);
  // partial support: zeros off the graph, fitted covariance matches S on it
  Mask m = Mask::Constant(6, 6, false);
  for (auto [i, j] : {std::pair<Index, Index>{0, 1}, {1, 2}, {2, 5}, {3, 4}}) m(i, j) = m(j, i) = true;
  const MatrixX<double> t = constrained_mle(cov.S, m);
  const MatrixX<double> W = t.inverse();
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) {
      if (i == j || m(i, j)) CHECK(std::abs(W(i, j) - cov.S(i, j)) < 1e-8);
      else CHECK(std::abs(t(i, j)) < 1e-12);
    }
}

TEST_CASE("penalized likelihood never decreases across sweeps") {
  Rng rng(8);
  GlassoOptions<double> opts;
  opts.trace_objective = true;
  for (int rep = 0; rep < 10; ++rep) {
    const auto cov = random_covariance(rng, 8, 30);
    const auto est = glasso_fit(cov, 0.1 * max_off_diagonal(cov.S), opts);
    REQUIRE(est.objective_trace.size() == static_cast<std::size_t>(est.iterations));
    for (std::size_t k = 1; k < est.objective_trace.size(); ++k)
      CHECK(est.objective_trace[k] >= est.objective_trace[k - 1] - 1e-10 * std::abs(est.objective_trace[k - 1]));
    CHECK(glasso_objective(est.theta, cov.S, est.lambda) >= est.objective_trace.front() - 1e-10);
  }
}

TEST_CASE("planted chain graph is recovered at the BIC choice") {
  int recovered = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(100 + seed);
    const MatrixX<double> sigma = chain_precision(6).inverse();
    const MatrixX<double> L = sigma.llt().matrixL();
    const auto cov = sample_covariance(testing::random_normal(rng, 500, 6) * L.transpose());
    const auto sel = select_lambda(cov, default_lambda_grid(cov.S));
    std::set<std::pair<Index, Index>> truth;
    for (Index i = 0; i + 1 < 6; ++i) truth.insert({i, i + 1});
    const auto got = edge_set(sel.chosen_fit());
    std::size_t diff = 0;
    for (const auto& e : truth) diff += !got.count(e);
    for (const auto& e : got) diff += !truth.count(e);
    recovered += diff <= 1;
  }
  CHECK(recovered >= 9);
}

TEST_CASE("penalty selection") {
  Rng rng(9);
  const auto cov = random_covariance(rng, 6, 80);
  SUBCASE("chosen value attains the minimum, recomputed") {
    for (bool refit : {false, true})
      for (Criterion kind : {Criterion::Bic, Criterion::Ebic}) {
        const CriterionSpec<double> crit{kind, 0.5, refit};
        const auto sel = select_lambda(cov, default_lambda_grid(cov.S, 12), crit);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < sel.grid.size(); ++k) {
          const auto fit = glasso_fit(cov, sel.grid[k]);
          MatrixX<double> theta = fit.theta;
          if (refit) {
            Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> m = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(6, 6, false);
            for (Index i = 0; i < 6; ++i)
              for (Index j = 0; j < 6; ++j) m(i, j) = i != j && std::abs(fit.theta(i, j)) > 1e-8;
            theta = constrained_mle(cov.S, m);
          }
          const double edges = static_cast<double>(fit.edges.size());
          const double ll = 80.0 / 2.0 * (std::log(theta.determinant()) - (cov.S * theta).trace());
          double score = -2 * ll + edges * std::log(80.0);
          if (kind == Criterion::Ebic) score += 4 * 0.5 * edges * std::log(6.0);
          CHECK(sel.scores[k] == doctest::Approx(score).epsilon(1e-9));
          best = std::min(best, score);
        }
        CHECK(sel.scores[sel.chosen_index] == doctest::Approx(best).epsilon(1e-12));
        CHECK(*std::max_element(sel.scores.begin(), sel.scores.end()) > best + 1.0);
      }
  }
  SUBCASE("ties go to the larger penalty") {
    const double top = max_off_diagonal(cov.S);
    const auto sel = select_lambda(cov, {2 * top, 3 * top, 1.5 * top});
    CHECK(sel.chosen == 3 * top);
  }
  SUBCASE("singleton grid") { CHECK(select_lambda(cov, {0.123}).chosen == 0.123); }
  SUBCASE("bad grids") {
    CHECK_THROWS_AS(select_lambda(cov, {}), InvalidArgument);
    CHECK_THROWS_AS(select_lambda(cov, {0.1, -0.1}), InvalidArgument);
  }
}

TEST_CASE("glasso errors") {
  MatrixX<double> X(5, 3);
  X << 1, 2, 3, 2, 4, 1, 3, 6, 5, 4, 8, 2, 5, 10, 7;  // second column is twice the first
  const auto cov = sample_covariance(X);
  CHECK_THROWS_AS(glasso_fit(cov, 0.0), SingularInput);
  CHECK_NOTHROW(glasso_fit(cov, 0.5));
  CHECK_THROWS_AS(glasso_fit(cov, -1.0), InvalidArgument);
  Rng rng(10);
  const auto big = random_covariance(rng, 8, 20);
  GlassoOptions<double> opts;
  opts.max_iter = 1;
  opts.tol = 1e-14;
  CHECK_THROWS_AS(glasso_fit(big, 0.01 * max_off_diagonal(big.S), opts), NotConverged);
}

TEST_CASE("graph and matrix exports") {
  testing::TempDir dir("glasso");
  SUBCASE("diagonal precision gives an empty graph on every node") {
    CovarianceMatrix<double> cov;
    cov.S = MatrixX<double>::Identity(14, 14);
    cov.n = 50;
    cov.codes = codes(14);
    const auto est = glasso_fit(cov, 0.1);
    const std::string g = graphml_string(est);
    std::size_t nodes = 0;
    for (std::size_t pos = 0; (pos = g.find("<node ", pos)) != std::string::npos; ++pos) ++nodes;
    CHECK(nodes == 14);
    CHECK(g.find("<edge ") == std::string::npos);
  }
  SUBCASE("single negative-precision pair gives one positive edge") {
    CovarianceMatrix<double> cov;
    cov.S = MatrixX<double>::Identity(3, 3);
    cov.S(0, 2) = cov.S(2, 0) = 0.5;
    cov.n = 50;
    cov.codes = {"a", "b", "c"};
    const auto est = glasso_fit(cov, 0.0);
    REQUIRE(est.edges.size() == 1);
    CHECK(est.edges[0].code_i == "a");
    CHECK(est.edges[0].code_j == "c");
    CHECK(est.edges[0].partial_corr == doctest::Approx(0.5));
    const std::string g = graphml_string(est);
    CHECK(g.find("positive") != std::string::npos);
    CHECK(g.find("negative") == std::string::npos);
  }
  SUBCASE("edge list and matrices round-trip") {
    Rng rng(11);
    auto cov = random_covariance(rng, 7, 40);
    cov.codes = codes(7);
    const auto est = glasso_fit(cov, 0.1 * max_off_diagonal(cov.S));
    REQUIRE_FALSE(est.edges.empty());
    write_edge_list_csv(est, dir / "edges.csv");
    const auto back = read_edge_list_csv(dir / "edges.csv", cov.codes);
    REQUIRE(back.size() == est.edges.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
      CHECK(back[k].i == est.edges[k].i);
      CHECK(back[k].j == est.edges[k].j);
      CHECK(back[k].code_i == est.edges[k].code_i);
      CHECK(back[k].partial_corr == est.edges[k].partial_corr);
    }
    write_matrix_csv(est.theta, cov.codes, dir / "theta.csv");
    std::vector<std::string> read_codes;
    CHECK(read_matrix_csv(dir / "theta.csv", read_codes) == est.theta);
    CHECK(read_codes == cov.codes);
    write_matrix_csv(cov.S, cov.codes, dir / "cov.csv");
    const auto rc = read_covariance_csv(dir / "cov.csv", 40);
    CHECK(rc.S == cov.S);
    CHECK(rc.n == 40);
    write_graphml(est, dir / "net.graphml");
    CHECK(csv::read_file(dir / "net.graphml") == graphml_string(est));

    const auto sel = select_lambda(cov, default_lambda_grid(cov.S, 5));
    write_lambda_path_csv(sel, dir / "path.csv");
    const csv::Table t = csv::read(dir / "path.csv");
    CHECK(t.rows.size() == 5);
  }
}
