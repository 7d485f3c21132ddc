#include "nexus/gam.hpp"

#include "nexus/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace nexus {

namespace {

// Second-derivative operator D ((K-2) x K) and tridiagonal B ((K-2) x (K-2))
// of the natural cubic spline through the knot values.
void spline_operators(const VectorX<double>& knots, MatrixX<double>& D, MatrixX<double>& B) {
  const Index K = knots.size();
  const VectorX<double> h = knots.tail(K - 1) - knots.head(K - 1);
  D = MatrixX<double>::Zero(K - 2, K);
  B = MatrixX<double>::Zero(K - 2, K - 2);
  for (Index i = 0; i < K - 2; ++i) {
    D(i, i) = 1.0 / h(i);
    D(i, i + 1) = -1.0 / h(i) - 1.0 / h(i + 1);
    D(i, i + 2) = 1.0 / h(i + 1);
    B(i, i) = (h(i) + h(i + 1)) / 3.0;
    if (i + 1 < K - 2) B(i, i + 1) = B(i + 1, i) = h(i + 1) / 6.0;
  }
}

}  // namespace

MatrixX<double> SplineBasis::second_derivative_map() const {
  MatrixX<double> D, B;
  spline_operators(knots, D, B);
  MatrixX<double> F = MatrixX<double>::Zero(num_basis, num_basis);
  F.middleRows(1, num_basis - 2) = B.ldlt().solve(D);
  return F;
}

MatrixX<double> SplineBasis::evaluate(const VectorX<double>& x) const {
  const Index K = num_basis;
  const MatrixX<double> F = second_derivative_map();
  MatrixX<double> out = MatrixX<double>::Zero(x.size(), K);

  // Row of basis weights at x inside [knots(j), knots(j+1)].
  auto interior = [&](double xv, Index j, Eigen::Ref<VectorX<double>> row) {
    const double h = knots(j + 1) - knots(j);
    const double am = (knots(j + 1) - xv) / h, ap = (xv - knots(j)) / h;
    const double dm = knots(j + 1) - xv, dp = xv - knots(j);
    const double cm = (dm * dm * dm / h - h * dm) / 6.0;
    const double cp = (dp * dp * dp / h - h * dp) / 6.0;
    row.setZero();
    row(j) += am;
    row(j + 1) += ap;
    row += cm * F.row(j).transpose() + cp * F.row(j + 1).transpose();
  };

  VectorX<double> row(K);
  for (Index i = 0; i < x.size(); ++i) {
    const double xv = x(i);
    if (xv < knots(0)) {
      const double h = knots(1) - knots(0);
      VectorX<double> slope = VectorX<double>::Zero(K);
      slope(0) -= 1.0 / h;
      slope(1) += 1.0 / h;
      slope += (-h / 3.0) * F.row(0).transpose() + (-h / 6.0) * F.row(1).transpose();
      VectorX<double> at = VectorX<double>::Zero(K);
      at(0) = 1.0;
      out.row(i) = (at + (xv - knots(0)) * slope).transpose();
    } else if (xv > knots(K - 1)) {
      const double h = knots(K - 1) - knots(K - 2);
      VectorX<double> slope = VectorX<double>::Zero(K);
      slope(K - 2) -= 1.0 / h;
      slope(K - 1) += 1.0 / h;
      slope += (h / 6.0) * F.row(K - 2).transpose() + (h / 3.0) * F.row(K - 1).transpose();
      VectorX<double> at = VectorX<double>::Zero(K);
      at(K - 1) = 1.0;
      out.row(i) = (at + (xv - knots(K - 1)) * slope).transpose();
    } else {
      const auto it = std::upper_bound(knots.data(), knots.data() + K, xv);
      Index j = std::clamp<Index>(static_cast<Index>(it - knots.data()) - 1, 0, K - 2);
      interior(xv, j, row);
      out.row(i) = row.transpose();
    }
  }
  return out;
}

SplineBasis build_basis(const VectorX<double>& x, int num_basis, std::string code) {
  if (num_basis < 4) throw InvalidArgument("build_basis needs num_basis >= 4");
  std::vector<double> u(x.data(), x.data() + x.size());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  if (static_cast<int>(u.size()) < num_basis)
    throw TooFewDistinctValues("need at least " + std::to_string(num_basis) + " distinct values for " +
                               (code.empty() ? std::string("covariate") : code));

  SplineBasis b;
  b.code = std::move(code);
  b.num_basis = num_basis;
  b.knots.resize(num_basis);
  const double last = static_cast<double>(u.size() - 1);
  for (int j = 0; j < num_basis; ++j) {
    const double pos = last * j / (num_basis - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, u.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    b.knots(j) = u[lo] + frac * (u[hi] - u[lo]);
  }
  b.knots(0) = u.front();
  b.knots(num_basis - 1) = u.back();

  MatrixX<double> D, B;
  spline_operators(b.knots, D, B);
  b.penalty = D.transpose() * B.ldlt().solve(D);
  b.penalty = (b.penalty + b.penalty.transpose()).eval() / 2.0;
  return b;
}

std::vector<double> GamOptions::default_lambda_grid() {
  std::vector<double> g(25);
  for (int i = 0; i < 25; ++i) g[static_cast<std::size_t>(i)] = std::pow(10.0, -4.0 + 8.0 * i / 24.0);
  return g;
}

MatrixX<double> GamDesign::total_penalty(const std::vector<double>& lambdas) const {
  if (lambdas.size() != penalties.size()) throw InvalidArgument("one smoothing parameter per term required");
  MatrixX<double> S = MatrixX<double>::Zero(X.cols(), X.cols());
  for (std::size_t j = 0; j < penalties.size(); ++j) {
    const Index m = penalties[j].rows();
    S.block(offsets[j], offsets[j], m, m) = lambdas[j] * penalties[j];
  }
  return S;
}

GamDesign gam_design(const MatrixX<double>& inputs, const std::vector<std::string>& codes, int num_basis) {
  if (static_cast<Index>(codes.size()) != inputs.cols()) throw InvalidArgument("gam_design: one code per column");
  const Index n = inputs.rows();
  GamDesign g;
  std::vector<MatrixX<double>> blocks;
  Index width = 1;
  for (Index j = 0; j < inputs.cols(); ++j) {
    SplineBasis basis = build_basis(inputs.col(j), num_basis, codes[static_cast<std::size_t>(j)]);
    const MatrixX<double> Bx = basis.evaluate(inputs.col(j));
    // Null space of the sum-to-zero constraint 1'B beta = 0.
    const VectorX<double> c = Bx.colwise().sum().transpose();
    Eigen::HouseholderQR<MatrixX<double>> qr(c);
    const MatrixX<double> Q = qr.householderQ();
    MatrixX<double> Z = Q.rightCols(num_basis - 1);
    g.offsets.push_back(width);
    width += num_basis - 1;
    blocks.push_back(Bx * Z);
    MatrixX<double> P = Z.transpose() * basis.penalty * Z;
    g.penalties.push_back((P + P.transpose()) / 2.0);
    g.constraints.push_back(std::move(Z));
    g.bases.push_back(std::move(basis));
  }
  g.X.resize(n, width);
  g.X.col(0).setOnes();
  for (std::size_t j = 0; j < blocks.size(); ++j) g.X.middleCols(g.offsets[j], blocks[j].cols()) = blocks[j];
  return g;
}

namespace {

struct Solved {
  VectorX<double> beta;
  VectorX<double> fitted;
  double rss = 0.0;
  double edf = 0.0;
  VectorX<double> edf_diag;  // diagonal of (X'X + S)^-1 X'X
};

// Minimizes ||y - X b||^2 + b' S b through a pivoted QR of [X; E], E'E = S.
Solved solve_penalized(const GamDesign& g, const VectorX<double>& y, const std::vector<double>& lambdas, bool want_diag) {
  const Index n = g.X.rows(), P = g.X.cols();
  std::vector<MatrixX<double>> roots;
  Index extra = 0;
  for (std::size_t j = 0; j < g.penalties.size(); ++j) {
    Eigen::SelfAdjointEigenSolver<MatrixX<double>> es(g.penalties[j]);
    VectorX<double> ev = es.eigenvalues();
    const double floor = 1e-12 * std::max(ev.maxCoeff(), 0.0);
    for (Index k = 0; k < ev.size(); ++k) ev(k) = ev(k) > floor ? std::sqrt(lambdas[j] * ev(k)) : 0.0;
    roots.push_back(ev.asDiagonal() * es.eigenvectors().transpose());
    extra += roots.back().rows();
  }
  MatrixX<double> A = MatrixX<double>::Zero(n + extra, P);
  A.topRows(n) = g.X;
  Index r = n;
  for (std::size_t j = 0; j < roots.size(); ++j) {
    A.block(r, g.offsets[j], roots[j].rows(), roots[j].cols()) = roots[j];
    r += roots[j].rows();
  }
  VectorX<double> rhs = VectorX<double>::Zero(n + extra);
  rhs.head(n) = y;

  Eigen::ColPivHouseholderQR<MatrixX<double>> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < P) throw IllConditionedSystem("penalized system is numerically singular");

  Solved s;
  s.beta = qr.solve(rhs);
  s.fitted = g.X * s.beta;
  s.rss = (y - s.fitted).squaredNorm();

  // A P = Q R, so X P R^-1 is the top block of the thin Q and the influence
  // matrix trace is its squared Frobenius norm.
  const MatrixX<double> thinQ = qr.householderQ() * MatrixX<double>::Identity(n + extra, P);
  s.edf = thinQ.topRows(n).squaredNorm();

  if (want_diag) {
    const auto R = qr.matrixR().topLeftCorner(P, P).template triangularView<Eigen::Upper>();
    // (X'X + S)^-1 X'X = Pi R^-1 (Q_top)' X
    MatrixX<double> M = thinQ.topRows(n).transpose() * g.X;
    R.solveInPlace(M);
    const MatrixX<double> F = qr.colsPermutation() * M;
    s.edf_diag = F.diagonal();
  }
  return s;
}

double gcv_from(double rss, double edf, Index n) {
  const double denom = static_cast<double>(n) - edf;
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(n) * rss / (denom * denom);
}

}  // namespace

double gcv_score(const GamDesign& design, const VectorX<double>& y, const std::vector<double>& lambdas) {
  const Solved s = solve_penalized(design, y, lambdas, false);
  return gcv_from(s.rss, s.edf, y.size());
}

GamFit fit_gam_fixed(const GamDesign& g, const VectorX<double>& y, const std::vector<double>& lambdas) {
  if (y.size() != g.X.rows()) throw InvalidArgument("fit_gam: response length does not match design");
  const Solved s = solve_penalized(g, y, lambdas, true);
  GamFit fit;
  fit.response = y;
  fit.coefficients = s.beta;
  fit.intercept = s.beta(0);
  fit.fitted = s.fitted;
  fit.residuals = y - s.fitted;
  fit.rss = s.rss;
  fit.edf = s.edf;
  fit.gcv = gcv_from(s.rss, s.edf, y.size());
  for (std::size_t j = 0; j < g.bases.size(); ++j) {
    const Index m = g.penalties[j].rows();
    GamTerm t;
    t.basis = g.bases[j];
    t.coefficients = g.constraints[j] * s.beta.segment(g.offsets[j], m);
    t.lambda = lambdas[j];
    t.edf = s.edf_diag.segment(g.offsets[j], m).sum();
    t.fitted = g.X.middleCols(g.offsets[j], m) * s.beta.segment(g.offsets[j], m);
    fit.terms.push_back(std::move(t));
  }
  return fit;
}

GamFit fit_gam(const MatrixX<double>& inputs, const std::vector<std::string>& codes, const VectorX<double>& y,
               const GamOptions& opts) {
  if (opts.lambda_grid.empty()) throw InvalidArgument("fit_gam: empty smoothing grid");
  const GamDesign g = gam_design(inputs, codes, opts.num_basis);
  const Index n = y.size();
  if (2 * n <= g.num_coefficients()) throw InvalidArgument("fit_gam: too few observations for the basis dimension");

  const double scale = (y.array() - y.mean()).matrix().squaredNorm() / static_cast<double>(n);
  const std::vector<double>& grid = opts.lambda_grid;
  std::size_t mid = grid.size() / 2;
  std::vector<std::size_t> pick(codes.size(), mid);
  std::vector<double> lambdas(codes.size(), grid[mid]);

  for (int sweep = 0; sweep < opts.sweeps; ++sweep) {
    for (std::size_t j = 0; j < codes.size(); ++j) {
      std::vector<double> scores(grid.size());
      for (std::size_t a = 0; a < grid.size(); ++a) {
        std::vector<double> trial = lambdas;
        trial[j] = grid[a];
        try {
          scores[a] = gcv_score(g, y, trial);
        } catch (const IllConditionedSystem&) {
          scores[a] = std::numeric_limits<double>::infinity();
        }
      }
      const double best = *std::min_element(scores.begin(), scores.end());
      if (!std::isfinite(best)) throw IllConditionedSystem("no smoothing parameter gives a solvable system");
      const double tie = best + 1e-9 * std::abs(best) + 1e-13 * scale;
      for (std::size_t a = grid.size(); a-- > 0;)
        if (scores[a] <= tie) {
          pick[j] = a;
          break;
        }
      lambdas[j] = grid[pick[j]];
    }
  }

  GamFit fit = fit_gam_fixed(g, y, lambdas);
  for (std::size_t j = 0; j < fit.terms.size(); ++j)
    fit.terms[j].lambda_on_boundary = pick[j] == 0 || pick[j] + 1 == grid.size();
  return fit;
}

GamFit fit_gam(const StandardizedDataset& d, const std::string& response,
               const std::vector<std::string>& smooth_terms, const GamOptions& opts) {
  GamFit fit = fit_gam(d.select(smooth_terms), smooth_terms, VectorX<double>(d.column(response)), opts);
  fit.response_code = response;
  return fit;
}

VectorX<double> partial_out(const StandardizedDataset& d, const std::string& target,
                            const std::vector<std::string>& controls, const GamOptions& opts) {
  return fit_gam(d, target, controls, opts).residuals;
}

void write_gam_json(const GamFit& fit, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["response"] = fit.response_code;
  j["intercept"] = fit.intercept;
  j["edf"] = fit.edf;
  j["gcv"] = fit.gcv;
  j["terms"] = nlohmann::ordered_json::array();
  for (const auto& t : fit.terms) {
    nlohmann::ordered_json jt;
    jt["term"] = t.basis.code;
    jt["knots"] = std::vector<double>(t.basis.knots.data(), t.basis.knots.data() + t.basis.knots.size());
    jt["coefficients"] = std::vector<double>(t.coefficients.data(), t.coefficients.data() + t.coefficients.size());
    jt["lambda"] = t.lambda;
    jt["edf"] = t.edf;
    jt["lambda_on_boundary"] = t.lambda_on_boundary;
    j["terms"].push_back(std::move(jt));
  }
  csv::write_file(path, j.dump(2) + "\n");
}

void write_residuals_csv(const std::vector<std::string>& row_ids, const VectorX<double>& residuals,
                         const std::filesystem::path& path, const std::string& id_column) {
  std::string out = csv::join({id_column, "value"}) + "\n";
  for (std::size_t i = 0; i < row_ids.size(); ++i)
    out += csv::join({row_ids[i], csv::format(residuals(static_cast<Index>(i)))}) + "\n";
  csv::write_file(path, out);
}

}  // namespace nexus
