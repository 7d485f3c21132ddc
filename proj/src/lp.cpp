#include "nexus/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace nexus {

double weighted_check_objective(const MatrixX<double>& X, const VectorX<double>& y, const VectorX<double>& w,
                                double tau, const VectorX<double>& coef) {
  const VectorX<double> r = y - X * coef;
  double s = 0.0;
  for (Index i = 0; i < r.size(); ++i) s += w(i) * check_loss(r(i), tau);
  return s;
}

namespace {

enum class State : unsigned char { Basic, AtLower, AtUpper };

class Simplex {
 public:
  Simplex(const MatrixX<double>& A, const VectorX<double>& b, const VectorX<double>& lower, const VectorX<double>& upper,
          const std::vector<bool>& start_upper)
      : A_(A), b_(b), m_(A.rows()), n_(A.cols()) {
    const Index total = n_ + m_;
    lo_.resize(total);
    up_.resize(total);
    x_.resize(total);
    state_.assign(static_cast<std::size_t>(total), State::AtLower);
    lo_.head(n_) = lower;
    up_.head(n_) = upper;
    x_.head(n_) = lower;
    for (Index j = 0; j < static_cast<Index>(start_upper.size()); ++j)
      if (start_upper[static_cast<std::size_t>(j)]) {
        x_(j) = upper(j);
        state_[static_cast<std::size_t>(j)] = State::AtUpper;
      }
    const VectorX<double> r = b_ - A_ * x_.head(n_);
    sign_.resize(m_);
    for (Index k = 0; k < m_; ++k) {
      sign_(k) = r(k) >= 0.0 ? 1.0 : -1.0;
      lo_(n_ + k) = 0.0;
      up_(n_ + k) = std::numeric_limits<double>::infinity();
      x_(n_ + k) = std::abs(r(k));
      state_[static_cast<std::size_t>(n_ + k)] = State::Basic;
      basis_.push_back(n_ + k);
    }
    scale_a_ = std::max(1.0, A_.cwiseAbs().maxCoeff());
  }

  void column(Index j, VectorX<double>& out) const {
    if (j < n_) {
      out = A_.col(j);
    } else {
      out.setZero(m_);
      out(j - n_) = sign_(j - n_);
    }
  }

  double dot_column(const VectorX<double>& v, Index j) const {
    return j < n_ ? v.dot(A_.col(j)) : v(j - n_) * sign_(j - n_);
  }

  // Runs the simplex for objective c (length n + m). Returns iterations used.
  int run(const VectorX<double>& c, int max_iter) {
    const double opt_tol = 1e-11 * std::max(1.0, c.cwiseAbs().maxCoeff()) * scale_a_;
    const Index total = n_ + m_;
    MatrixX<double> B(m_, m_);
    VectorX<double> col(m_), cb(m_), alpha(m_), pi(m_);
    int degenerate = 0;
    for (int iter = 0; iter < max_iter; ++iter) {
      for (Index i = 0; i < m_; ++i) {
        column(basis_[static_cast<std::size_t>(i)], col);
        B.col(i) = col;
        cb(i) = c(basis_[static_cast<std::size_t>(i)]);
      }
      const Eigen::PartialPivLU<MatrixX<double>> lu(B);
      refresh_basic(lu);
      pi = B.transpose().partialPivLu().solve(cb);
      duals_ = pi;

      const bool bland = degenerate > 50;
      Index enter = -1;
      double best = 0.0;
      for (Index j = 0; j < total; ++j) {
        const State s = state_[static_cast<std::size_t>(j)];
        if (s == State::Basic || !(up_(j) > lo_(j))) continue;
        const double d = c(j) - dot_column(pi, j);
        const bool ok = (s == State::AtLower && d > opt_tol) || (s == State::AtUpper && d < -opt_tol);
        if (!ok) continue;
        if (bland) {
          enter = j;
          break;
        }
        if (std::abs(d) > best) {
          best = std::abs(d);
          enter = j;
        }
      }
      if (enter < 0) return iter;

      const double dir = state_[static_cast<std::size_t>(enter)] == State::AtLower ? 1.0 : -1.0;
      column(enter, col);
      alpha = lu.solve(col);
      const double piv_tol = 1e-11 * std::max(1.0, alpha.cwiseAbs().maxCoeff());

      double step = up_(enter) - lo_(enter);
      Index leave_row = -1;
      bool leave_to_upper = false;
      for (Index i = 0; i < m_; ++i) {
        const Index v = basis_[static_cast<std::size_t>(i)];
        const double delta = -dir * alpha(i);  // rate of change of x_v
        double t;
        bool to_upper;
        if (delta < -piv_tol) {
          t = (x_(v) - lo_(v)) / -delta;
          to_upper = false;
        } else if (delta > piv_tol && std::isfinite(up_(v))) {
          t = (up_(v) - x_(v)) / delta;
          to_upper = true;
        } else {
          continue;
        }
        t = std::max(t, 0.0);
        const bool tie_wins = leave_row >= 0 && t == step &&
                              (bland ? v < basis_[static_cast<std::size_t>(leave_row)]
                                     : std::abs(alpha(i)) > std::abs(alpha(leave_row)));
        if (t < step || tie_wins) {
          step = t;
          leave_row = i;
          leave_to_upper = to_upper;
        }
      }
      if (!std::isfinite(step)) throw Error("linear program is unbounded");

      degenerate = step <= 1e-14 ? degenerate + 1 : 0;
      if (leave_row < 0) {
        // bound flip
        const bool was_lower = state_[static_cast<std::size_t>(enter)] == State::AtLower;
        state_[static_cast<std::size_t>(enter)] = was_lower ? State::AtUpper : State::AtLower;
        x_(enter) = was_lower ? up_(enter) : lo_(enter);
        continue;
      }
      const Index leaving = basis_[static_cast<std::size_t>(leave_row)];
      x_(enter) += dir * step;
      state_[static_cast<std::size_t>(enter)] = State::Basic;
      basis_[static_cast<std::size_t>(leave_row)] = enter;
      state_[static_cast<std::size_t>(leaving)] = leave_to_upper ? State::AtUpper : State::AtLower;
      x_(leaving) = leave_to_upper ? up_(leaving) : lo_(leaving);
    }
    throw Error("simplex iteration limit reached");
  }

  void refresh_basic(const Eigen::PartialPivLU<MatrixX<double>>& lu) {
    VectorX<double> rhs = b_;
    VectorX<double> col(m_);
    for (Index j = 0; j < n_ + m_; ++j) {
      if (state_[static_cast<std::size_t>(j)] == State::Basic || x_(j) == 0.0) continue;
      column(j, col);
      rhs -= col * x_(j);
    }
    const VectorX<double> xb = lu.solve(rhs);
    for (Index i = 0; i < m_; ++i) x_(basis_[static_cast<std::size_t>(i)]) = xb(i);
  }

  // Artificials are pinned at zero for phase two.
  void close_artificials() {
    for (Index k = 0; k < m_; ++k) {
      up_(n_ + k) = 0.0;
      if (state_[static_cast<std::size_t>(n_ + k)] != State::Basic) {
        state_[static_cast<std::size_t>(n_ + k)] = State::AtLower;
        x_(n_ + k) = 0.0;
      }
    }
  }

  double artificial_sum() const { return x_.tail(m_).sum(); }
  const VectorX<double>& x() const { return x_; }
  const VectorX<double>& duals() const { return duals_; }
  Index m() const { return m_; }
  Index n() const { return n_; }

 private:
  const MatrixX<double>& A_;
  const VectorX<double>& b_;
  Index m_, n_;
  VectorX<double> lo_, up_, x_, sign_, duals_;
  std::vector<State> state_;
  std::vector<Index> basis_;
  double scale_a_ = 1.0;
};

}  // namespace

LpSolution bounded_simplex(const MatrixX<double>& A, const VectorX<double>& b, const VectorX<double>& c,
                           const VectorX<double>& lower, const VectorX<double>& upper,
                           const std::vector<bool>& start_upper) {
  const Index m = A.rows(), n = A.cols();
  if (b.size() != m || c.size() != n || lower.size() != n || upper.size() != n ||
      (!start_upper.empty() && static_cast<Index>(start_upper.size()) != n))
    throw InvalidArgument("bounded_simplex: dimension mismatch");
  if (((upper - lower).array() < 0).any() || !lower.allFinite() || !upper.allFinite())
    throw InvalidArgument("bounded_simplex: bounds must be finite with lower <= upper");

  Simplex sx(A, b, lower, upper, start_upper);
  const int limit = static_cast<int>(50 * (n + m) + 1000);

  VectorX<double> phase1 = VectorX<double>::Zero(n + m);
  phase1.tail(m).setConstant(-1.0);
  int iters = sx.run(phase1, limit);
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  if (sx.artificial_sum() > 1e-8 * scale) throw Error("linear program is infeasible");

  sx.close_artificials();
  VectorX<double> phase2 = VectorX<double>::Zero(n + m);
  phase2.head(n) = c;
  iters += sx.run(phase2, limit);

  LpSolution out;
  out.x = sx.x().head(n);
  out.duals = sx.duals();
  out.objective = c.dot(out.x);
  out.iterations = iters;
  return out;
}

QuantRegFit weighted_quantile_regression(const MatrixX<double>& X, const VectorX<double>& y, const VectorX<double>& w,
                                         double tau) {
  const Index n = X.rows(), p = X.cols();
  if (y.size() != n || w.size() != n) throw InvalidArgument("quantile regression: dimension mismatch");
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("quantile regression: tau must lie in (0, 1)");
  if ((w.array() < 0).any()) throw InvalidArgument("quantile regression: weights must be non-negative");

  // Rank of the design restricted to observations that carry weight.
  const double wmax = w.maxCoeff();
  const MatrixX<double> weighted = w.cwiseSqrt().asDiagonal() * X;
  Eigen::ColPivHouseholderQR<MatrixX<double>> qr(weighted);
  qr.setThreshold(1e-10);
  if (!(wmax > 0.0) || qr.rank() < p) throw CollinearLocalDesign("weighted design is rank deficient");

  // Start every dual variable at the bound implied by the residual sign of a
  // pilot fit: weighted least squares shifted to the weighted tau-quantile.
  VectorX<double> r = y - X * qr.solve(w.cwiseSqrt().asDiagonal() * y);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return r(a) < r(b); });
  double acc = 0.0, shift = r(order.back());
  for (Index i : order) {
    acc += w(i);
    if (acc >= tau * w.sum()) {
      shift = r(i);
      break;
    }
  }
  std::vector<bool> start_upper(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) start_upper[static_cast<std::size_t>(i)] = r(i) > shift;

  const MatrixX<double> At = X.transpose();
  const VectorX<double> rhs = (1.0 - tau) * (At * w);
  const LpSolution lp = bounded_simplex(At, rhs, y, VectorX<double>::Zero(n), w, start_upper);

  QuantRegFit fit;
  fit.coef = lp.duals;
  fit.iterations = lp.iterations;
  fit.lp_objective = lp.objective - (1.0 - tau) * y.dot(w);
  fit.objective = weighted_check_objective(X, y, w, tau, fit.coef);
  return fit;
}

}  // namespace nexus
