#pragma once

#include "nexus/types.hpp"

#include <vector>

namespace nexus {

/// Check (quantile) loss u * (tau - 1{u < 0}).
inline double check_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

/// sum_i w_i * check_loss(y_i - x_i' coef, tau)
double weighted_check_objective(const MatrixX<double>& X, const VectorX<double>& y, const VectorX<double>& w,
                                double tau, const VectorX<double>& coef);

struct LpSolution {
  VectorX<double> x;
  VectorX<double> duals;  // simplex multipliers of the equality rows
  double objective = 0.0;
  int iterations = 0;
};

/// Maximizes c'x subject to A x = b and lower <= x <= upper (finite bounds)
/// with a two-phase bounded-variable revised simplex. Dantzig pricing, with
/// Bland's rule after a run of degenerate pivots. Variables flagged in
/// `start_upper` start at their upper bound instead of the lower one.
LpSolution bounded_simplex(const MatrixX<double>& A, const VectorX<double>& b, const VectorX<double>& c,
                           const VectorX<double>& lower, const VectorX<double>& upper,
                           const std::vector<bool>& start_upper = {});

struct QuantRegFit {
  VectorX<double> coef;
  double objective = 0.0;       // weighted check loss at coef
  double lp_objective = 0.0;    // optimum of the dual LP; equals objective at optimality
  int iterations = 0;
};

/// Exact weighted quantile regression of y on the columns of X (no implicit
/// intercept). Solved as the bounded dual program
///   max y'a  s.t.  X'a = (1 - tau) X'w,  0 <= a <= w,
/// whose simplex multipliers are the regression coefficients. Throws
/// CollinearLocalDesign when the weighted design is rank deficient.
QuantRegFit weighted_quantile_regression(const MatrixX<double>& X, const VectorX<double>& y,
                                         const VectorX<double>& w, double tau);

}  // namespace nexus
