#pragma once

// Exact solver for the trust-region subproblem
//
//   min  g' x
//   s.t. |x_i - c_i| <= rho_i          (box around the current iterate)
//        x_i >= lower_i                (parameter floors)
//        A x >= 0                      (optional linear restrictions),
//
// a linear program over a nonempty compact polytope. Solved by a
// bounded-variable primal simplex on the standard form
//
//   min g' x   s.t.  A x - s = 0,  s >= 0,  lo <= x <= hi,
//
// with Bland's rule in both phases (deterministic and cycle-free) and a
// dense refactorization each iteration (the basis is r x r with r <= 4,
// so this costs nothing and avoids update drift). Row duals y solve
// B' y = c_B; at optimality the reduced cost of slack s_i equals y_i >= 0,
// and y is the multiplier vector for A x >= 0 in the convention
// grad - A' lambda = 0.
//
// With no A-rows the problem separates per coordinate and is solved in
// closed form. Ties among optimal vertices are broken deterministically:
// coordinates with an exactly zero gradient entry are snapped back to the
// box center (the incumbent) when that preserves feasibility; remaining
// ties fall to Bland's rule.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "common.hpp"
#include "constraints.hpp"

namespace panelcount {

struct SubproblemResult {
  Vec5 theta{};              // the minimizer
  Eigen::VectorXd duals;     // one multiplier per A-row (empty if none)
  int iterations = 0;        // simplex pivots across both phases
};

namespace detail {

constexpr double lp_infinity = std::numeric_limits<double>::infinity();

struct SimplexTableau {
  // Column j: 0..4 are x, 5..5+r-1 are slacks, then artificials.
  Eigen::MatrixXd cols;        // r x ncols constraint columns
  std::vector<double> lo, hi;  // bounds per column
  std::vector<double> cost;    // current phase costs
  std::vector<int> basis;      // r column indices
  std::vector<double> nb_val;  // value of each column when nonbasic
  std::vector<bool> is_basic;

  int rows() const { return static_cast<int>(cols.rows()); }
  int ncols() const { return static_cast<int>(cols.cols()); }

  Eigen::VectorXd basic_values(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu)
      const {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rows());
    for (int j = 0; j < ncols(); ++j)
      if (!is_basic[j] && nb_val[j] != 0.0) rhs -= cols.col(j) * nb_val[j];
    return lu.solve(rhs);
  }
};

/// One phase of bounded-variable simplex with Bland's rule. Returns the
/// objective value at termination and leaves the tableau at an optimal
/// basis for the current costs. On return `duals_out` holds the row duals.
inline double simplex_phase(SimplexTableau& t, int& pivot_count,
                            Eigen::VectorXd& duals_out) {
  const int r = t.rows();
  const int n = t.ncols();
  const int max_pivots = 2000 + 200 * n;
  double cost_scale = 1.0;
  for (int j = 0; j < n; ++j) cost_scale = std::max(cost_scale, std::abs(t.cost[j]));
  const double d_tol = 1e-11 * cost_scale;
  const double ratio_eps = 1e-13;

  for (int sweep = 0;; ++sweep) {
    if (sweep > max_pivots)
      throw NumericalError("solve_subproblem: simplex iteration cap reached");

    Eigen::MatrixXd b_mat(r, r);
    for (int p = 0; p < r; ++p) b_mat.col(p) = t.cols.col(t.basis[p]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(b_mat);
    Eigen::VectorXd beta = t.basic_values(lu);

    Eigen::VectorXd c_b(r);
    for (int p = 0; p < r; ++p) c_b(p) = t.cost[t.basis[p]];
    Eigen::VectorXd y = lu.transpose().solve(c_b);

    // Entering column: Bland's rule, smallest eligible index.
    int enter = -1;
    int enter_dir = 0;  // +1 from lower bound, -1 from upper
    for (int j = 0; j < n && enter < 0; ++j) {
      if (t.is_basic[j]) continue;
      if (t.hi[j] - t.lo[j] <= 0.0) continue;  // fixed column
      const double d = t.cost[j] - y.dot(t.cols.col(j));
      if (t.nb_val[j] == t.lo[j] && d < -d_tol) {
        enter = j;
        enter_dir = +1;
      } else if (t.nb_val[j] == t.hi[j] && d > d_tol) {
        enter = j;
        enter_dir = -1;
      }
    }
    if (enter < 0) {
      duals_out = y;
      double obj = 0.0;
      for (int j = 0; j < n; ++j)
        if (!t.is_basic[j]) obj += t.cost[j] * t.nb_val[j];
      for (int p = 0; p < r; ++p) obj += t.cost[t.basis[p]] * beta(p);
      return obj;
    }

    // Direction: entering moves by enter_dir * step; basics respond by
    // -enter_dir * step * w with w = B^{-1} col(enter).
    Eigen::VectorXd w = lu.solve(t.cols.col(enter));

    // Ratio test; candidate blockers ranked by column index (Bland).
    double best_step = lp_infinity;
    int leave_pos = -1;       // basis position of the blocking basic
    int leave_to_upper = 0;   // bound the leaving basic hits
    bool bound_flip = false;
    const double span = t.hi[enter] - t.lo[enter];
    if (span < best_step) {
      best_step = span;
      bound_flip = true;
    }
    for (int p = 0; p < r; ++p) {
      const double rate = -enter_dir * w(p);
      const int col = t.basis[p];
      double limit = lp_infinity;
      int to_upper = 0;
      if (rate < -ratio_eps) {
        if (t.lo[col] == -lp_infinity) continue;
        limit = (beta(p) - t.lo[col]) / (-rate);
      } else if (rate > ratio_eps) {
        if (t.hi[col] == lp_infinity) continue;
        limit = (t.hi[col] - beta(p)) / rate;
        to_upper = 1;
      } else {
        continue;
      }
      limit = std::max(limit, 0.0);
      const bool better =
          limit < best_step - 1e-12 ||
          (limit <= best_step + 1e-12 && leave_pos >= 0 &&
           col < t.basis[leave_pos]) ||
          (limit <= best_step + 1e-12 && leave_pos < 0 && bound_flip &&
           col < enter);
      if (better) {
        best_step = std::min(best_step, limit);
        leave_pos = p;
        leave_to_upper = to_upper;
        bound_flip = false;
      }
    }
    if (best_step == lp_infinity)
      throw NumericalError("solve_subproblem: unbounded direction");
    ++pivot_count;

    if (bound_flip) {
      t.nb_val[enter] = enter_dir > 0 ? t.hi[enter] : t.lo[enter];
      continue;
    }
    // Pivot: entering becomes basic, blocker leaves to one of its bounds.
    const int leave_col = t.basis[leave_pos];
    t.is_basic[leave_col] = false;
    t.nb_val[leave_col] = leave_to_upper ? t.hi[leave_col] : t.lo[leave_col];
    t.basis[leave_pos] = enter;
    t.is_basic[enter] = true;
    t.nb_val[enter] = 0.0;  // unused while basic
  }
}

}  // namespace detail

/// Solve the trust-region LP. `gradient` is the linear objective,
/// `center` the current iterate c, `radius` the per-coordinate rho > 0,
/// `lower` the parameter floors. `cs` may be null for the unrestricted
/// problem. Throws InfeasibleError when the polytope is empty (including
/// a center below its floors) and NumericalError on solver failure.
inline SubproblemResult solve_subproblem(const Vec5& gradient,
                                         const Vec5& center, const Vec5& radius,
                                         const Vec5& lower,
                                         const ConstraintSet* cs) {
  Vec5 lo{}, hi{};
  for (int i = 0; i < n_params; ++i) {
    if (!(radius[i] > 0.0))
      throw std::invalid_argument("solve_subproblem: radii must be positive");
    if (center[i] < lower[i] - 1e-12 * (1.0 + std::abs(lower[i])))
      throw InfeasibleError(
          "solve_subproblem: iterate lies below its lower bound");
    lo[i] = std::max(center[i] - radius[i], lower[i]);
    hi[i] = center[i] + radius[i];
    if (lo[i] > hi[i]) lo[i] = hi[i];
  }

  SubproblemResult out;
  const int r = cs ? cs->rows() : 0;

  if (r == 0) {
    // Separable: each coordinate independently minimizes g_i x_i.
    for (int i = 0; i < n_params; ++i) {
      if (gradient[i] > 0.0)
        out.theta[i] = lo[i];
      else if (gradient[i] < 0.0)
        out.theta[i] = hi[i];
      else
        out.theta[i] = std::clamp(center[i], lo[i], hi[i]);
    }
    out.duals = Eigen::VectorXd(0);
    return out;
  }

  detail::SimplexTableau t;
  const int nx = n_params;
  int ncols = nx + r;
  t.cols = Eigen::MatrixXd::Zero(r, ncols);
  t.cols.leftCols(nx) = cs->a;
  for (int i = 0; i < r; ++i) t.cols(i, nx + i) = -1.0;
  t.lo.assign(ncols, 0.0);
  t.hi.assign(ncols, detail::lp_infinity);
  for (int i = 0; i < nx; ++i) {
    t.lo[i] = lo[i];
    t.hi[i] = hi[i];
  }
  t.cost.assign(ncols, 0.0);
  t.nb_val.assign(ncols, 0.0);
  t.is_basic.assign(ncols, false);

  // Start x at its objective-preferred corner, slacks basic. Nonbasic
  // columns must sit at a bound, so indifferent coordinates take the
  // bound nearer the center (the tie-break below restores the center).
  for (int i = 0; i < nx; ++i) {
    if (gradient[i] > 0.0)
      t.nb_val[i] = lo[i];
    else if (gradient[i] < 0.0)
      t.nb_val[i] = hi[i];
    else
      t.nb_val[i] = center[i] - lo[i] <= hi[i] - center[i] ? lo[i] : hi[i];
  }
  Eigen::VectorXd x0(nx);
  for (int i = 0; i < nx; ++i) x0(i) = t.nb_val[i];
  Eigen::VectorXd s0 = cs->a * x0;

  t.basis.resize(r);
  std::vector<int> artificial_of_row(r, -1);
  int n_art = 0;
  for (int i = 0; i < r; ++i)
    if (s0(i) < 0.0) ++n_art;

  if (n_art > 0) {
    t.cols.conservativeResize(Eigen::NoChange, ncols + n_art);
    t.cols.rightCols(n_art).setZero();
    int a_idx = ncols;
    for (int i = 0; i < r; ++i) {
      if (s0(i) < 0.0) {
        t.cols(i, a_idx) = 1.0;
        artificial_of_row[i] = a_idx++;
      }
    }
    ncols += n_art;
    t.lo.resize(ncols, 0.0);
    t.hi.resize(ncols, detail::lp_infinity);
    t.cost.assign(ncols, 0.0);
    t.nb_val.resize(ncols, 0.0);
    t.is_basic.resize(ncols, false);
    for (int j = ncols - n_art; j < ncols; ++j) t.cost[j] = 1.0;
  }

  for (int i = 0; i < r; ++i) {
    const int b = s0(i) < 0.0 ? artificial_of_row[i] : nx + i;
    t.basis[i] = b;
    t.is_basic[b] = true;
  }

  Eigen::VectorXd duals = Eigen::VectorXd::Zero(r);
  int pivots = 0;

  if (n_art > 0) {
    const double phase1 = detail::simplex_phase(t, pivots, duals);
    if (phase1 > 1e-9)
      throw InfeasibleError(
          "solve_subproblem: trust region intersects no feasible point");
    // Pin artificials at zero for phase 2 (basic ones stay at value 0 and
    // are forced out by any pivot that would move them).
    for (int j = ncols - n_art; j < ncols; ++j) {
      t.hi[j] = 0.0;
      if (!t.is_basic[j]) t.nb_val[j] = 0.0;
    }
  }

  for (int j = 0; j < ncols; ++j) t.cost[j] = 0.0;
  for (int i = 0; i < nx; ++i) t.cost[i] = gradient[i];
  detail::simplex_phase(t, pivots, duals);
  out.iterations = pivots;

  // Extract x: nonbasic columns sit at their recorded bound, basics from
  // the final factorization.
  {
    Eigen::MatrixXd b_mat(r, r);
    for (int p = 0; p < r; ++p) b_mat.col(p) = t.cols.col(t.basis[p]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(b_mat);
    Eigen::VectorXd beta = t.basic_values(lu);
    for (int i = 0; i < nx; ++i) out.theta[i] = t.nb_val[i];
    for (int p = 0; p < r; ++p)
      if (t.basis[p] < nx) out.theta[t.basis[p]] = beta(p);
  }
  for (int i = 0; i < nx; ++i)
    out.theta[i] = std::clamp(out.theta[i], lo[i], hi[i]);

  // Deterministic tie-break: a coordinate the objective is indifferent to
  // is returned at the incumbent (box center) when feasibility allows.
  for (int i = 0; i < nx; ++i) {
    if (gradient[i] != 0.0) continue;
    const double want = std::clamp(center[i], lo[i], hi[i]);
    if (want == out.theta[i]) continue;
    Vec5 trial = out.theta;
    trial[i] = want;
    Eigen::Map<const Eigen::Matrix<double, n_params, 1>> tv(trial.data());
    Eigen::VectorXd h = cs->a * tv;
    double row_scale = 1.0 + cs->a.cwiseAbs().maxCoeff();
    if (h.minCoeff() >= -1e-12 * row_scale) out.theta = trial;
  }

  out.duals = duals.cwiseMax(0.0);
  return out;
}

}  // namespace panelcount
