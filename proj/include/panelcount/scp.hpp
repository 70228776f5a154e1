#pragma once

// Sequential convex programming for the (optionally restricted) minimum
// divergence fit. Each outer iteration linearizes the objective at the
// current iterate and solves the resulting LP exactly over the feasible
// trust region
//
//   {|theta - theta_k|_inf <= rho (per coordinate)}
//     intersect {theta >= lower_bounds} intersect {A theta >= 0},
//
// always accepting the subproblem solution. Multipliers come from the
// final subproblem's row duals (with a least-squares reconstruction from
// the stationarity condition as fallback). Everything is deterministic:
// identical inputs give bit-identical results.
//
// With fixed trust radii and unconditional acceptance the iterates walk
// a rho-lattice toward the minimizer and then hop around it, so with the
// default radii the step-size test rarely fires inside max_outer; the
// returned fit is the last iterate and `converged` reports the test
// honestly. Non-convergence is not an error. For tightly certified fits
// use smaller radii and a larger iteration budget.

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "common.hpp"
#include "constraints.hpp"
#include "divergence.hpp"
#include "lp.hpp"
#include "types.hpp"

namespace panelcount {

enum class Estimator { mle, mdpd };

/// Which objective to fit: the exact likelihood or the density power
/// divergence with the given configuration.
struct EstimatorSpec {
  Estimator kind = Estimator::mdpd;
  DpdConfig dpd{};
};

/// Reference trust radii, tuned for parameters on the scale of the
/// default starting point.
inline constexpr Vec5 reference_trust_radii{0.11464, 0.05746, 0.07415,
                                            0.06524, 0.07670};

inline constexpr Vec5 default_theta_init{4.6, 0.8, 0.4, 0.5, 0.1};

/// Default radii: the reference radii rescaled when the starting point
/// lives on a larger scale than the default one.
inline Vec5 default_trust_radii(const Vec5& theta_init) {
  const double scale = std::max(1.0, linf_norm(theta_init) / 5.0);
  Vec5 out{};
  for (int i = 0; i < n_params; ++i) out[i] = reference_trust_radii[i] * scale;
  return out;
}

struct ScpConfig {
  Vec5 theta_init = default_theta_init;
  Vec5 rho = default_trust_radii(default_theta_init);
  Vec5 lower_bounds{1e-5, 1e-5, 1e-5, 1e-5, 1e-5};
  int max_outer = 10;
  double step_tol = 1e-8;
  bool restricted = false;

  void validate() const {
    for (int i = 0; i < n_params; ++i) {
      if (!(rho[i] > 0.0))
        throw std::invalid_argument("ScpConfig: trust radii must be positive");
      if (!(lower_bounds[i] > 0.0))
        throw std::invalid_argument(
            "ScpConfig: lower bounds must be positive (parameters are "
            "positive rates and exponents)");
      if (!(theta_init[i] >= lower_bounds[i]))
        throw std::invalid_argument(
            "ScpConfig: starting point must respect the lower bounds");
    }
    if (max_outer < 1)
      throw std::invalid_argument("ScpConfig: max_outer must be >= 1");
    if (!(step_tol > 0.0))
      throw std::invalid_argument("ScpConfig: step_tol must be positive");
  }
};

struct FitResult {
  ModelParams theta_hat{};
  Eigen::VectorXd lambda_hat;  // one per constraint row; empty if none
  double objective = 0.0;      // re-evaluated at theta_hat
  int iterations = 0;          // outer iterations performed
  bool converged = false;      // step-size test fired before max_outer
  std::vector<int> active;     // active constraint indices at theta_hat
  std::vector<std::pair<Vec5, double>> trace;  // iterates with objectives
  int descent_violations = 0;  // strict objective increases along trace
};

/// First-order model of the objective at theta: value and gradient.
template <class Problem>
Evaluation linearize(const Problem& problem, const ModelParams& theta) {
  return problem.evaluate(theta);
}

/// Nonnegative least-squares multipliers from the stationarity condition
/// restricted to the active columns: min ||g - H_act lambda_act|| with
/// lambda >= 0, inactive entries zero. Used when a subproblem solver
/// reports no duals.
inline Eigen::VectorXd stationarity_multipliers(const Vec5& gradient,
                                                const ConstraintSet& cs,
                                                const std::vector<int>& active) {
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(cs.rows());
  std::vector<int> work = active;
  const Eigen::Map<const Eigen::Matrix<double, n_params, 1>> g(
      gradient.data());
  while (!work.empty()) {
    Eigen::MatrixXd h(n_params, work.size());
    for (std::size_t c = 0; c < work.size(); ++c)
      h.col(c) = cs.a.row(work[c]).transpose();
    Eigen::VectorXd sol = h.colPivHouseholderQr().solve(g);
    int worst = -1;
    for (int c = 0; c < sol.size(); ++c)
      if (sol(c) < 0.0 && (worst < 0 || sol(c) < sol(worst))) worst = c;
    if (worst < 0) {
      for (std::size_t c = 0; c < work.size(); ++c) lambda(work[c]) = sol(c);
      break;
    }
    work.erase(work.begin() + worst);
  }
  return lambda;
}

/// Run the SCP loop on any problem exposing
/// `const Evaluation& evaluate(const ModelParams&) const`.
/// `cs` may be null; it is only consulted when cfg.restricted is set.
/// Throws InfeasibleError if the starting point is infeasible.
template <class Problem>
FitResult scp_fit_problem(const Problem& problem, const ScpConfig& cfg,
                          const ConstraintSet* cs = nullptr) {
  cfg.validate();
  ConstraintSet defaults = default_constraints();
  const ConstraintSet* eff =
      cfg.restricted ? (cs != nullptr ? cs : &defaults) : nullptr;

  ModelParams theta = ModelParams::from_array(cfg.theta_init);
  theta.validate();
  if (eff != nullptr) {
    const double tol = default_active_tol(theta);
    const Eigen::VectorXd h0 = evaluate_h(*eff, theta);
    if (h0.minCoeff() < -tol)
      throw InfeasibleError(
          "scp_fit: starting point violates the constraints");
  }

  FitResult res;
  SubproblemResult sub;
  double prev_value = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= cfg.max_outer; ++iter) {
    const Evaluation eval = linearize(problem, theta);
    if (!std::isfinite(eval.value))
      throw NumericalError("scp_fit: objective is not finite at an iterate");
    res.trace.emplace_back(theta.as_array(), eval.value);
    if (eval.value > prev_value) ++res.descent_violations;
    prev_value = eval.value;

    sub = solve_subproblem(eval.gradient, theta.as_array(), cfg.rho,
                           cfg.lower_bounds, eff);
    double step = 0.0;
    const Vec5 cur = theta.as_array();
    for (int i = 0; i < n_params; ++i)
      step = std::max(step, std::abs(sub.theta[i] - cur[i]));
    theta = ModelParams::from_array(sub.theta);
    res.iterations = iter;
    if (step < cfg.step_tol) {
      res.converged = true;
      break;
    }
  }

  res.theta_hat = theta;
  const Evaluation final_eval = linearize(problem, theta);
  res.objective = final_eval.value;
  res.trace.emplace_back(theta.as_array(), final_eval.value);
  if (final_eval.value > prev_value) ++res.descent_violations;

  if (eff != nullptr) {
    res.active = active_set(*eff, theta);
    res.lambda_hat = sub.duals.size() == eff->rows()
                         ? sub.duals
                         : stationarity_multipliers(final_eval.gradient, *eff,
                                                    res.active);
  } else {
    res.lambda_hat = Eigen::VectorXd(0);
  }
  return res;
}

/// Fit the chosen estimator to a dataset. The unrestricted problem is
/// the cfg.restricted == false case; passing no ConstraintSet with
/// cfg.restricted == true selects the default restrictions.
inline FitResult scp_fit(const PanelDataset& data, const EstimatorSpec& est,
                         const ScpConfig& cfg,
                         const ConstraintSet* cs = nullptr) {
  if (est.kind == Estimator::mle) {
    NllProblem problem(data);
    return scp_fit_problem(problem, cfg, cs);
  }
  DpdProblem problem(data, est.dpd);
  return scp_fit_problem(problem, cfg, cs);
}

}  // namespace panelcount
