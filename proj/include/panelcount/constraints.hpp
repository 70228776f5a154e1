#pragma once

// Linear inequality restrictions h(theta) = A theta >= 0, their active
// set, and KKT residuals for the restricted minimization problem
//
//   min obj(theta)  s.t.  h(theta) >= 0,
//
// whose first-order conditions are, with H = A' (p x r) and multipliers
// lambda >= 0:
//
//   stationarity     grad(obj) - H lambda = 0
//   feasibility      h(theta) >= 0
//   complementarity  lambda' h(theta) = 0
//   dual feasibility lambda >= 0.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "common.hpp"
#include "divergence.hpp"
#include "types.hpp"

namespace panelcount {

/// Row-wise constraint matrix: each row a_i gives one restriction
/// a_i' theta >= 0. Rows must be linearly independent and fewer than the
/// parameter count.
struct ConstraintSet {
  Eigen::MatrixXd a;

  explicit ConstraintSet(Eigen::MatrixXd rows) : a(std::move(rows)) {
    if (a.rows() < 1 || a.cols() != n_params)
      throw std::invalid_argument(
          "ConstraintSet: need an r x 5 matrix with r >= 1");
    if (a.rows() >= n_params)
      throw std::invalid_argument("ConstraintSet: need r < 5 constraints");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a.transpose());
    if (qr.rank() != a.rows())
      throw std::invalid_argument(
          "ConstraintSet: constraint rows must be linearly independent");
  }

  int rows() const { return static_cast<int>(a.rows()); }

  /// H = A' (p x r), columns are active-constraint gradients.
  Eigen::MatrixXd h_jacobian() const { return a.transpose(); }
};

/// The shipped default: a1 >= a2 and b1 >= b2.
inline ConstraintSet default_constraints() {
  Eigen::MatrixXd a(2, n_params);
  a << 0, 1, 0, -1, 0,
       0, 0, 1, 0, -1;
  return ConstraintSet(std::move(a));
}

inline Eigen::VectorXd evaluate_h(const ConstraintSet& cs,
                                  const ModelParams& theta) {
  const Vec5 v = theta.as_array();
  return cs.a * Eigen::Map<const Eigen::Matrix<double, n_params, 1>>(v.data());
}

/// Default activity tolerance, scaled by the parameter magnitude.
inline double default_active_tol(const ModelParams& theta) {
  return 1e-6 * (1.0 + linf_norm(theta.as_array()));
}

/// Indices (0-based) with |h_i(theta)| <= tol. Inclusive at the
/// tolerance; throws if theta is infeasible beyond -tol.
inline std::vector<int> active_set(const ConstraintSet& cs,
                                   const ModelParams& theta,
                                   double tol = -1.0) {
  if (tol < 0.0) tol = default_active_tol(theta);
  const Eigen::VectorXd h = evaluate_h(cs, theta);
  std::vector<int> idx;
  for (int i = 0; i < h.size(); ++i) {
    if (h(i) < -tol)
      throw InfeasibleError("active_set: constraint " + std::to_string(i + 1) +
                            " violated: h = " + std::to_string(h(i)));
    if (std::abs(h(i)) <= tol) idx.push_back(i);
  }
  return idx;
}

/// The four KKT residual blocks at (theta, lambda).
struct KktResidual {
  Eigen::VectorXd stationarity;  // grad - H lambda (5)
  Eigen::VectorXd feasibility;   // h(theta) (r)
  double complementarity = 0.0;  // |lambda' h|
  double dual_feasibility = 0.0; // min lambda

  double stationarity_inf() const {
    return stationarity.size() ? stationarity.cwiseAbs().maxCoeff() : 0.0;
  }
  double feasibility_min() const {
    return feasibility.size() ? feasibility.minCoeff() : 0.0;
  }
  /// Certification at thresholds (eps_s, eps_f, eps_c, eps_d).
  bool certified(double eps_s, double eps_f, double eps_c,
                 double eps_d) const {
    return stationarity_inf() <= eps_s && feasibility_min() >= -eps_f &&
           complementarity <= eps_c && dual_feasibility >= -eps_d;
  }
};

/// Residuals from a precomputed objective gradient (estimator-agnostic).
inline KktResidual kkt_residual_at(const Vec5& gradient,
                                   const ConstraintSet& cs,
                                   const ModelParams& theta,
                                   const Eigen::VectorXd& lambda) {
  if (lambda.size() != cs.rows())
    throw std::invalid_argument("kkt_residual: lambda has wrong length");
  KktResidual out;
  const Eigen::Map<const Eigen::Matrix<double, n_params, 1>> g(
      gradient.data());
  out.stationarity = g - cs.a.transpose() * lambda;
  out.feasibility = evaluate_h(cs, theta);
  out.complementarity = std::abs(lambda.dot(out.feasibility));
  out.dual_feasibility = lambda.size() ? lambda.minCoeff() : 0.0;
  return out;
}

/// Residuals for the DPD objective.
inline KktResidual kkt_residual(const PanelDataset& data,
                                const ModelParams& theta,
                                const Eigen::VectorXd& lambda,
                                const DpdConfig& cfg, const ConstraintSet& cs) {
  return kkt_residual_at(dpd_gradient(data, theta, cfg), cs, theta, lambda);
}

/// Residuals for the exact likelihood objective.
inline KktResidual kkt_residual_mle(const PanelDataset& data,
                                    const ModelParams& theta,
                                    const Eigen::VectorXd& lambda,
                                    const ConstraintSet& cs) {
  return kkt_residual_at(NllProblem(data).evaluate(theta).gradient, cs, theta,
                         lambda);
}

}  // namespace panelcount
