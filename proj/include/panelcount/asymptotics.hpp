#pragma once

// Model-based asymptotic matrices for the minimum divergence estimator:
//
//   xi_g (5)     = sum_n u(n) f^{1+g}(n)
//   J_g  (5x5)   = sum_n u(n) u(n)' f^{1+g}(n)
//   K_g  (5x5)   = sum_n u(n) u(n)' f^{2g+1}(n) - xi xi'
//
// over the certified truncated support, and the restricted asymptotic
// covariance
//
//   P   = -H_s' J^+ H_s             (H_s: active constraint gradients)
//   L   = -[J^+ + J^+ H_s P^{-1} H_s' J^+]
//   Sigma = L' K L,
//
// which reduces to the classical sandwich J^+ K J^+ when no constraint
// is active. Standard errors are sqrt(diag(Sigma)/m).
//
// J^+ is the spectral pseudo-inverse rather than a plain inverse: the
// pmf is invariant under joint rescaling of (zeta, a1, a2), so the
// score obeys zeta u_zeta + a1 u_{a1} + a2 u_{a2} = 0 exactly and J is
// rank 4 with null direction (zeta, a1, 0, a2, 0) at every parameter
// point. sigma_restricted documents the details and refuses anything
// more degenerate than this structural null space.
//
// All sums stream over the support in one pass with compensated
// accumulators; J and K are filled from a shared upper-triangle
// accumulator, so they are exactly symmetric.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "constraints.hpp"
#include "divergence.hpp"
#include "model.hpp"
#include "types.hpp"

namespace panelcount {

using Matrix5 = Eigen::Matrix<double, n_params, n_params>;
using Vector5 = Eigen::Matrix<double, n_params, 1>;

struct AsymptoticsResult {
  Matrix5 j = Matrix5::Zero();
  Matrix5 k = Matrix5::Zero();
  Vector5 xi = Vector5::Zero();
  Matrix5 sigma = Matrix5::Zero();
  Vec5 std_errors{};
  double j_condition = 0.0;  // condition number of J's retained spectrum
  int n_max = 0;             // truncation actually used
};

namespace detail {

struct SupportMoments {
  Vector5 xi = Vector5::Zero();
  Matrix5 j = Matrix5::Zero();
  Matrix5 k_raw = Matrix5::Zero();  // sum u u' f^{2g+1}, before -xi xi'
  int n_max = 0;
};

/// One streaming pass over the truncated support accumulating xi, J, and
/// the raw second-moment part of K.
inline SupportMoments support_asymptotic_moments(const ModelContext& ctx,
                                                 int n_max, double gamma) {
  const int n_cells = 2 * ctx.k;
  check_support_budget(ctx.k, n_max);

  // lgamma tables: per-cell counts and grand totals, as in the
  // divergence support pass.
  std::vector<double> lg(static_cast<std::size_t>(n_max) + 1);
  for (int v = 0; v <= n_max; ++v) lg[v] = std::lgamma(double(v) + 1.0);
  const int m_cap = n_cells * n_max;
  std::vector<double> lgm(static_cast<std::size_t>(m_cap) + 1);
  for (int v = 0; v <= m_cap; ++v) lgm[v] = std::lgamma(double(v) + 1.0);

  const double log_zeta = std::log(ctx.theta.zeta);
  KahanSumArray<n_params> xi_acc;
  KahanSumArray<n_params * n_params> j_acc;  // upper triangle used
  KahanSumArray<n_params * n_params> k_acc;

  for_each_support(ctx.k, n_max, [&](std::span<const int> n) {
    int m_total = 0;
    double log_x = 0.0;
    for (int c = 0; c < n_cells; ++c) {
      m_total += n[c];
      if (n[c] > 0) log_x += n[c] * ctx.log_cell_rate[c] - lg[n[c]];
    }
    const double lf = log_zeta + log_x + lgm[m_total] -
                      (double(m_total) + 1.0) * ctx.log_d;
    const double w1 = std::exp((1.0 + gamma) * lf);        // f^{1+g}
    const double w2 = std::exp((2.0 * gamma + 1.0) * lf);  // f^{2g+1}
    const Vec5 u = score(ctx, n);
    for (int a = 0; a < n_params; ++a) {
      xi_acc.add_at(a, u[a] * w1);
      for (int b = a; b < n_params; ++b) {
        j_acc.add_at(a * n_params + b, u[a] * u[b] * w1);
        k_acc.add_at(a * n_params + b, u[a] * u[b] * w2);
      }
    }
  });

  SupportMoments out;
  out.n_max = n_max;
  for (int a = 0; a < n_params; ++a) {
    out.xi(a) = xi_acc.value()[a];
    for (int b = a; b < n_params; ++b) {
      out.j(a, b) = j_acc.value()[a * n_params + b];
      out.j(b, a) = out.j(a, b);
      out.k_raw(a, b) = k_acc.value()[a * n_params + b];
      out.k_raw(b, a) = out.k_raw(a, b);
    }
  }
  return out;
}

inline SupportMoments moments_for(const ModelParams& theta,
                                  const ObservationSchedule& schedule,
                                  const DpdConfig& cfg) {
  // gamma = 0 is meaningful here (the likelihood limit, where J = K =
  // Fisher information and the sandwich collapses to the inverse
  // information), even though the divergence objective itself needs
  // gamma > 0. Validate the remaining fields through a positive proxy.
  if (cfg.gamma == 0.0) {
    DpdConfig proxy = cfg;
    proxy.gamma = 1.0;
    proxy.validate();
  } else {
    cfg.validate();
  }
  schedule.validate();
  theta.validate();
  const ModelContext ctx = make_context(theta, schedule);
  const int n_max = resolve_n_max(ctx, cfg);
  return support_asymptotic_moments(ctx, n_max, cfg.gamma);
}

}  // namespace detail

inline Matrix5 j_matrix(const ModelParams& theta,
                        const ObservationSchedule& schedule,
                        const DpdConfig& cfg) {
  return detail::moments_for(theta, schedule, cfg).j;
}

inline Vector5 xi_vector(const ModelParams& theta,
                         const ObservationSchedule& schedule,
                         const DpdConfig& cfg) {
  return detail::moments_for(theta, schedule, cfg).xi;
}

inline Matrix5 k_matrix(const ModelParams& theta,
                        const ObservationSchedule& schedule,
                        const DpdConfig& cfg) {
  const detail::SupportMoments mom = detail::moments_for(theta, schedule, cfg);
  return mom.k_raw - mom.xi * mom.xi.transpose();
}

/// Full asymptotic computation at theta with the given active constraint
/// indices (0-based rows of cs). Pass an empty active set (or cs == null)
/// for the unrestricted sandwich. sample_size m scales the standard
/// errors: std_errors = sqrt(diag(Sigma)/m).
inline AsymptoticsResult sigma_restricted(const ModelParams& theta,
                                          const ObservationSchedule& schedule,
                                          const DpdConfig& cfg,
                                          const ConstraintSet* cs,
                                          const std::vector<int>& active,
                                          int sample_size) {
  if (sample_size < 1)
    throw std::invalid_argument("sigma_restricted: sample_size must be >= 1");
  if (!active.empty() && cs == nullptr)
    throw std::invalid_argument(
        "sigma_restricted: active indices given without a constraint set");
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (cs != nullptr && (active[i] < 0 || active[i] >= cs->rows()))
      throw std::invalid_argument(
          "sigma_restricted: active index out of range");
    for (std::size_t l = i + 1; l < active.size(); ++l)
      if (active[i] == active[l])
        throw std::invalid_argument(
            "sigma_restricted: duplicate active index");
  }

  const detail::SupportMoments mom = detail::moments_for(theta, schedule, cfg);

  AsymptoticsResult out;
  out.n_max = mom.n_max;
  out.j = mom.j;
  out.xi = mom.xi;
  out.k = mom.k_raw - mom.xi * mom.xi.transpose();

  // Spectral decomposition of J. The score of this model satisfies one
  // exact linear relation,
  //
  //   zeta u_zeta + a1 u_{a1} + a2 u_{a2} = 0   for every count vector,
  //
  // because the pmf is invariant under a joint rescaling of
  // (zeta, a1, a2): the frailty scale trades off exactly against the
  // baseline intensity scale, so only the ratios a_j / zeta (and the
  // b_j) are identified. J and K therefore carry a structural
  // one-dimensional null space at every parameter point, spanned by
  // (zeta, a1, 0, a2, 0). The covariance is defined on the orthogonal
  // (identifiable) subspace through the spectral pseudo-inverse:
  // eigenvalues at or below 1e-12 * lambda_max are treated as that null
  // space. The reported condition number and the 1e12 refusal threshold
  // apply to the retained spectrum, and any degeneracy beyond the single
  // structural direction is refused as genuinely singular.
  Eigen::SelfAdjointEigenSolver<Matrix5> eig(out.j);
  const Vector5 lam = eig.eigenvalues();  // ascending
  const double lmax = lam(n_params - 1);
  if (!(lmax > 0.0) || !std::isfinite(lmax))
    throw SingularError("sigma_restricted: J has no positive spectrum");
  const double null_tol = 1e-12 * lmax;
  int nullity = 0;
  while (nullity < n_params && lam(nullity) <= null_tol) ++nullity;
  out.j_condition = lmax / lam(nullity);
  if (nullity > 1 || !(out.j_condition < 1e12))
    throw SingularError(
        "sigma_restricted: J is singular beyond its structural null space "
        "(effective cond = " +
        std::to_string(out.j_condition) +
        ", nullity = " + std::to_string(nullity) + ")");

  Matrix5 j_pinv = Matrix5::Zero();
  for (int i = nullity; i < n_params; ++i)
    j_pinv += eig.eigenvectors().col(i) *
              eig.eigenvectors().col(i).transpose() / lam(i);

  Matrix5 l_mat = -j_pinv;
  if (!active.empty()) {
    const int s = static_cast<int>(active.size());
    Eigen::MatrixXd h_s(n_params, s);
    for (int c = 0; c < s; ++c)
      h_s.col(c) = cs->a.row(active[c]).transpose();
    if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(h_s).rank() != s)
      throw SingularError(
          "sigma_restricted: active constraint gradients are rank-deficient");
    const Eigen::MatrixXd x = j_pinv * h_s;              // J^+ H_s
    const Eigen::MatrixXd p_tilde = h_s.transpose() * x; // H_s' J^+ H_s
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> p_eig(p_tilde);
    const double p_max = p_eig.eigenvalues().maxCoeff();
    if (!(p_eig.eigenvalues().minCoeff() > 1e-12 * p_max))
      throw SingularError("sigma_restricted: projected matrix P is singular");
    // L = -[J^+ - J^+ H_s (H_s' J^+ H_s)^{-1} H_s' J^+]
    //   (P = -p_tilde, so + J^+ H_s P^{-1} H_s' J^+ flips sign).
    const Eigen::MatrixXd p_inv =
        p_eig.eigenvectors() *
        p_eig.eigenvalues().cwiseInverse().asDiagonal() *
        p_eig.eigenvectors().transpose();
    l_mat = -j_pinv + x * p_inv * x.transpose();
  }

  Matrix5 sigma = l_mat.transpose() * out.k * l_mat;
  out.sigma = 0.5 * (sigma + sigma.transpose());
  for (int i = 0; i < n_params; ++i)
    out.std_errors[i] =
        std::sqrt(std::max(out.sigma(i, i), 0.0) / double(sample_size));
  return out;
}

}  // namespace panelcount
