#pragma once

// Density power divergence (DPD) objective for the frailty panel count
// model. For tuning parameter gamma > 0 the per-subject loss is
//
//   V_theta(N_i) = C_gamma(theta) - (1 + 1/gamma) f^gamma(N_i),
//   C_gamma(theta) = sum_n f^{1+gamma}(n)   (certified truncated support),
//
// and the estimator minimizes (1/m) sum_i V_theta(N_i). Its analytic
// gradient is
//
//   (1+gamma) [ sum_n u(n) f^{1+gamma}(n)
//               - (1/m) sum_i u(N_i) f^gamma(N_i) ].
//
// gamma -> 0 recovers the maximum likelihood estimator; that path is
// served exactly by neg_log_likelihood (NllProblem below), never by a
// tiny gamma.

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "common.hpp"
#include "model.hpp"
#include "types.hpp"

namespace panelcount {

struct DpdConfig {
  double gamma = 0.5;
  /// Certified bound on the pmf mass lost to support truncation.
  double tail_tol = 1e-6;
  /// Starting per-cell cap; raised adaptively until the analytic tail
  /// bound meets tail_tol.
  int n_max_initial = 5;
  /// Diagnostic escape hatch: when >= 0, evaluate on exactly this cap and
  /// skip the adaptive certification (for regimes whose certified support
  /// would exceed the enumeration budget).
  int n_max_override = -1;

  void validate() const {
    if (!(gamma > 0.0) || !std::isfinite(gamma))
      throw std::invalid_argument("DpdConfig: gamma must be positive");
    if (!(tail_tol > 0.0) || tail_tol > 1e-3)
      throw std::invalid_argument("DpdConfig: tail_tol must be in (0, 1e-3]");
    if (n_max_initial < 0)
      throw std::invalid_argument("DpdConfig: n_max_initial must be >= 0");
  }
};

/// Objective value and gradient at one theta.
struct Evaluation {
  double value = 0.0;
  Vec5 gradient{};
};

namespace detail {

/// Support cap for (ctx, cfg): the override if given, else adaptive.
inline int resolve_n_max(const ModelContext& ctx, const DpdConfig& cfg) {
  if (cfg.n_max_override >= 0) {
    check_support_budget(ctx.k, cfg.n_max_override);
    return cfg.n_max_override;
  }
  return choose_n_max(ctx, cfg.n_max_initial, cfg.tail_tol);
}

/// One streaming pass over the truncated support, accumulating
/// C = sum f^{1+gamma} and xi = sum u f^{1+gamma} with compensated sums.
struct FitMoments {
  double c_gamma = 0.0;
  Vec5 xi_weighted{};
  int n_max = 0;
};

inline FitMoments support_fit_moments(const ModelContext& ctx, int n_max,
                                      double gamma) {
  const int cells = ctx.n_cells();
  // Factorial tables: per-cell counts up to n_max, totals up to 2k*n_max.
  std::vector<double> lg(static_cast<std::size_t>(n_max) + 1);
  for (int i = 0; i <= n_max; ++i)
    lg[i] = std::lgamma(static_cast<double>(i) + 1.0);
  std::vector<double> lgm(static_cast<std::size_t>(cells) * n_max + 1);
  for (std::size_t i = 0; i < lgm.size(); ++i)
    lgm[i] = std::lgamma(static_cast<double>(i) + 1.0);

  const double log_zeta = std::log(ctx.theta.zeta);
  const double w_exp = 1.0 + gamma;
  KahanSum c_acc;
  KahanSumArray<n_params> xi_acc;
  for_each_support(ctx.k, n_max, [&](std::span<const int> n) {
    long long m_total = 0;
    double acc = 0.0;
    std::array<double, 2> t{}, r{};
    for (int c = 0; c < cells; ++c) {
      const int v = n[c];
      m_total += v;
      acc += v * ctx.log_cell_rate[c] - lg[v];
      t[c % 2] += v;
      r[c % 2] += v * ctx.cell_db_ratio[c];
    }
    const double log_f =
        log_zeta + acc + lgm[m_total] - (m_total + 1.0) * ctx.log_d;
    const double w = std::exp(w_exp * log_f);
    c_acc.add(w);
    const double m1_over_d = (m_total + 1.0) / ctx.d_total;
    const ModelParams& th = ctx.theta;
    xi_acc.add_scaled(
        Vec5{1.0 / th.zeta - m1_over_d,
             t[0] / th.a1 - m1_over_d * ctx.sum_delta[0],
             r[0] - m1_over_d * th.a1 * ctx.sum_delta_db[0],
             t[1] / th.a2 - m1_over_d * ctx.sum_delta[1],
             r[1] - m1_over_d * th.a2 * ctx.sum_delta_db[1]},
        w);
  });
  return FitMoments{c_acc.value(), xi_acc.value(), n_max};
}

}  // namespace detail

/// C_gamma(theta) = sum_n f^{1+gamma}(n) over the certified support.
inline double normalization_term(const ModelParams& theta,
                                 const ObservationSchedule& schedule,
                                 const DpdConfig& cfg) {
  cfg.validate();
  const ModelContext ctx = make_context(theta, schedule);
  const int n_max = detail::resolve_n_max(ctx, cfg);
  return detail::support_fit_moments(ctx, n_max, cfg.gamma).c_gamma;
}

/// Per-subject DPD loss V_theta(n) = C_gamma - (1 + 1/gamma) f^gamma(n).
/// Bounded in the outlier direction: as f(n) -> 0, V -> C_gamma.
inline double v_theta(const CountVector& n, const ModelParams& theta,
                      const ObservationSchedule& schedule,
                      const DpdConfig& cfg) {
  const double c_gamma = normalization_term(theta, schedule, cfg);
  const ModelContext ctx = make_context(theta, schedule);
  const double fg = std::exp(cfg.gamma * log_pmf(ctx, n));
  return c_gamma - (1.0 + 1.0 / cfg.gamma) * fg;
}

/// Empirical DPD objective (1/m) sum_i V_theta(N_i) and its gradient,
/// sharing a single support pass. Row reductions use canonical-order
/// pairwise summation, so the result is bit-identical under row
/// permutation and across thread counts.
inline Evaluation dpd_evaluate(const PanelDataset& data,
                               const ModelParams& theta,
                               const DpdConfig& cfg) {
  cfg.validate();
  data.validate();
  const ModelContext ctx = make_context(theta, data.schedule);
  const int n_max = detail::resolve_n_max(ctx, cfg);
  const detail::FitMoments mom =
      detail::support_fit_moments(ctx, n_max, cfg.gamma);

  const std::size_t m = data.rows.size();
  std::vector<double> fg_terms(m);
  std::vector<Vec5> grad_terms(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double fg = std::exp(cfg.gamma * log_pmf(ctx, data.rows[i]));
    const Vec5 u = score(ctx, data.rows[i]);
    fg_terms[i] = fg;
    for (int c = 0; c < n_params; ++c) grad_terms[i][c] = u[c] * fg;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  const double mean_fg = sorted_pairwise_sum(std::move(fg_terms)) * inv_m;
  const Vec5 mean_ufg = sorted_pairwise_sum(grad_terms);

  Evaluation out;
  out.value = mom.c_gamma - (1.0 + 1.0 / cfg.gamma) * mean_fg;
  for (int c = 0; c < n_params; ++c)
    out.gradient[c] =
        (1.0 + cfg.gamma) * (mom.xi_weighted[c] - mean_ufg[c] * inv_m);
  return out;
}

inline double dpd_objective(const PanelDataset& data, const ModelParams& theta,
                            const DpdConfig& cfg) {
  return dpd_evaluate(data, theta, cfg).value;
}

inline Vec5 dpd_gradient(const PanelDataset& data, const ModelParams& theta,
                         const DpdConfig& cfg) {
  return dpd_evaluate(data, theta, cfg).gradient;
}

/// DPD objective bound to one dataset, with a one-slot memo so repeated
/// evaluation at the same theta (optimizer re-checks, KKT certification)
/// costs one support pass, not several.
class DpdProblem {
 public:
  DpdProblem(const PanelDataset& data, const DpdConfig& cfg)
      : data_(&data), cfg_(cfg) {
    cfg_.validate();
    data.validate();
  }

  const Evaluation& evaluate(const ModelParams& theta) const {
    const Vec5 key = theta.as_array();
    if (!have_ || key != key_) {
      value_ = dpd_evaluate(*data_, theta, cfg_);
      key_ = key;
      have_ = true;
    }
    return value_;
  }

  const DpdConfig& config() const { return cfg_; }
  const PanelDataset& data() const { return *data_; }

 private:
  const PanelDataset* data_;
  DpdConfig cfg_;
  mutable bool have_ = false;
  mutable Vec5 key_{};
  mutable Evaluation value_{};
};

/// Exact negative log-likelihood objective (the gamma = 0 path). No
/// support enumeration is needed: value and gradient are plain sums of
/// per-row terms.
class NllProblem {
 public:
  explicit NllProblem(const PanelDataset& data) : data_(&data) {
    data.validate();
  }

  const Evaluation& evaluate(const ModelParams& theta) const {
    const Vec5 key = theta.as_array();
    if (have_ && key == key_) return value_;
    const ModelContext ctx = make_context(theta, data_->schedule);
    const std::size_t m = data_->rows.size();
    std::vector<double> lf(m);
    std::vector<Vec5> us(m);
    for (std::size_t i = 0; i < m; ++i) {
      lf[i] = -log_pmf(ctx, data_->rows[i]);
      const Vec5 u = score(ctx, data_->rows[i]);
      for (int c = 0; c < n_params; ++c) us[i][c] = -u[c];
    }
    value_.value = sorted_pairwise_sum(std::move(lf));
    value_.gradient = sorted_pairwise_sum(us);
    key_ = key;
    have_ = true;
    return value_;
  }

  const PanelDataset& data() const { return *data_; }

 private:
  const PanelDataset* data_;
  mutable bool have_ = false;
  mutable Vec5 key_{};
  mutable Evaluation value_{};
};

}  // namespace panelcount
