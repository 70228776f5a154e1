#pragma once

// Marginal model for bivariate panel counts with a shared multiplicative
// frailty. Conditional on a subject frailty z ~ Exponential(rate zeta),
// cell counts N_{jl} are independent Poisson(z * a_j * Delta_{jl}) with
// interval increments Delta_{jl} = tau_l^{b_j} - tau_{l-1}^{b_j}.
// Integrating the frailty out in closed form gives, with
//   S = sum_{j,l} a_j Delta_{jl},  M = sum_{j,l} n_{jl},
//
//   f(n) = zeta * M! * prod_{j,l} (a_j Delta_{jl})^{n_{jl}}
//          / ( prod_{j,l} n_{jl}! * (zeta + S)^{M+1} ).
//
// The exponent M+1 comes from integrating z^M e^{-(zeta+S)z} zeta dz =
// zeta M! / (zeta+S)^{M+1}; it is also the unique exponent for which the
// pmf sums to one (group terms by M and apply the multinomial theorem:
// the mass at total M is (zeta/(zeta+S)) (S/(zeta+S))^M, a geometric
// series). All evaluation is done in log space with log-gamma factorials.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "common.hpp"
#include "types.hpp"

namespace panelcount {

/// Increments tau_l^b - tau_{l-1}^b, l = 1..k, of the baseline shape t^b.
inline std::vector<double> interval_increments(
    const ObservationSchedule& schedule, double b) {
  schedule.validate();
  if (!(b > 0.0))
    throw std::invalid_argument("interval_increments: b must be positive");
  const int k = schedule.k();
  std::vector<double> inc(static_cast<std::size_t>(k));
  for (int l = 1; l <= k; ++l)
    inc[l - 1] =
        std::pow(schedule.taus[l], b) - std::pow(schedule.taus[l - 1], b);
  return inc;
}

/// d/db increments: tau_l^b ln(tau_l) - tau_{l-1}^b ln(tau_{l-1}).
inline std::vector<double> interval_increments_db(
    const ObservationSchedule& schedule, double b) {
  schedule.validate();
  if (!(b > 0.0))
    throw std::invalid_argument("interval_increments_db: b must be positive");
  const int k = schedule.k();
  std::vector<double> inc(static_cast<std::size_t>(k));
  for (int l = 1; l <= k; ++l)
    inc[l - 1] = std::pow(schedule.taus[l], b) * std::log(schedule.taus[l]) -
                 std::pow(schedule.taus[l - 1], b) *
                     std::log(schedule.taus[l - 1]);
  return inc;
}

/// Everything about (theta, schedule) that pmf/score evaluation reuses.
/// Building one context per theta and evaluating many count vectors
/// against it is the intended pattern for hot paths.
struct ModelContext {
  ModelParams theta;
  int k = 0;
  // Per cell c (layout order): rate x_c = a_j Delta_{jl}, its log, and the
  // ratio dDelta_{jl}/db / Delta_{jl} entering the b-score.
  std::vector<double> cell_rate;
  std::vector<double> log_cell_rate;
  std::vector<double> cell_db_ratio;
  double s_total = 0.0;  // S
  double d_total = 0.0;  // zeta + S
  double log_d = 0.0;
  std::array<double, 2> sum_delta{};     // sum_l Delta_{jl}
  std::array<double, 2> sum_delta_db{};  // sum_l dDelta_{jl}/db

  int n_cells() const { return 2 * k; }
};

inline ModelContext make_context(const ModelParams& theta,
                                 const ObservationSchedule& schedule) {
  theta.validate();
  schedule.validate();
  ModelContext ctx;
  ctx.theta = theta;
  ctx.k = schedule.k();
  const std::array<double, 2> a{theta.a1, theta.a2};
  const std::array<std::vector<double>, 2> delta{
      interval_increments(schedule, theta.b1),
      interval_increments(schedule, theta.b2)};
  const std::array<std::vector<double>, 2> delta_db{
      interval_increments_db(schedule, theta.b1),
      interval_increments_db(schedule, theta.b2)};
  ctx.cell_rate.resize(static_cast<std::size_t>(ctx.n_cells()));
  ctx.log_cell_rate.resize(static_cast<std::size_t>(ctx.n_cells()));
  ctx.cell_db_ratio.resize(static_cast<std::size_t>(ctx.n_cells()));
  KahanSum s;
  for (int c = 0; c < ctx.n_cells(); ++c) {
    const int l = c / 2, j = c % 2;
    const double x = a[j] * delta[j][l];
    if (!(x > 0.0))
      throw std::invalid_argument(
          "model: cell rate a_j * Delta_{jl} must be positive");
    ctx.cell_rate[c] = x;
    ctx.log_cell_rate[c] = std::log(x);
    ctx.cell_db_ratio[c] = delta_db[j][l] / delta[j][l];
    s.add(x);
  }
  for (int j = 0; j < 2; ++j) {
    KahanSum sd, sdb;
    for (int l = 0; l < ctx.k; ++l) {
      sd.add(delta[j][l]);
      sdb.add(delta_db[j][l]);
    }
    ctx.sum_delta[j] = sd.value();
    ctx.sum_delta_db[j] = sdb.value();
  }
  ctx.s_total = s.value();
  ctx.d_total = theta.zeta + ctx.s_total;
  ctx.log_d = std::log(ctx.d_total);
  return ctx;
}

/// Total marginal rate S = sum_{j,l} a_j Delta_{jl}.
inline double total_rate(const ModelParams& theta,
                         const ObservationSchedule& schedule) {
  return make_context(theta, schedule).s_total;
}

inline void check_counts(const ModelContext& ctx, std::span<const int> n) {
  if (static_cast<int>(n.size()) != ctx.n_cells())
    throw std::invalid_argument("model: count vector has wrong length");
  for (int v : n)
    if (v < 0) throw std::invalid_argument("model: counts must be >= 0");
}

inline double log_pmf(const ModelContext& ctx, std::span<const int> n) {
  check_counts(ctx, n);
  long long m_total = 0;
  double acc = 0.0;
  for (std::size_t c = 0; c < n.size(); ++c) {
    const int v = n[c];
    m_total += v;
    acc += v * ctx.log_cell_rate[c] - std::lgamma(static_cast<double>(v) + 1.0);
  }
  return std::log(ctx.theta.zeta) + acc +
         std::lgamma(static_cast<double>(m_total) + 1.0) -
         (static_cast<double>(m_total) + 1.0) * ctx.log_d;
}

inline double log_pmf(const CountVector& n, const ModelParams& theta,
                      const ObservationSchedule& schedule) {
  return log_pmf(make_context(theta, schedule), n);
}

/// Marginal pmf. Never returns 0 for finite counts: on underflow the
/// smallest positive normal double is returned and *underflow (if given)
/// is set.
inline double pmf(const ModelContext& ctx, std::span<const int> n,
                  bool* underflow = nullptr) {
  const double lf = log_pmf(ctx, n);
  double f = std::exp(lf);
  if (f < std::numeric_limits<double>::min()) {
    f = std::numeric_limits<double>::min();
    if (underflow) *underflow = true;
  } else if (underflow) {
    *underflow = false;
  }
  return f;
}

inline double pmf(const CountVector& n, const ModelParams& theta,
                  const ObservationSchedule& schedule,
                  bool* underflow = nullptr) {
  return pmf(make_context(theta, schedule), n, underflow);
}

/// Score u(n; theta) = d log f / d theta, closed form. With M = sum n_{jl},
/// D = zeta + S, T_j = sum_l n_{jl}:
///   u_zeta = 1/zeta - (M+1)/D
///   u_{a_j} = T_j/a_j - (M+1) (sum_l Delta_{jl}) / D
///   u_{b_j} = sum_l n_{jl} dDelta_{jl}/db / Delta_{jl}
///             - (M+1) a_j (sum_l dDelta_{jl}/db) / D.
inline Vec5 score(const ModelContext& ctx, std::span<const int> n) {
  check_counts(ctx, n);
  long long m_total = 0;
  std::array<double, 2> t{};   // per-event-type count totals
  std::array<double, 2> r{};   // sum_l n_{jl} * dDelta/db / Delta
  for (std::size_t c = 0; c < n.size(); ++c) {
    const int v = n[c];
    const int j = static_cast<int>(c) % 2;
    m_total += v;
    t[j] += v;
    r[j] += v * ctx.cell_db_ratio[c];
  }
  const double m1_over_d = (static_cast<double>(m_total) + 1.0) / ctx.d_total;
  const ModelParams& th = ctx.theta;
  return Vec5{1.0 / th.zeta - m1_over_d,
              t[0] / th.a1 - m1_over_d * ctx.sum_delta[0],
              r[0] - m1_over_d * th.a1 * ctx.sum_delta_db[0],
              t[1] / th.a2 - m1_over_d * ctx.sum_delta[1],
              r[1] - m1_over_d * th.a2 * ctx.sum_delta_db[1]};
}

inline Vec5 score(const CountVector& n, const ModelParams& theta,
                  const ObservationSchedule& schedule) {
  return score(make_context(theta, schedule), n);
}

/// Exact negative log-likelihood -sum_i log f(N_i), constants included.
inline double neg_log_likelihood(const PanelDataset& data,
                                 const ModelParams& theta) {
  data.validate();
  const ModelContext ctx = make_context(theta, data.schedule);
  std::vector<double> terms(data.rows.size());
  for (std::size_t i = 0; i < data.rows.size(); ++i)
    terms[i] = -log_pmf(ctx, data.rows[i]);
  return pairwise_sum(terms);
}

// ---------------------------------------------------------------------------
// Truncated support enumeration
// ---------------------------------------------------------------------------

inline constexpr double support_budget = 1e8;

/// (n_max+1)^{2k} as a double (avoids integer overflow for the guard).
inline double support_size(int k, int n_max) {
  return std::pow(static_cast<double>(n_max) + 1.0, 2.0 * k);
}

inline void check_support_budget(int k, int n_max) {
  if (support_size(k, n_max) > support_budget)
    throw CapacityError(
        "support enumeration of (n_max+1)^(2k) = " +
        std::to_string(support_size(k, n_max)) +
        " points exceeds the budget of 1e8; reduce n_max or k");
}

/// Visit every count vector with all cells in {0..n_max}, in ascending
/// lexicographic order (last cell varies fastest). The span passed to the
/// visitor is only valid during the call.
template <class Visit>
inline void for_each_support(int k, int n_max, Visit&& visit) {
  if (k < 1 || n_max < 0)
    throw std::invalid_argument("for_each_support: need k >= 1, n_max >= 0");
  check_support_budget(k, n_max);
  const int cells = 2 * k;
  std::vector<int> n(static_cast<std::size_t>(cells), 0);
  const std::span<const int> view(n);
  for (;;) {
    visit(view);
    int c = cells - 1;
    while (c >= 0 && n[c] == n_max) n[c--] = 0;
    if (c < 0) break;
    ++n[c];
  }
}

/// Materialized truncated support (intended for inspection and tests; hot
/// paths stream with for_each_support instead).
inline std::vector<CountVector> enumerate_support(int k, int n_max) {
  check_support_budget(k, n_max);
  std::vector<CountVector> out;
  out.reserve(static_cast<std::size_t>(support_size(k, n_max)));
  for_each_support(k, n_max, [&](std::span<const int> n) {
    out.emplace_back(n.begin(), n.end());
  });
  return out;
}

/// Total pmf mass on the truncated support (compensated summation).
inline double truncation_mass(const ModelParams& theta,
                              const ObservationSchedule& schedule, int n_max) {
  const ModelContext ctx = make_context(theta, schedule);
  KahanSum mass;
  for_each_support(ctx.k, n_max, [&](std::span<const int> n) {
    mass.add(std::exp(log_pmf(ctx, n)));
  });
  return mass.value();
}

/// Exact analytic bound on the truncated tail: the total count M is
/// geometric with ratio q = S/(zeta+S), so the mass of {any cell > n_max}
/// is at most P(M > n_max) = q^{n_max+1}.
inline double truncation_tail_bound(const ModelContext& ctx, int n_max) {
  const double q = ctx.s_total / ctx.d_total;
  return std::pow(q, static_cast<double>(n_max) + 1.0);
}

/// Smallest n_max >= n_max_initial whose analytic tail bound is <= tail_tol.
/// Throws CapacityError if that n_max would exceed the enumeration budget.
inline int choose_n_max(const ModelContext& ctx, int n_max_initial,
                        double tail_tol) {
  if (!(tail_tol > 0.0))
    throw std::invalid_argument("choose_n_max: tail_tol must be positive");
  int n_max = std::max(0, n_max_initial);
  while (truncation_tail_bound(ctx, n_max) > tail_tol) {
    ++n_max;
    check_support_budget(ctx.k, n_max);
  }
  check_support_budget(ctx.k, n_max);
  return n_max;
}

}  // namespace panelcount
