#pragma once

// Dissimilarity goodness-of-fit statistic and its parametric bootstrap
// p-value.
//
// The statistic averages absolute relative deviations of observed cell
// counts from their marginal expectations,
//
//   T = (1/(m k)) sum_i sum_l [ |n_{i1l} - e_{1l}| / e_{1l}
//                             + |n_{i2l} - e_{2l}| / e_{2l} ],
//
// where e_{jl} = (a_j / zeta) Delta_{jl} is the marginal mean of a cell
// count: conditioning on the frailty, E[N_{jl} | Z] = Z a_j Delta_{jl},
// and E[Z] = 1/zeta under the exponential frailty law. The expectations
// are the same for every subject.
//
// The p-value is estimated by a parametric bootstrap: B datasets of the
// same (m, schedule) are generated from the fitted model (pure, no
// contamination), the statistic is computed for each, and the p-value
// is the proportion of bootstrap statistics that strictly exceed the
// observed one -- exactly (# T_b > T_obs) / B.
//
// Two bootstrap modes: with refit = false (default) every bootstrap
// statistic is computed under the original theta_hat; with refit = true
// the model is refitted to each bootstrap sample first. If a refit
// fails, that sample falls back to the original theta_hat and the
// failure is counted in refit_failures, keeping the denominator at B.
//
// Bootstrap sample s draws from substream_seed(seed, s) of the master
// seed, so any number of worker threads produces identical results.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "common.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "scp.hpp"
#include "simulate.hpp"
#include "types.hpp"

namespace panelcount {

struct GofResult {
  double t_stat = 0.0;
  double p_value = 0.0;
  int b_samples = 0;
  bool refit = false;
  int refit_failures = 0;
  /// Bootstrap-distribution quantiles at levels {0.50, 0.75, 0.90,
  /// 0.95, 0.99}, nearest-rank (ceil) definition.
  std::array<double, 5> bootstrap_quantiles{};
};

inline constexpr std::array<double, 5> gof_quantile_levels{0.50, 0.75, 0.90,
                                                           0.95, 0.99};

/// Marginal expected counts, e_{jl} = (a_j / zeta) Delta_{jl}; index
/// [l][j] with l = 0..k-1 the interval and j = 0..1 the event type.
inline std::vector<std::array<double, 2>> expected_counts(
    const ModelParams& theta, const ObservationSchedule& schedule) {
  theta.validate();
  schedule.validate();
  const std::vector<double> d1 = interval_increments(schedule, theta.b1);
  const std::vector<double> d2 = interval_increments(schedule, theta.b2);
  std::vector<std::array<double, 2>> e(d1.size());
  for (std::size_t l = 0; l < d1.size(); ++l) {
    e[l][0] = theta.a1 / theta.zeta * d1[l];
    e[l][1] = theta.a2 / theta.zeta * d2[l];
  }
  return e;
}

/// The dissimilarity statistic of the header comment. Nonnegative, zero
/// exactly when every observed cell equals its expectation.
inline double t_statistic(const PanelDataset& data, const ModelParams& theta) {
  data.validate();
  const std::vector<std::array<double, 2>> e =
      expected_counts(theta, data.schedule);
  const int k = data.schedule.k();
  KahanSum total;
  for (const CountVector& row : data.rows)
    for (int l = 0; l < k; ++l)
      for (int j = 0; j < 2; ++j)
        total.add(std::abs(row[static_cast<std::size_t>(2 * l + j)] -
                           e[static_cast<std::size_t>(l)][j]) /
                  e[static_cast<std::size_t>(l)][j]);
  return total.value() / (static_cast<double>(data.m()) * k);
}

/// Parametric bootstrap p-value for the dissimilarity statistic; see
/// header comment for the two modes and the determinism contract.
/// est / scp_config / cs describe the refit and are ignored when
/// refit = false.
inline GofResult bootstrap_pvalue(const PanelDataset& data,
                                  const ModelParams& theta_hat, int b,
                                  std::uint64_t seed, bool refit = false,
                                  const EstimatorSpec& est = {},
                                  const ScpConfig& scp_config = {},
                                  const ConstraintSet* cs = nullptr,
                                  int n_threads = 1) {
  data.validate();
  theta_hat.validate();
  if (b < 1)
    throw std::invalid_argument("bootstrap_pvalue: b must be >= 1");
  if (n_threads < 1)
    throw std::invalid_argument("bootstrap_pvalue: n_threads must be >= 1");

  GofResult out;
  out.t_stat = t_statistic(data, theta_hat);
  out.b_samples = b;
  out.refit = refit;

  SimConfig sim;
  sim.theta_true = theta_hat;
  sim.schedule = data.schedule;
  sim.m = data.m();
  sim.epsilon = 0.0;

  const ConstraintSet default_cs = default_constraints();
  const ConstraintSet* use_cs =
      scp_config.restricted ? (cs != nullptr ? cs : &default_cs) : nullptr;

  std::vector<double> t_boot(static_cast<std::size_t>(b));
  std::vector<unsigned char> failed(static_cast<std::size_t>(b), 0);
  auto run_one = [&](int s) {
    RngEngine rng(substream_seed(seed, static_cast<std::uint64_t>(s)));
    const std::vector<double> z = draw_frailty(sim, rng);
    const PanelDataset sample =
        draw_counts(z, theta_hat, data.schedule, rng);
    ModelParams theta_s = theta_hat;
    if (refit) {
      try {
        theta_s = scp_fit(sample, est, scp_config, use_cs).theta_hat;
      } catch (const std::exception&) {
        failed[static_cast<std::size_t>(s)] = 1;  // fall back to theta_hat
      }
    }
    t_boot[static_cast<std::size_t>(s)] = t_statistic(sample, theta_s);
  };

  const int workers = std::min(n_threads, b);
  if (workers == 1) {
    for (int s = 0; s < b; ++s) run_one(s);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (int s = next.fetch_add(1); s < b; s = next.fetch_add(1))
        run_one(s);
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  int exceed = 0;
  for (int s = 0; s < b; ++s) {
    if (t_boot[static_cast<std::size_t>(s)] > out.t_stat) ++exceed;
    if (failed[static_cast<std::size_t>(s)]) ++out.refit_failures;
  }
  out.p_value = static_cast<double>(exceed) / static_cast<double>(b);

  std::vector<double> sorted = t_boot;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t q = 0; q < gof_quantile_levels.size(); ++q) {
    // nearest-rank: smallest index r with r/b >= level
    const std::size_t r = static_cast<std::size_t>(
        std::ceil(gof_quantile_levels[q] * static_cast<double>(b)));
    out.bootstrap_quantiles[q] = sorted[std::max<std::size_t>(r, 1) - 1];
  }
  return out;
}

}  // namespace panelcount
