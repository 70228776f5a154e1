#pragma once

// Data generation under the frailty model, with optional inverse-Gaussian
// contamination of the frailty distribution, plus the Monte Carlo
// replication driver producing per-parameter mean / bias / MSE tables.
//
// Frailty mixture: of m subjects, floor((1-epsilon) m) receive
// Exponential(rate zeta) frailties (the model's own law, mean 1/zeta)
// and the remaining m - floor((1-epsilon) m) receive Inverse-Gaussian
// frailties with mean zeta and shape zeta -- heavy right-shifted values
// (mean zeta instead of 1/zeta) that act as outlying subjects. The two
// blocks are then shuffled once. When the contaminant count is zero the
// generator emits exactly the pure exponential stream: no shuffle, no
// extra engine consumption, no branch perturbation.
//
// The contaminant count uses the truncated double product floor((1 -
// epsilon) * m), so e.g. epsilon = 0.006 at m = 100 contaminates exactly
// one subject.
//
// Replications are deterministic given the master seed: replication r
// uses an engine seeded with substream_seed(seed, r), work may be
// claimed by any number of threads, and the reduction to the table is a
// sequential pass in replication order afterwards, so tables are
// bit-identical across thread counts.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "common.hpp"
#include "constraints.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "scp.hpp"
#include "types.hpp"

namespace panelcount {

struct SimConfig {
  ModelParams theta_true;
  ObservationSchedule schedule;
  int m = 100;
  double epsilon = 0.0;  ///< contamination proportion in [0, 1)
  std::uint64_t seed = 0;

  void validate() const {
    theta_true.validate();
    schedule.validate();
    if (m < 1) throw std::invalid_argument("SimConfig: m must be >= 1");
    if (!(epsilon >= 0.0) || !(epsilon < 1.0))
      throw std::invalid_argument("SimConfig: epsilon must lie in [0, 1)");
  }
};

/// Number of contaminated subjects: m - floor((1 - epsilon) * m), the
/// truncated double-precision product.
inline int contaminant_count(double epsilon, int m) {
  return m - static_cast<int>((1.0 - epsilon) * static_cast<double>(m));
}

/// Frailty draws: floor((1-eps) m) Exponential(rate zeta), the remainder
/// Inverse-Gaussian(mean zeta, shape zeta), then one shuffle (only when
/// the contaminant block is nonempty; see header comment).
inline std::vector<double> draw_frailty(const SimConfig& cfg, RngEngine& rng) {
  cfg.validate();
  const int n_ig = contaminant_count(cfg.epsilon, cfg.m);
  const int n_exp = cfg.m - n_ig;
  std::vector<double> z;
  z.reserve(static_cast<std::size_t>(cfg.m));
  for (int i = 0; i < n_exp; ++i)
    z.push_back(exponential_rate(rng, cfg.theta_true.zeta));
  for (int i = 0; i < n_ig; ++i)
    z.push_back(
        inverse_gaussian(rng, cfg.theta_true.zeta, cfg.theta_true.zeta));
  if (n_ig > 0) shuffle_in_place(rng, z);
  return z;
}

/// Cell counts given frailties: N_{jl} | z ~ Poisson(z a_j Delta_{jl}),
/// independent across cells and subjects; rows in the dataset's
/// interval-major, event-minor layout, subjects drawn in order.
inline PanelDataset draw_counts(const std::vector<double>& z,
                                const ModelParams& theta,
                                const ObservationSchedule& schedule,
                                RngEngine& rng) {
  theta.validate();
  schedule.validate();
  if (z.empty())
    throw std::invalid_argument("draw_counts: need at least one frailty");
  for (double zi : z)
    if (!(zi >= 0.0) || !std::isfinite(zi))
      throw std::invalid_argument(
          "draw_counts: frailties must be finite and nonnegative");

  const int k = schedule.k();
  const std::vector<double> d1 = interval_increments(schedule, theta.b1);
  const std::vector<double> d2 = interval_increments(schedule, theta.b2);
  std::vector<double> cell_rate(static_cast<std::size_t>(2 * k));
  for (int l = 0; l < k; ++l) {
    cell_rate[2 * l] = theta.a1 * d1[l];
    cell_rate[2 * l + 1] = theta.a2 * d2[l];
  }

  PanelDataset data;
  data.schedule = schedule;
  data.rows.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    CountVector& row = data.rows[i];
    row.resize(cell_rate.size());
    for (std::size_t c = 0; c < cell_rate.size(); ++c)
      row[c] = poisson(rng, z[i] * cell_rate[c]);
  }
  return data;
}

/// One dataset from a config: frailties first, then counts, on a fresh
/// engine seeded with cfg.seed.
inline PanelDataset simulate_dataset(const SimConfig& cfg) {
  RngEngine rng(cfg.seed);
  const std::vector<double> z = draw_frailty(cfg, rng);
  return draw_counts(z, cfg.theta_true, cfg.schedule, rng);
}

/// Per-parameter summary over successful replications.
struct ReplicationTable {
  Vec5 mean{};  ///< average estimate
  Vec5 bias{};  ///< mean - theta_true
  Vec5 mse{};   ///< average squared deviation from theta_true
  int n_reps = 0;
  int n_failed = 0;
  std::vector<int> failed_reps;  ///< replication indices whose fit failed
};

/// Monte Carlo replication driver: for r = 0..n_reps-1, generate a
/// dataset from substream r of cfg.seed, fit it with the given estimator
/// and solver configuration, and accumulate mean / bias / MSE against
/// cfg.theta_true. Failed fits are excluded and recorded. Results are
/// bit-identical for any n_threads.
inline ReplicationTable run_replications(const SimConfig& cfg, int n_reps,
                                         const EstimatorSpec& est,
                                         const ScpConfig& scp_config = {},
                                         const ConstraintSet* cs = nullptr,
                                         int n_threads = 1) {
  cfg.validate();
  if (est.kind == Estimator::mdpd) est.dpd.validate();
  scp_config.validate();
  if (n_reps < 1)
    throw std::invalid_argument("run_replications: n_reps must be >= 1");
  if (n_threads < 1)
    throw std::invalid_argument("run_replications: n_threads must be >= 1");

  const ConstraintSet default_cs = default_constraints();
  const ConstraintSet* use_cs =
      scp_config.restricted ? (cs != nullptr ? cs : &default_cs) : nullptr;

  std::vector<std::optional<Vec5>> estimates(
      static_cast<std::size_t>(n_reps));
  auto run_one = [&](int r) {
    RngEngine rng(substream_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    const std::vector<double> z = draw_frailty(cfg, rng);
    const PanelDataset data =
        draw_counts(z, cfg.theta_true, cfg.schedule, rng);
    try {
      estimates[static_cast<std::size_t>(r)] =
          scp_fit(data, est, scp_config, use_cs).theta_hat.as_array();
    } catch (const std::exception&) {
      // recorded as a failure below
    }
  };

  const int workers = std::min(n_threads, n_reps);
  if (workers == 1) {
    for (int r = 0; r < n_reps; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (int r = next.fetch_add(1); r < n_reps; r = next.fetch_add(1))
        run_one(r);
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  ReplicationTable table;
  table.n_reps = n_reps;
  const Vec5 truth = cfg.theta_true.as_array();
  KahanSumArray<n_params> sum_theta;
  KahanSumArray<n_params> sum_sq;
  int n_ok = 0;
  for (int r = 0; r < n_reps; ++r) {
    const std::optional<Vec5>& th = estimates[static_cast<std::size_t>(r)];
    if (!th.has_value()) {
      ++table.n_failed;
      table.failed_reps.push_back(r);
      continue;
    }
    ++n_ok;
    sum_theta.add(*th);
    Vec5 sq;
    for (int i = 0; i < n_params; ++i)
      sq[i] = ((*th)[i] - truth[i]) * ((*th)[i] - truth[i]);
    sum_sq.add(sq);
  }
  if (n_ok == 0)
    throw NumericalError("run_replications: every replication's fit failed");
  for (int i = 0; i < n_params; ++i) {
    table.mean[i] = sum_theta.value()[i] / n_ok;
    table.bias[i] = table.mean[i] - truth[i];
    table.mse[i] = sum_sq.value()[i] / n_ok;
  }
  return table;
}

}  // namespace panelcount
