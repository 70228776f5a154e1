#pragma once

// Tuning-parameter selection for the minimum divergence fit.
//
// GSM (generalized score matching): for each observed count vector and
// each cell coordinate s, the probability ratios to the two neighbor
// vectors n^{(s+)} (count up) and n^{(s-)} (count down) are transformed
// through t(u) = 1/(1+u) and scored as
//
//   D_hat = (1/(m 2k)) sum_i sum_s [t+^2 + t-^2 - 2 t+],
//
// evaluated under the unnormalized model density
// log p(n) = -C_gamma(theta) + (1 + 1/gamma) f^gamma(n), whose
// normalization cancels from every ratio. The fitted gamma minimizes
// D_hat over the grid.
//
// IWJ (iterated Warwick-Jones): starting from each pilot fit, iterate
// gamma <- argmin_grid ||theta_g - theta_P||^2 + Tr(Sigma_g(theta_g))/m
// with the pilot replaced by the winner's fit each round, then take a
// majority vote over the final path entries across pilots.
//
// Both selectors draw the per-gamma fits from one shared GammaFitCache,
// so any disagreement between them is attributable to the criteria and
// never to fit variation.

#include <algorithm>
#include <bit>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "asymptotics.hpp"
#include "common.hpp"
#include "constraints.hpp"
#include "divergence.hpp"
#include "model.hpp"
#include "scp.hpp"
#include "types.hpp"

namespace panelcount {

/// Ascending grid of candidate gamma values.
struct GammaGrid {
  std::vector<double> values;

  static GammaGrid default_grid() {
    GammaGrid g;
    for (int i = 20; i <= 60; ++i) g.values.push_back(i / 100.0);
    return g;
  }

  void validate() const {
    if (values.empty())
      throw std::invalid_argument("GammaGrid: grid must be nonempty");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!(values[i] > 0.0))
        throw std::invalid_argument("GammaGrid: values must be positive");
      if (i > 0 && !(values[i] > values[i - 1]))
        throw std::invalid_argument("GammaGrid: values must be ascending");
    }
  }
};

enum class TuningMethod { gsm, iwj };

struct TuningResult {
  TuningMethod method = TuningMethod::gsm;
  double gamma_opt = 0.0;
  std::vector<double> gammas;             ///< grid values that were scored
  std::vector<double> scores;             ///< criterion value per gammas[i]
  std::vector<ModelParams> per_gamma_theta;
  std::vector<double> failed_gammas;      ///< grid values whose fit failed
  std::vector<std::vector<double>> pilot_paths;  ///< IWJ gamma path per pilot
};

namespace detail {

/// t(u) = 1/(1+u) evaluated at u = exp(x), stable for any log-ratio x:
/// x -> -inf gives 1 (ratio 0), x -> +inf gives 0 (infinite ratio).
inline double t_of_log_ratio(double x) { return 1.0 / (1.0 + std::exp(x)); }

/// f^gamma(n) through the log-pmf.
inline double f_pow_gamma(const ModelContext& ctx, std::span<const int> n,
                          double gamma) {
  return std::exp(gamma * log_pmf(ctx, n));
}

struct RatioScores {
  double t_plus = 0.0;
  double t_minus = 0.0;
};

/// Neighbor ratio scores sharing a prebuilt context; fg_n = f^gamma(n).
inline RatioScores ratio_scores_at(const ModelContext& ctx, double gamma,
                                   const CountVector& n, int s, double fg_n) {
  const double scale = 1.0 + 1.0 / gamma;
  CountVector nb = n;
  RatioScores out;
  nb[s] = n[s] + 1;
  out.t_plus = t_of_log_ratio(scale * (f_pow_gamma(ctx, nb, gamma) - fg_n));
  if (n[s] > 0) {
    nb[s] = n[s] - 1;
    out.t_minus =
        t_of_log_ratio(scale * (fg_n - f_pow_gamma(ctx, nb, gamma)));
  }
  // n_s = 0: p(n^{(s-)}) = 0, the ratio is infinite, and t(inf) = 0.
  return out;
}

}  // namespace detail

/// Log of the unnormalized GSM model density,
/// log p(n) = -C_gamma(theta) + (1 + 1/gamma) f^gamma(n).
/// Ratios between neighboring count vectors are differences of this
/// value, from which C cancels.
inline double log_unnormalized_model(const CountVector& n,
                                     const ModelParams& theta,
                                     const ObservationSchedule& schedule,
                                     const DpdConfig& cfg) {
  const double c = normalization_term(theta, schedule, cfg);
  const ModelContext ctx = make_context(theta, schedule);
  return -c + (1.0 + 1.0 / cfg.gamma) *
                  detail::f_pow_gamma(ctx, n, cfg.gamma);
}

/// Transformed neighbor probability ratios for coordinate s (0-based
/// cell index): t_plus = t(p(n^{(s+)})/p(n)), t_minus = t(p(n)/p(n^{(s-)})),
/// with t(u) = 1/(1+u) and t_minus = 0 when n_s = 0.
inline detail::RatioScores neighbor_ratio_scores(
    const CountVector& n, const ModelParams& theta,
    const ObservationSchedule& schedule, const DpdConfig& cfg, int s) {
  cfg.validate();
  const ModelContext ctx = make_context(theta, schedule);
  if (s < 0 || s >= 2 * ctx.k)
    throw std::invalid_argument(
        "neighbor_ratio_scores: coordinate out of range");
  if (static_cast<int>(n.size()) != 2 * ctx.k)
    throw DataError("neighbor_ratio_scores: count vector has wrong length");
  const double fg_n = detail::f_pow_gamma(ctx, n, cfg.gamma);
  return detail::ratio_scores_at(ctx, cfg.gamma, n, s, fg_n);
}

/// Empirical GSM objective, averaged over observations and coordinates:
/// D_hat = (1/(m 2k)) sum_i sum_s [t+^2 + t-^2 - 2 t+]. The optional
/// symmetric variant adds the -2 t- cross term for sensitivity analysis.
inline double gsm_score(const PanelDataset& data, const ModelParams& theta,
                        const DpdConfig& cfg,
                        bool symmetric_cross_term = false) {
  data.validate();
  cfg.validate();
  const ModelContext ctx = make_context(theta, data.schedule);
  const int n_cells = 2 * ctx.k;
  KahanSum total;
  for (const CountVector& n : data.rows) {
    const double fg_n = detail::f_pow_gamma(ctx, n, cfg.gamma);
    for (int s = 0; s < n_cells; ++s) {
      const detail::RatioScores t =
          detail::ratio_scores_at(ctx, cfg.gamma, n, s, fg_n);
      double term = t.t_plus * t.t_plus + t.t_minus * t.t_minus -
                    2.0 * t.t_plus;
      if (symmetric_cross_term) term -= 2.0 * t.t_minus;
      total.add(term);
    }
  }
  return total.value() / (static_cast<double>(data.m()) * n_cells);
}

/// Asymptotic mean-squared-error proxy minimized by the Warwick-Jones
/// criterion: ||theta_gamma - theta_pilot||^2 + Tr(Sigma)/m.
inline double iwj_mse(const ModelParams& theta_gamma,
                      const ModelParams& theta_pilot,
                      const AsymptoticsResult& asym, int sample_size) {
  if (sample_size < 1)
    throw std::invalid_argument("iwj_mse: sample_size must be >= 1");
  const Vec5 a = theta_gamma.as_array();
  const Vec5 b = theta_pilot.as_array();
  double sq = 0.0;
  for (int i = 0; i < n_params; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return sq + asym.sigma.trace() / static_cast<double>(sample_size);
}

/// Shared per-gamma fit (and asymptotics) cache. Both selectors read
/// from the same cache so a grid gamma is fitted exactly once, and the
/// theta compared across criteria is the identical object. Fits are
/// pure functions of (data, config, gamma), so prefetching them in
/// parallel gives bit-identical results to sequential filling.
class GammaFitCache {
 public:
  GammaFitCache(const PanelDataset& data, DpdConfig dpd_base,
                ScpConfig scp_config, const ConstraintSet* cs = nullptr)
      : data_(&data),
        dpd_base_(dpd_base),
        scp_config_(scp_config),
        default_cs_(default_constraints()),
        cs_(cs != nullptr ? cs : &default_cs_) {
    data.validate();
    dpd_base.validate();
    scp_config.validate();
  }

  const PanelDataset& data() const { return *data_; }
  const ScpConfig& config() const { return scp_config_; }

  DpdConfig dpd_config(double gamma) const {
    DpdConfig cfg = dpd_base_;
    cfg.gamma = gamma;
    return cfg;
  }

  /// Fit at one gamma, memoized on the exact bit pattern of gamma.
  /// A fit that failed earlier re-throws its recorded error.
  const FitResult& fit(double gamma) {
    const std::uint64_t key = std::bit_cast<std::uint64_t>(gamma);
    if (auto it = fits_.find(key); it != fits_.end()) return it->second;
    if (auto it = failures_.find(key); it != failures_.end())
      throw NumericalError(it->second);
    try {
      FitResult fr = run_fit(gamma);
      return fits_.emplace(key, std::move(fr)).first->second;
    } catch (const std::exception& e) {
      failures_.emplace(key, std::string(e.what()));
      throw;
    }
  }

  /// Sigma_gamma(theta_hat_gamma) with the active set taken from the
  /// fit's constraint activity, memoized like fit().
  const AsymptoticsResult& asymptotics(double gamma) {
    const std::uint64_t key = std::bit_cast<std::uint64_t>(gamma);
    if (auto it = asym_.find(key); it != asym_.end()) return it->second;
    const FitResult& fr = fit(gamma);
    const bool restricted = scp_config_.restricted;
    AsymptoticsResult res = sigma_restricted(
        fr.theta_hat, data_->schedule, dpd_config(gamma),
        restricted ? cs_ : nullptr, restricted ? fr.active : std::vector<int>{},
        static_cast<int>(data_->m()));
    return asym_.emplace(key, std::move(res)).first->second;
  }

  /// Fill the fit cache for the given gammas using n_threads workers.
  /// Failed fits are recorded (and later re-thrown by fit()) rather
  /// than aborting the batch. Results are independent of n_threads.
  void prefetch(const std::vector<double>& gammas, int n_threads = 1) {
    std::vector<double> todo;
    for (double g : gammas) {
      const std::uint64_t key = std::bit_cast<std::uint64_t>(g);
      if (fits_.count(key) == 0 && failures_.count(key) == 0)
        todo.push_back(g);
    }
    if (todo.empty()) return;
    n_threads = std::max(1, std::min<int>(n_threads,
                                          static_cast<int>(todo.size())));
    std::vector<std::optional<FitResult>> slot(todo.size());
    std::vector<std::string> error(todo.size());
    if (n_threads == 1) {
      for (std::size_t i = 0; i < todo.size(); ++i) {
        try {
          slot[i] = run_fit(todo[i]);
        } catch (const std::exception& e) {
          error[i] = e.what();
        }
      }
    } else {
      std::atomic<std::size_t> next{0};
      auto worker = [&]() {
        for (std::size_t i = next.fetch_add(1); i < todo.size();
             i = next.fetch_add(1)) {
          try {
            slot[i] = run_fit(todo[i]);
          } catch (const std::exception& e) {
            error[i] = e.what();
          }
        }
      };
      std::vector<std::thread> pool;
      for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
    }
    for (std::size_t i = 0; i < todo.size(); ++i) {
      const std::uint64_t key = std::bit_cast<std::uint64_t>(todo[i]);
      if (slot[i].has_value())
        fits_.emplace(key, std::move(*slot[i]));
      else
        failures_.emplace(key, error[i].empty()
                                   ? std::string("fit failed")
                                   : error[i]);
    }
  }

 private:
  FitResult run_fit(double gamma) const {
    EstimatorSpec est;
    est.kind = Estimator::mdpd;
    est.dpd = dpd_config(gamma);
    return scp_fit(*data_, est, scp_config_,
                   scp_config_.restricted ? cs_ : nullptr);
  }

  const PanelDataset* data_;
  DpdConfig dpd_base_;
  ScpConfig scp_config_;
  ConstraintSet default_cs_;
  const ConstraintSet* cs_;
  std::map<std::uint64_t, FitResult> fits_;
  std::map<std::uint64_t, AsymptoticsResult> asym_;
  std::map<std::uint64_t, std::string> failures_;
};

/// GSM selection: fit every grid gamma, score with gsm_score, return
/// the argmin (ties broken toward the smallest gamma). Grid values
/// whose fit fails are excluded and recorded in failed_gammas.
inline TuningResult gsm_select(GammaFitCache& cache, const GammaGrid& grid,
                               bool symmetric_cross_term = false,
                               int n_threads = 1) {
  grid.validate();
  cache.prefetch(grid.values, n_threads);
  TuningResult out;
  out.method = TuningMethod::gsm;
  for (double g : grid.values) {
    const FitResult* fr = nullptr;
    try {
      fr = &cache.fit(g);
    } catch (const std::exception&) {
      out.failed_gammas.push_back(g);
      continue;
    }
    out.gammas.push_back(g);
    out.per_gamma_theta.push_back(fr->theta_hat);
    out.scores.push_back(gsm_score(cache.data(), fr->theta_hat,
                                   cache.dpd_config(g),
                                   symmetric_cross_term));
  }
  if (out.gammas.empty())
    throw NumericalError("gsm_select: the fit failed at every grid gamma");
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.scores.size(); ++i)
    if (out.scores[i] < out.scores[best]) best = i;  // ties keep smaller g
  out.gamma_opt = out.gammas[best];
  return out;
}

inline constexpr std::array<double, 6> default_iwj_pilots{0.01, 0.2, 0.4,
                                                          0.6,  0.8, 1.0};

/// IWJ selection. Each pilot gamma seeds a path: fit the pilot, then
/// repeatedly pick argmin_grid iwj_mse(theta_g, theta_P, Sigma_g, m)
/// and promote the winner's fit to the next pilot, stopping when the
/// selection repeats (fixed point or cycle on the discrete grid) or
/// after max_iter rounds. The result is the majority vote over the
/// last consensus_k entries of every path, ties toward smaller gamma.
inline TuningResult iwj_select(
    GammaFitCache& cache, const GammaGrid& grid,
    const std::vector<double>& pilot_gammas =
        std::vector<double>(default_iwj_pilots.begin(),
                            default_iwj_pilots.end()),
    int max_iter = 10, int consensus_k = 3, int n_threads = 1) {
  grid.validate();
  if (pilot_gammas.empty())
    throw std::invalid_argument("iwj_select: pilot_gammas must be nonempty");
  if (max_iter < 1 || consensus_k < 1)
    throw std::invalid_argument(
        "iwj_select: max_iter and consensus_k must be >= 1");
  cache.prefetch(grid.values, n_threads);

  TuningResult out;
  out.method = TuningMethod::iwj;

  // Usable grid gammas (fit and asymptotics both available), with the
  // per-gamma MSE ingredients.
  std::vector<double> usable;
  for (double g : grid.values) {
    try {
      cache.fit(g);
      cache.asymptotics(g);
      usable.push_back(g);
    } catch (const std::exception&) {
      out.failed_gammas.push_back(g);
    }
  }
  if (usable.empty())
    throw NumericalError("iwj_select: the fit failed at every grid gamma");
  for (double g : usable) {
    out.gammas.push_back(g);
    out.per_gamma_theta.push_back(cache.fit(g).theta_hat);
  }

  auto argmin_mse = [&](const ModelParams& pilot) {
    double best_val = std::numeric_limits<double>::infinity();
    double best_g = usable.front();
    for (double g : usable) {
      const double val =
          iwj_mse(cache.fit(g).theta_hat, pilot, cache.asymptotics(g),
                  static_cast<int>(cache.data().m()));
      if (val < best_val) {  // strict: ties keep the smaller gamma
        best_val = val;
        best_g = g;
      }
    }
    return best_g;
  };

  for (double pilot_g : pilot_gammas) {
    std::vector<double> path;
    const ModelParams* pilot_theta = nullptr;
    try {
      pilot_theta = &cache.fit(pilot_g).theta_hat;
    } catch (const std::exception&) {
      out.pilot_paths.emplace_back();  // pilot fit failed: empty path
      continue;
    }
    ModelParams pilot = *pilot_theta;
    for (int it = 0; it < max_iter; ++it) {
      const double g = argmin_mse(pilot);
      const bool repeat =
          std::find(path.begin(), path.end(), g) != path.end();
      path.push_back(g);
      if (repeat) break;  // fixed point or cycle on the discrete grid
      pilot = cache.fit(g).theta_hat;
    }
    out.pilot_paths.push_back(std::move(path));
  }

  // Majority vote over the tail consensus_k entries of every path.
  std::map<double, int> votes;
  for (const std::vector<double>& path : out.pilot_paths) {
    const std::size_t take =
        std::min<std::size_t>(path.size(), static_cast<std::size_t>(consensus_k));
    for (std::size_t i = path.size() - take; i < path.size(); ++i)
      ++votes[path[i]];
  }
  if (votes.empty())
    throw NumericalError("iwj_select: every pilot fit failed");
  double best_g = votes.begin()->first;
  int best_n = votes.begin()->second;
  for (const auto& [g, n] : votes)  // ascending: ties keep smaller gamma
    if (n > best_n) {
      best_g = g;
      best_n = n;
    }
  out.gamma_opt = best_g;

  // Report the per-gamma MSE under the final consensus pilot for
  // inspection; the selection itself happened path-wise above.
  const ModelParams& final_pilot = cache.fit(best_g).theta_hat;
  for (double g : usable)
    out.scores.push_back(iwj_mse(cache.fit(g).theta_hat, final_pilot,
                                 cache.asymptotics(g),
                                 static_cast<int>(cache.data().m())));
  return out;
}

}  // namespace panelcount
