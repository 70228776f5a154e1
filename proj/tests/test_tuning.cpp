#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "panelcount/tuning.hpp"
#include "oracles.hpp"

using namespace panelcount;

namespace {

const ObservationSchedule kSchedule{{0.01, 0.35, 0.69, 1.12}};
const ModelParams kThetaTrue{4.5, 0.9, 0.5, 0.6, 0.2};

PanelDataset tuning_dataset(int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PanelDataset data;
  data.schedule = kSchedule;
  data.rows = oracles::draw_panel_rows(rng, m, kThetaTrue.as_array(),
                                       kSchedule.taus);
  return data;
}

DpdConfig config_with_gamma(double gamma) {
  DpdConfig cfg;
  cfg.gamma = gamma;
  return cfg;
}

GammaGrid small_grid() {
  GammaGrid g;
  g.values = {0.2, 0.3, 0.4, 0.5, 0.6};
  return g;
}

}  // namespace

TEST_CASE("gamma grid validation and default") {
  const GammaGrid def = GammaGrid::default_grid();
  def.validate();
  REQUIRE(def.values.size() == 41);
  REQUIRE(def.values.front() == 0.20);
  REQUIRE(def.values.back() == 0.60);

  GammaGrid bad;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.values = {0.3, 0.2};
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.values = {0.0, 0.2};
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("log unnormalized model: normalization cancels from ratios") {
  const DpdConfig cfg = config_with_gamma(0.35);
  const ModelContext ctx = make_context(kThetaTrue, kSchedule);
  const double scale = 1.0 + 1.0 / cfg.gamma;

  const std::vector<CountVector> points = {
      {0, 0, 0, 0, 0, 0}, {1, 0, 0, 0, 0, 0}, {2, 1, 0, 1, 0, 0}};
  for (const CountVector& n : points) {
    CountVector np = n;
    np[2] += 1;
    const double lhs = log_unnormalized_model(np, kThetaTrue, kSchedule, cfg) -
                       log_unnormalized_model(n, kThetaTrue, kSchedule, cfg);
    const double rhs =
        scale * (std::exp(cfg.gamma * log_pmf(ctx, np)) -
                 std::exp(cfg.gamma * log_pmf(ctx, n)));
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-10).margin(1e-12));
    REQUIRE(std::isfinite(log_unnormalized_model(n, kThetaTrue, kSchedule,
                                                 cfg)));
  }
}

TEST_CASE("t transform of log ratios") {
  REQUIRE(detail::t_of_log_ratio(0.0) == 0.5);
  REQUIRE(detail::t_of_log_ratio(-std::numeric_limits<double>::infinity()) ==
          1.0);
  REQUIRE(detail::t_of_log_ratio(std::numeric_limits<double>::infinity()) ==
          0.0);
  REQUIRE(detail::t_of_log_ratio(800.0) == 0.0);  // overflow-safe
  REQUIRE(detail::t_of_log_ratio(-800.0) == 1.0);
  REQUIRE(detail::t_of_log_ratio(-1.0) > detail::t_of_log_ratio(1.0));
}

TEST_CASE("neighbor ratio scores") {
  const DpdConfig cfg = config_with_gamma(0.4);

  SECTION("boundary rule: n_s = 0 forces t_minus = 0") {
    const CountVector n{0, 1, 0, 0, 2, 0};
    for (int s : {0, 2, 3, 5}) {
      const auto t = neighbor_ratio_scores(n, kThetaTrue, kSchedule, cfg, s);
      REQUIRE(t.t_minus == 0.0);
      REQUIRE(t.t_plus > 0.0);
      REQUIRE(t.t_plus < 1.0);
    }
  }

  SECTION("agreement with a direct pmf-ratio computation") {
    const ModelContext ctx = make_context(kThetaTrue, kSchedule);
    const double scale = 1.0 + 1.0 / cfg.gamma;
    const CountVector n{1, 0, 2, 0, 0, 1};
    for (int s = 0; s < 6; ++s) {
      const auto t = neighbor_ratio_scores(n, kThetaTrue, kSchedule, cfg, s);
      CountVector nb = n;
      nb[s] += 1;
      const double fg_up = std::pow(std::exp(log_pmf(ctx, nb)), cfg.gamma);
      const double fg_n = std::pow(std::exp(log_pmf(ctx, n)), cfg.gamma);
      const double direct_plus = 1.0 / (1.0 + std::exp(scale * (fg_up - fg_n)));
      REQUIRE(t.t_plus == Catch::Approx(direct_plus).epsilon(1e-10));
      if (n[s] > 0) {
        nb[s] = n[s] - 1;
        const double fg_dn = std::pow(std::exp(log_pmf(ctx, nb)), cfg.gamma);
        const double direct_minus =
            1.0 / (1.0 + std::exp(scale * (fg_n - fg_dn)));
        REQUIRE(t.t_minus == Catch::Approx(direct_minus).epsilon(1e-10));
      }
    }
  }

  SECTION("argument validation") {
    const CountVector n{0, 0, 0, 0, 0, 0};
    REQUIRE_THROWS_AS(
        neighbor_ratio_scores(n, kThetaTrue, kSchedule, cfg, -1),
        std::invalid_argument);
    REQUIRE_THROWS_AS(neighbor_ratio_scores(n, kThetaTrue, kSchedule, cfg, 6),
                      std::invalid_argument);
  }
}

TEST_CASE("gsm score agrees with a reassembly from neighbor scores") {
  const PanelDataset data = tuning_dataset(25, 97531);
  const DpdConfig cfg = config_with_gamma(0.3);

  for (bool symmetric : {false, true}) {
    const double score = gsm_score(data, kThetaTrue, cfg, symmetric);
    double manual = 0.0;
    for (const CountVector& n : data.rows) {
      for (int s = 0; s < 6; ++s) {
        const auto t = neighbor_ratio_scores(n, kThetaTrue, kSchedule, cfg, s);
        manual += t.t_plus * t.t_plus + t.t_minus * t.t_minus -
                  2.0 * t.t_plus - (symmetric ? 2.0 * t.t_minus : 0.0);
      }
    }
    manual /= 25.0 * 6.0;
    CAPTURE(symmetric);
    REQUIRE(score == Catch::Approx(manual).epsilon(1e-13));
    // Each bracket term lies in [-2, 2], so the average does too.
    REQUIRE(std::abs(score) <= 2.0);
  }
}

TEST_CASE("iwj mse formula") {
  AsymptoticsResult asym;
  asym.sigma = Matrix5::Zero();
  for (int i = 0; i < n_params; ++i) asym.sigma(i, i) = i + 1.0;  // trace 15

  const ModelParams theta_g{4.75, 0.5, 0.4, 0.75, 0.1};
  const ModelParams theta_p{4.5, 0.75, 0.4, 0.5, 0.1};
  // Squared distance: 3 * 0.25^2 = 0.1875 (exact in binary).
  REQUIRE(iwj_mse(theta_g, theta_p, asym, 50) == 0.1875 + 15.0 / 50.0);
  REQUIRE(iwj_mse(theta_p, theta_p, asym, 50) == 15.0 / 50.0);
  REQUIRE(iwj_mse(theta_g, theta_p, asym, 100000000) ==
          Catch::Approx(0.1875).margin(1e-6));
  REQUIRE_THROWS_AS(iwj_mse(theta_g, theta_p, asym, 0), std::invalid_argument);
}

TEST_CASE("fit cache determinism, identity, and parallel prefetch") {
  const PanelDataset data = tuning_dataset(60, 246810);
  ScpConfig cfg;
  cfg.restricted = true;

  GammaFitCache cache(data, DpdConfig{}, cfg);
  const FitResult& first = cache.fit(0.3);
  const FitResult& again = cache.fit(0.3);
  REQUIRE(&first == &again);  // single fit per gamma, shared object

  const AsymptoticsResult& asym1 = cache.asymptotics(0.3);
  const AsymptoticsResult& asym2 = cache.asymptotics(0.3);
  REQUIRE(&asym1 == &asym2);

  // Parallel prefetch must give bit-identical fits to sequential ones.
  const std::vector<double> gammas = {0.2, 0.3, 0.4, 0.5};
  GammaFitCache seq(data, DpdConfig{}, cfg);
  seq.prefetch(gammas, 1);
  GammaFitCache par(data, DpdConfig{}, cfg);
  par.prefetch(gammas, 4);
  for (double g : gammas) {
    const FitResult& a = seq.fit(g);
    const FitResult& b = par.fit(g);
    REQUIRE(a.theta_hat.as_array() == b.theta_hat.as_array());
    REQUIRE(a.objective == b.objective);
    REQUIRE(a.iterations == b.iterations);
  }
}

TEST_CASE("gsm selection") {
  const PanelDataset data = tuning_dataset(100, 1122334455);
  ScpConfig cfg;
  cfg.restricted = true;

  SECTION("grid of one value returns it") {
    GammaFitCache cache(data, DpdConfig{}, cfg);
    GammaGrid one;
    one.values = {0.37};
    const TuningResult res = gsm_select(cache, one);
    REQUIRE(res.gamma_opt == 0.37);
    REQUIRE(res.gammas.size() == 1);
    REQUIRE(res.scores.size() == 1);
    REQUIRE(std::isfinite(res.scores[0]));
  }

  SECTION("argmin consistency, shift invariance, determinism") {
    GammaFitCache cache(data, DpdConfig{}, cfg);
    const TuningResult res = gsm_select(cache, small_grid());
    REQUIRE(res.method == TuningMethod::gsm);
    REQUIRE(res.failed_gammas.empty());
    REQUIRE(res.gammas.size() == 5);
    REQUIRE(res.per_gamma_theta.size() == 5);

    // gamma_opt is the first grid value attaining the minimal score,
    // and shifting all scores by a constant cannot change the argmin.
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.scores.size(); ++i)
      if (res.scores[i] < res.scores[best]) best = i;
    REQUIRE(res.gamma_opt == res.gammas[best]);
    std::size_t best_shifted = 0;
    for (std::size_t i = 1; i < res.scores.size(); ++i)
      if (res.scores[i] + 7.25 < res.scores[best_shifted] + 7.25)
        best_shifted = i;
    REQUIRE(best_shifted == best);

    // Restricted fits satisfy the cone at every grid gamma.
    for (const ModelParams& th : res.per_gamma_theta) {
      REQUIRE(th.a1 >= th.a2 - 1e-10);
      REQUIRE(th.b1 >= th.b2 - 1e-10);
    }

    GammaFitCache cache2(data, DpdConfig{}, cfg);
    const TuningResult res2 = gsm_select(cache2, small_grid());
    REQUIRE(res2.gamma_opt == res.gamma_opt);
    for (std::size_t i = 0; i < res.scores.size(); ++i)
      REQUIRE(res2.scores[i] == res.scores[i]);
  }

  SECTION("all fits failing propagates a numerical error") {
    ScpConfig bad = cfg;
    bad.theta_init = Vec5{4.6, 0.3, 0.4, 0.9, 0.1};  // a1 < a2: infeasible
    GammaFitCache cache(data, DpdConfig{}, bad);
    GammaGrid two;
    two.values = {0.3, 0.5};
    REQUIRE_THROWS_AS(gsm_select(cache, two), NumericalError);
  }
}

TEST_CASE("iwj selection") {
  const PanelDataset data = tuning_dataset(100, 9988776655);
  ScpConfig cfg;
  cfg.restricted = true;

  GammaFitCache cache(data, DpdConfig{}, cfg);
  const std::vector<double> pilots = {0.2, 0.6};
  const TuningResult res = iwj_select(cache, small_grid(), pilots, 10, 3);

  REQUIRE(res.method == TuningMethod::iwj);
  REQUIRE(res.pilot_paths.size() == pilots.size());
  REQUIRE(std::find(res.gammas.begin(), res.gammas.end(), res.gamma_opt) !=
          res.gammas.end());
  for (const auto& path : res.pilot_paths) {
    REQUIRE(!path.empty());
    REQUIRE(path.size() <= 10);
    for (double g : path)
      REQUIRE(std::find(res.gammas.begin(), res.gammas.end(), g) !=
              res.gammas.end());
  }

  // Recompute the consensus vote from the reported paths: last up-to-3
  // entries of each path, majority with ties toward smaller gamma.
  std::map<double, int> votes;
  for (const auto& path : res.pilot_paths) {
    const std::size_t take = std::min<std::size_t>(path.size(), 3);
    for (std::size_t i = path.size() - take; i < path.size(); ++i)
      ++votes[path[i]];
  }
  double expect = votes.begin()->first;
  int expect_n = votes.begin()->second;
  for (const auto& [g, n] : votes)
    if (n > expect_n) {
      expect = g;
      expect_n = n;
    }
  REQUIRE(res.gamma_opt == expect);

  // Determinism across a fresh cache.
  GammaFitCache cache2(data, DpdConfig{}, cfg);
  const TuningResult res2 = iwj_select(cache2, small_grid(), pilots, 10, 3);
  REQUIRE(res2.gamma_opt == res.gamma_opt);
  REQUIRE(res2.pilot_paths == res.pilot_paths);

  // Shared cache between selectors: identical per-gamma estimates.
  const TuningResult gsm_res = gsm_select(cache, small_grid());
  for (std::size_t i = 0; i < res.gammas.size(); ++i) {
    REQUIRE(gsm_res.gammas[i] == res.gammas[i]);
    REQUIRE(gsm_res.per_gamma_theta[i].as_array() ==
            res.per_gamma_theta[i].as_array());
  }

  REQUIRE_THROWS_AS(iwj_select(cache, small_grid(), {}, 10, 3),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(iwj_select(cache, small_grid(), pilots, 0, 3),
                    std::invalid_argument);
}
