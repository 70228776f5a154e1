#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "panelcount/constraints.hpp"
#include "panelcount/scp.hpp"
#include "oracles.hpp"

using namespace panelcount;

namespace {

const ObservationSchedule kSchedule{{0.01, 0.35, 0.69, 1.12}};
const ModelParams kThetaTrue{4.5, 0.9, 0.5, 0.6, 0.2};

PanelDataset simulated_dataset(int m, const ModelParams& theta,
                               unsigned long long seed) {
  std::mt19937_64 rng(seed);
  return PanelDataset{
      kSchedule,
      oracles::draw_panel_rows(rng, m, theta.as_array(), kSchedule.taus)};
}

/// Refine a fit over a schedule of shrinking trust radii, warm-starting
/// each stage at the previous result.
FitResult staged_fit(const PanelDataset& data, const EstimatorSpec& est,
                     ScpConfig cfg, const std::vector<double>& radii,
                     const std::vector<int>& iters) {
  FitResult fit;
  for (std::size_t s = 0; s < radii.size(); ++s) {
    cfg.rho.fill(radii[s]);
    cfg.max_outer = iters[s];
    fit = scp_fit(data, est, cfg);
    cfg.theta_init = fit.theta_hat.as_array();
  }
  return fit;
}

}  // namespace

TEST_CASE("linearize reproduces the objective exactly at the expansion point") {
  const PanelDataset data = simulated_dataset(50, kThetaTrue, 31);
  DpdConfig cfg;
  cfg.gamma = 0.3;
  DpdProblem problem(data, cfg);

  const Evaluation lin = linearize(problem, kThetaTrue);
  const Evaluation direct = dpd_evaluate(data, kThetaTrue, cfg);
  REQUIRE(lin.value == direct.value);
  for (int i = 0; i < n_params; ++i)
    REQUIRE(lin.gradient[i] == direct.gradient[i]);

  // The affine model decreases at rate ||grad||^2 along -grad.
  double g2 = 0.0;
  for (double gi : lin.gradient) g2 += gi * gi;
  const double t = 0.01;
  double predicted = lin.value;
  for (int i = 0; i < n_params; ++i)
    predicted += lin.gradient[i] * (-t * lin.gradient[i]);
  REQUIRE(predicted == Catch::Approx(lin.value - t * g2).epsilon(1e-12));
}

TEST_CASE("scp config validation") {
  ScpConfig cfg;
  SECTION("nonpositive radius") {
    cfg.rho[1] = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("nonpositive lower bound") {
    cfg.lower_bounds[0] = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("start below lower bound") {
    cfg.theta_init[4] = 1e-6;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("bad iteration budget") {
    cfg.max_outer = 0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("bad step tolerance") {
    cfg.step_tol = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SECTION("defaults are valid") { REQUIRE_NOTHROW(cfg.validate()); }
}

TEST_CASE("default trust radii rescale with the starting point") {
  const Vec5 base = default_trust_radii(default_theta_init);
  for (int i = 0; i < n_params; ++i)
    REQUIRE(base[i] == reference_trust_radii[i]);

  Vec5 big = default_theta_init;
  big[0] = 46.0;  // ||theta||_inf / 5 = 9.2
  const Vec5 scaled = default_trust_radii(big);
  for (int i = 0; i < n_params; ++i)
    REQUIRE(scaled[i] == Catch::Approx(reference_trust_radii[i] * 9.2));
}

TEST_CASE("infeasible restricted start is rejected") {
  const PanelDataset data = simulated_dataset(30, kThetaTrue, 7);
  EstimatorSpec est;
  est.dpd.gamma = 0.5;
  ScpConfig cfg;
  cfg.restricted = true;
  cfg.theta_init = {4.6, 0.4, 0.4, 0.8, 0.1};  // a2 > a1
  REQUIRE_THROWS_AS(scp_fit(data, est, cfg), InfeasibleError);
}

TEST_CASE("boundary start stays feasible at every iterate") {
  const PanelDataset data = simulated_dataset(80, kThetaTrue, 99);
  EstimatorSpec est;
  est.dpd.gamma = 0.2;
  ScpConfig cfg;
  cfg.restricted = true;
  cfg.theta_init = {4.6, 0.7, 0.3, 0.7, 0.3};  // both faces active
  cfg.max_outer = 10;

  const FitResult fit = scp_fit(data, est, cfg);
  const ConstraintSet cs = default_constraints();
  for (const auto& [theta, value] : fit.trace) {
    const Eigen::VectorXd h =
        evaluate_h(cs, ModelParams::from_array(theta));
    REQUIRE(h.minCoeff() >= -1e-10);
    REQUIRE(std::isfinite(value));
  }
  // Restriction satisfied essentially exactly at the fit.
  REQUIRE(fit.theta_hat.a1 - fit.theta_hat.a2 >= -1e-10);
  REQUIRE(fit.theta_hat.b1 - fit.theta_hat.b2 >= -1e-10);
}

TEST_CASE("fit result bookkeeping invariants") {
  const PanelDataset data = simulated_dataset(60, kThetaTrue, 123);
  EstimatorSpec est;
  est.dpd.gamma = 0.4;
  ScpConfig cfg;
  cfg.max_outer = 5;

  SECTION("unrestricted") {
    const FitResult fit = scp_fit(data, est, cfg);
    REQUIRE(fit.iterations <= cfg.max_outer);
    if (!fit.converged) REQUIRE(fit.iterations == cfg.max_outer);
    REQUIRE(fit.trace.size() == static_cast<std::size_t>(fit.iterations) + 1);
    REQUIRE(fit.lambda_hat.size() == 0);
    REQUIRE(fit.active.empty());
    REQUIRE(fit.trace.front().first == cfg.theta_init);
    REQUIRE(fit.trace.back().first == fit.theta_hat.as_array());
    REQUIRE(fit.trace.back().second == fit.objective);
    // Objective is re-evaluated at theta_hat.
    const double direct = dpd_objective(data, fit.theta_hat, est.dpd);
    REQUIRE(fit.objective == direct);
  }

  SECTION("restricted") {
    cfg.restricted = true;
    const FitResult fit = scp_fit(data, est, cfg);
    REQUIRE(fit.lambda_hat.size() == 2);
    REQUIRE(fit.lambda_hat.minCoeff() >= 0.0);
    const ConstraintSet cs = default_constraints();
    REQUIRE(evaluate_h(cs, fit.theta_hat).minCoeff() >= -1e-10);
  }

  SECTION("explicit constraint set ignored when unrestricted") {
    const ConstraintSet cs = default_constraints();
    const FitResult with = scp_fit(data, est, cfg, &cs);
    const FitResult without = scp_fit(data, est, cfg, nullptr);
    REQUIRE(with.theta_hat.as_array() == without.theta_hat.as_array());
    REQUIRE(with.objective == without.objective);
  }
}

TEST_CASE("identical inputs give bit-identical fits") {
  const PanelDataset data = simulated_dataset(60, kThetaTrue, 5150);
  EstimatorSpec est;
  est.dpd.gamma = 0.25;
  ScpConfig cfg;
  cfg.restricted = true;
  cfg.max_outer = 4;

  const FitResult a = scp_fit(data, est, cfg);
  const FitResult b = scp_fit(data, est, cfg);
  REQUIRE(a.theta_hat.as_array() == b.theta_hat.as_array());
  REQUIRE(a.objective == b.objective);
  REQUIRE(a.iterations == b.iterations);
  REQUIRE(a.lambda_hat.size() == b.lambda_hat.size());
  REQUIRE((a.lambda_hat.array() == b.lambda_hat.array()).all());
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    REQUIRE(a.trace[i].first == b.trace[i].first);
    REQUIRE(a.trace[i].second == b.trace[i].second);
  }
}

TEST_CASE("objective descends while the trust region is in its walking phase") {
  const PanelDataset data = simulated_dataset(100, kThetaTrue, 808);
  EstimatorSpec est;
  est.dpd.gamma = 0.3;
  ScpConfig cfg;
  cfg.theta_init = {4.2, 0.7, 0.35, 0.45, 0.12};
  cfg.rho.fill(0.02);
  cfg.max_outer = 10;

  const FitResult fit = scp_fit(data, est, cfg);
  CAPTURE(fit.trace);
  REQUIRE(fit.descent_violations == 0);
  REQUIRE(fit.trace.back().second < fit.trace.front().second);
}

TEST_CASE("likelihood fit matches a small-gamma divergence fit") {
  const PanelDataset data = simulated_dataset(500, kThetaTrue, 20260819);

  ScpConfig cfg;  // unrestricted
  const std::vector<double> radii{0.05, 0.01, 2e-3, 4e-4};
  const std::vector<int> iters{60, 100, 150, 150};

  EstimatorSpec mle;
  mle.kind = Estimator::mle;
  const FitResult fit_mle = staged_fit(data, mle, cfg, radii, iters);

  EstimatorSpec tiny;
  tiny.kind = Estimator::mdpd;
  tiny.dpd.gamma = 0.01;
  const FitResult fit_tiny = staged_fit(data, tiny, cfg, radii, iters);

  CAPTURE(fit_mle.theta_hat.as_array(), fit_tiny.theta_hat.as_array());
  const Vec5 a = fit_mle.theta_hat.as_array();
  const Vec5 b = fit_tiny.theta_hat.as_array();
  for (int i = 0; i < n_params; ++i)
    REQUIRE(std::abs(a[i] - b[i]) < 0.05);

  // Optimizer sanity: the fitted likelihood beats the generator's.
  const NllProblem nll(data);
  REQUIRE(fit_mle.objective <= nll.evaluate(kThetaTrue).value);
}

TEST_CASE("restricted fits certify their KKT conditions") {
  const ModelParams truth{4.5, 0.75, 0.5, 0.75, 0.2};
  const PanelDataset data = simulated_dataset(120, truth, 4242);

  EstimatorSpec est;
  est.dpd.gamma = 0.2;
  ScpConfig cfg;
  cfg.restricted = true;
  cfg.theta_init = truth.as_array();

  const FitResult fit = staged_fit(data, est, cfg, {0.05, 0.01, 2e-3, 4e-4},
                                   {60, 100, 150, 150});

  const ConstraintSet cs = default_constraints();
  const KktResidual res =
      kkt_residual(data, fit.theta_hat, fit.lambda_hat, est.dpd, cs);
  CAPTURE(fit.theta_hat.as_array(), fit.lambda_hat.transpose(),
          res.stationarity.transpose());
  REQUIRE(res.certified(1e-3, 1e-8, 1e-6, 0.0));
}

TEST_CASE("non-convergence under the default budget is reported, not thrown") {
  const PanelDataset data = simulated_dataset(100, kThetaTrue, 11);
  EstimatorSpec est;
  est.dpd.gamma = 0.2;
  ScpConfig cfg;  // defaults: max_outer = 10, paper radii
  cfg.restricted = true;

  FitResult fit;
  REQUIRE_NOTHROW(fit = scp_fit(data, est, cfg));
  REQUIRE(fit.iterations == 10);
  // The answer is still a valid feasible point with a finite objective.
  REQUIRE(std::isfinite(fit.objective));
  const ConstraintSet cs = default_constraints();
  REQUIRE(evaluate_h(cs, fit.theta_hat).minCoeff() >= -1e-10);
}
