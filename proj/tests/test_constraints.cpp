#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "panelcount/constraints.hpp"
#include "panelcount/divergence.hpp"
#include "panelcount/scp.hpp"
#include "oracles.hpp"

using namespace panelcount;

namespace {

const ObservationSchedule kSchedule{{0.01, 0.35, 0.69, 1.12}};
const ModelParams kThetaRef{4.5, 0.9, 0.5, 0.6, 0.2};

PanelDataset simulated_dataset(int m, const ModelParams& theta,
                               unsigned long long seed) {
  std::mt19937_64 rng(seed);
  PanelDataset data{kSchedule, oracles::draw_panel_rows(
                                   rng, m, theta.as_array(), kSchedule.taus)};
  return data;
}

}  // namespace

TEST_CASE("default constraint set encodes a1 >= a2 and b1 >= b2") {
  const ConstraintSet cs = default_constraints();
  REQUIRE(cs.rows() == 2);

  const Eigen::VectorXd h = evaluate_h(cs, kThetaRef);
  REQUIRE(h(0) == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(h(1) == Catch::Approx(0.3).margin(1e-15));

  const ModelParams equal_a{4.5, 0.7, 0.5, 0.7, 0.2};
  REQUIRE(evaluate_h(cs, equal_a)(0) == 0.0);

  // H = A' has the constraint gradients as columns.
  const Eigen::MatrixXd hj = cs.h_jacobian();
  REQUIRE(hj.rows() == 5);
  REQUIRE(hj.cols() == 2);
  REQUIRE(hj(1, 0) == 1.0);
  REQUIRE(hj(3, 0) == -1.0);
  REQUIRE(hj(2, 1) == 1.0);
  REQUIRE(hj(4, 1) == -1.0);
}

TEST_CASE("evaluate_h is exactly linear") {
  const ConstraintSet cs = default_constraints();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(0.05, 3.0);
  for (int rep = 0; rep < 25; ++rep) {
    Vec5 v{};
    for (double& c : v) c = unif(rng);
    const ModelParams theta = ModelParams::from_array(v);
    Vec5 v2 = v;
    for (double& c : v2) c *= 2.0;
    const Eigen::VectorXd h1 = evaluate_h(cs, theta);
    const Eigen::VectorXd h2 = evaluate_h(cs, ModelParams::from_array(v2));
    for (int i = 0; i < 2; ++i) REQUIRE(h2(i) == 2.0 * h1(i));
  }
}

TEST_CASE("finite differences of h reproduce the constraint matrix") {
  Eigen::MatrixXd rows(3, 5);
  rows << 0, 1, 0, -1, 0,
          0, 0, 1, 0, -1,
          1, -0.5, 0.25, 2, -3;
  const ConstraintSet cs(rows);
  const Vec5 at = kThetaRef.as_array();
  const double step = 1e-3;
  for (int i = 0; i < n_params; ++i) {
    Vec5 up = at, dn = at;
    up[i] += step;
    dn[i] -= step;
    const Eigen::VectorXd fd =
        (evaluate_h(cs, ModelParams::from_array(up)) -
         evaluate_h(cs, ModelParams::from_array(dn))) /
        (2.0 * step);
    for (int r = 0; r < cs.rows(); ++r)
      REQUIRE(fd(r) == Catch::Approx(cs.a(r, i)).margin(1e-10));
  }
}

TEST_CASE("constraint set construction is validated") {
  // Too many rows (r must stay below the parameter count).
  REQUIRE_THROWS_AS(ConstraintSet(Eigen::MatrixXd::Identity(5, 5)),
                    std::invalid_argument);
  // Wrong column count.
  REQUIRE_THROWS_AS(ConstraintSet(Eigen::MatrixXd::Ones(1, 4)),
                    std::invalid_argument);
  // Rank-deficient rows.
  Eigen::MatrixXd dep(2, 5);
  dep << 0, 1, 0, -1, 0,
         0, 2, 0, -2, 0;
  REQUIRE_THROWS_AS(ConstraintSet(dep), std::invalid_argument);
  // A full-rank custom set is accepted.
  Eigen::MatrixXd ok(4, 5);
  ok << 1, 0, 0, 0, 0,
        0, 1, 0, 0, 0,
        0, 0, 1, 0, 0,
        0, 0, 0, 1, -1;
  REQUIRE_NOTHROW(ConstraintSet(ok));
  // Zero rows rejected.
  REQUIRE_THROWS_AS(ConstraintSet(Eigen::MatrixXd(0, 5)),
                    std::invalid_argument);
}

TEST_CASE("active_set detects boundary constraints inclusively") {
  const ConstraintSet cs = default_constraints();

  SECTION("strictly interior point has empty active set") {
    REQUIRE(active_set(cs, kThetaRef, 1e-6).empty());
  }

  SECTION("exact equality activates the constraint") {
    const ModelParams equal_a{4.5, 0.7, 0.5, 0.7, 0.2};
    const auto idx = active_set(cs, equal_a, 1e-6);
    REQUIRE(idx == std::vector<int>{0});
  }

  SECTION("boundary jitter at half the tolerance is active (inclusive)") {
    const double tol = 1e-6;
    const ModelParams jitter{4.5, 0.7 + 0.5 * tol, 0.5, 0.7, 0.2};
    const auto idx = active_set(cs, jitter, tol);
    REQUIRE(idx == std::vector<int>{0});
  }

  SECTION("default tolerance scales with the parameter norm") {
    // |h_1| just inside 1e-6 * (1 + ||theta||_inf) with ||theta||_inf = 4.5.
    const double tol = default_active_tol(kThetaRef);
    REQUIRE(tol == Catch::Approx(1e-6 * 5.5).epsilon(1e-12));
    const ModelParams near{4.5, 0.7 + 0.9 * tol, 0.5, 0.7, 0.2};
    REQUIRE(active_set(cs, near) == std::vector<int>{0});
  }

  SECTION("monotone in the tolerance") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unif(0.3, 1.2);
    for (int rep = 0; rep < 40; ++rep) {
      ModelParams theta{4.0, unif(rng), unif(rng), unif(rng), unif(rng)};
      if (theta.a1 < theta.a2) std::swap(theta.a1, theta.a2);
      if (theta.b1 < theta.b2) std::swap(theta.b1, theta.b2);
      const auto small = active_set(cs, theta, 1e-4);
      const auto large = active_set(cs, theta, 1e-1);
      REQUIRE(std::includes(large.begin(), large.end(), small.begin(),
                            small.end()));
    }
  }

  SECTION("violation beyond -tol raises the infeasibility error") {
    const ModelParams bad{4.5, 0.7, 0.5, 0.7 + 3e-6, 0.2};
    REQUIRE_THROWS_AS(active_set(cs, bad, 1e-6), InfeasibleError);
  }
}

TEST_CASE("kkt residual blocks at zero multipliers reduce to the gradient") {
  const ConstraintSet cs = default_constraints();
  const PanelDataset data = simulated_dataset(40, kThetaRef, 2024);
  DpdConfig cfg;
  cfg.gamma = 0.4;

  const Eigen::VectorXd lambda = Eigen::VectorXd::Zero(2);
  const KktResidual res = kkt_residual(data, kThetaRef, lambda, cfg, cs);
  const Vec5 g = dpd_gradient(data, kThetaRef, cfg);

  for (int i = 0; i < n_params; ++i) REQUIRE(res.stationarity(i) == g[i]);
  REQUIRE(res.complementarity == 0.0);
  REQUIRE(res.dual_feasibility == 0.0);
  REQUIRE(res.feasibility(0) == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(res.feasibility(1) == Catch::Approx(0.3).margin(1e-15));

  // Likelihood variant delegates to the exact NLL gradient.
  const KktResidual mle = kkt_residual_mle(data, kThetaRef, lambda, cs);
  const Vec5 g_mle = NllProblem(data).evaluate(kThetaRef).gradient;
  for (int i = 0; i < n_params; ++i) REQUIRE(mle.stationarity(i) == g_mle[i]);
}

TEST_CASE("kkt residual subtracts H lambda with the documented sign") {
  const ConstraintSet cs = default_constraints();
  Vec5 g{0.5, -1.0, 2.0, 0.25, -0.75};
  Eigen::VectorXd lambda(2);
  lambda << 2.0, 3.0;
  const KktResidual res = kkt_residual_at(g, cs, kThetaRef, lambda);
  REQUIRE(res.stationarity(0) == 0.5);
  REQUIRE(res.stationarity(1) == -1.0 - 2.0);
  REQUIRE(res.stationarity(2) == 2.0 - 3.0);
  REQUIRE(res.stationarity(3) == 0.25 + 2.0);
  REQUIRE(res.stationarity(4) == -0.75 + 3.0);
  // lambda' h = 2 * 0.3 + 3 * 0.3.
  REQUIRE(res.complementarity == Catch::Approx(1.5).margin(1e-14));
  REQUIRE(res.dual_feasibility == 2.0);

  Eigen::VectorXd wrong(3);
  wrong.setZero();
  REQUIRE_THROWS_AS(kkt_residual_at(g, cs, kThetaRef, wrong),
                    std::invalid_argument);
}

TEST_CASE("certification helper applies all four thresholds") {
  const ConstraintSet cs = default_constraints();
  Eigen::VectorXd lambda(2);
  lambda << 1.0, 0.0;
  // Gradient exactly in the active cone: g = A' lambda.
  Vec5 g{0.0, 1.0, 0.0, -1.0, 0.0};
  const KktResidual res = kkt_residual_at(g, cs, kThetaRef, lambda);
  REQUIRE(res.stationarity_inf() == 0.0);
  // kThetaRef is strictly feasible, so complementarity is nonzero here.
  REQUIRE_FALSE(res.certified(1e-8, 1e-8, 1e-8, 0.0));
  REQUIRE(res.certified(1e-8, 1e-8, 1.0, 0.0));
}

TEST_CASE("restricted fit on simulated data certifies its KKT conditions") {
  // End-to-end check against the full solver: a restricted divergence fit
  // refined over shrinking trust radii must satisfy the first-order
  // conditions to (1e-4, 1e-8, 1e-6, 0).
  const ModelParams truth{4.5, 0.75, 0.5, 0.75, 0.2};  // a1 = a2 boundary
  const PanelDataset data = simulated_dataset(150, truth, 90210);

  EstimatorSpec est;
  est.kind = Estimator::mdpd;
  est.dpd.gamma = 0.3;

  // Fixed trust radii with unconditional acceptance walk a rho-lattice, so
  // high-accuracy fits refine over a geometric radius cascade: each stage
  // walks until the remaining gradient falls under the lattice noise floor
  // (about 0.3 * rho), then hands off to the next.
  ScpConfig cfg;
  cfg.restricted = true;
  cfg.theta_init = truth.as_array();
  FitResult fit;
  const double stage_rho[5] = {0.05, 0.01, 2e-3, 4e-4, 8e-5};
  const int stage_iters[5] = {60, 100, 150, 150, 150};
  for (int s = 0; s < 5; ++s) {
    cfg.rho.fill(stage_rho[s]);
    cfg.max_outer = stage_iters[s];
    fit = scp_fit(data, est, cfg);
    cfg.theta_init = fit.theta_hat.as_array();
  }
  REQUIRE_FALSE(fit.trace.empty());

  const ConstraintSet cs = default_constraints();
  const KktResidual res =
      kkt_residual(data, fit.theta_hat, fit.lambda_hat, est.dpd, cs);
  CAPTURE(fit.theta_hat.as_array(), fit.lambda_hat.transpose(),
          res.stationarity.transpose(), res.feasibility.transpose(),
          res.complementarity);
  REQUIRE(res.stationarity_inf() <= 1e-4);
  REQUIRE(res.feasibility_min() >= -1e-8);
  REQUIRE(res.complementarity <= 1e-6);
  REQUIRE(res.dual_feasibility >= 0.0);
  REQUIRE(res.certified(1e-4, 1e-8, 1e-6, 0.0));
}
