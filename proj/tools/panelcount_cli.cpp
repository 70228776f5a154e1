// panelcount: command-line front end for the panel-count estimation
// library. Subcommands: simulate, fit, tune, gof, benchmark.
//
// Every command is deterministic given its inputs, configuration, seed,
// and ANY thread count; reports carry no timestamps or environment
// state. Machine-readable reports are JSON with stable key order;
// doubles are serialized in shortest round-trip form.
//
// Exit codes: 0 success; 2 usage or configuration error; 3 data error
// (unreadable or malformed files); 4 numerical failure (singular
// information matrix, infeasible subproblem, failed fits).

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "panelcount/panelcount.hpp"

using json = nlohmann::ordered_json;
using namespace panelcount;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

const std::array<const char*, n_params> kParamNames{"zeta", "a1", "b1", "a2",
                                                    "b2"};

json theta_json(const Vec5& v) {
  json out;
  for (int i = 0; i < n_params; ++i) out[kParamNames[i]] = v[i];
  return out;
}

json vector_json(const std::vector<double>& v) { return json(v); }

std::string fmt(double x) { return io::format_double(x); }

/// Resolve where a report goes: --out if given, else
/// $PANELCOUNT_OUT_DIR/<stem> (directory defaulting to ".").
std::string report_path(const std::string& out_flag, const std::string& stem) {
  if (!out_flag.empty()) return out_flag;
  const char* dir = std::getenv("PANELCOUNT_OUT_DIR");
  return std::string(dir != nullptr && dir[0] != '\0' ? dir : ".") + "/" +
         stem;
}

void emit_report(const std::string& path, const json& report) {
  io::write_text_file(path, report.dump(2) + "\n");
  std::printf("report: %s\n", path.c_str());
}

ObservationSchedule schedule_from(const std::vector<double>& taus) {
  ObservationSchedule s;
  s.taus = taus;
  s.validate();
  return s;
}

ModelParams theta_from(const std::vector<double>& v) {
  if (v.size() != n_params)
    throw UsageError("theta needs exactly 5 values (zeta a1 b1 a2 b2)");
  ModelParams p{v[0], v[1], v[2], v[3], v[4]};
  p.validate();
  return p;
}

/// Options shared by every command that runs the solver.
struct SolverOptions {
  std::vector<double> theta_init;
  std::vector<double> rho;
  int max_outer = 10;
  std::string constraints_path;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--theta-init", theta_init,
                    "Starting point (zeta a1 b1 a2 b2)")
        ->expected(5);
    cmd->add_option("--rho", rho, "Trust radii (5 values)")->expected(5);
    cmd->add_option("--max-outer", max_outer, "Outer iteration cap")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--constraints", constraints_path,
                    "Constraint matrix file (rows of 5 numbers; default "
                    "a1>=a2, b1>=b2)");
  }

  ScpConfig scp(bool restricted) const {
    ScpConfig cfg;
    if (!theta_init.empty()) {
      for (int i = 0; i < n_params; ++i)
        cfg.theta_init[static_cast<std::size_t>(i)] =
            theta_init[static_cast<std::size_t>(i)];
      cfg.rho = default_trust_radii(cfg.theta_init);
    }
    if (!rho.empty())
      for (int i = 0; i < n_params; ++i)
        cfg.rho[static_cast<std::size_t>(i)] =
            rho[static_cast<std::size_t>(i)];
    cfg.max_outer = max_outer;
    cfg.restricted = restricted;
    cfg.validate();
    return cfg;
  }

  /// Loaded constraint set, or the built-in default.
  ConstraintSet load_constraints() const {
    if (!constraints_path.empty()) return io::read_constraints(constraints_path);
    return default_constraints();
  }
};

/// Register a --config option on a subcommand. The file holds flat
/// key=value lines (keys are the long option names without dashes);
/// values given on the command line always win. Applied after parsing
/// through CLI11's own stream parser, because a config option attached
/// to a subcommand is not processed automatically.
void add_config_flag(CLI::App* cmd, std::string& path) {
  cmd->add_option("--config", path,
                  "Config file (key=value lines; command-line flags win)");
  cmd->allow_config_extras(CLI::config_extras_mode::error);
}

void apply_config(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file '" + path + "'");
  cmd->parse_from_stream(is);
}

EstimatorSpec estimator_spec(const std::string& name, double gamma) {
  EstimatorSpec est;
  if (name == "mle") {
    est.kind = Estimator::mle;
  } else if (name == "mdpd") {
    est.kind = Estimator::mdpd;
    est.dpd.gamma = gamma;
    est.dpd.validate();
  } else {
    throw UsageError("unknown estimator '" + name + "' (use mle or mdpd)");
  }
  return est;
}

std::vector<double> parse_grid_spec(const std::string& spec) {
  // "start:step:end" (inclusive) or a comma list "0.2,0.3,0.4". Colon
  // grids snap each point to 10 decimal places so that, e.g.,
  // 0.2:0.01:0.6 yields exactly the doubles 0.20, 0.21, ..., 0.60
  // instead of accumulated start + i*step rounding.
  std::vector<double> out;
  try {
    if (spec.find(':') != std::string::npos) {
      const auto toks = io::detail::split_tokens(spec, ':');
      if (toks.size() != 3) throw UsageError("grid must be start:step:end");
      const double start = io::detail::parse_double(toks[0], "grid", 1);
      const double step = io::detail::parse_double(toks[1], "grid", 1);
      const double end = io::detail::parse_double(toks[2], "grid", 1);
      if (!(step > 0.0)) throw UsageError("grid step must be positive");
      for (int i = 0;; ++i) {
        const double g = std::round((start + i * step) * 1e10) / 1e10;
        if (g > end + 1e-12) break;
        out.push_back(g);
      }
    } else {
      for (std::string_view t : io::detail::split_tokens(spec, ','))
        out.push_back(io::detail::parse_double(t, "grid", 1));
    }
  } catch (const DataError& e) {
    throw UsageError(e.what());  // malformed grids are usage, not data
  }
  if (out.empty()) throw UsageError("grid is empty");
  return out;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateCmd {
  int m = 100;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> theta{4.5, 0.9, 0.5, 0.6, 0.2};
  std::vector<double> taus{0.01, 0.35, 0.69, 1.12};
  std::string out;
  std::string config_path;

  void run() const {
    SimConfig cfg;
    cfg.theta_true = theta_from(theta);
    cfg.schedule = schedule_from(taus);
    cfg.m = m;
    cfg.epsilon = epsilon;
    cfg.seed = seed;
    cfg.validate();

    const PanelDataset data = simulate_dataset(cfg);
    io::write_dataset(out, data);

    json meta;
    meta["command"] = "simulate";
    meta["theta_true"] = theta_json(cfg.theta_true.as_array());
    meta["epsilon"] = epsilon;
    meta["seed"] = seed;
    meta["m"] = m;
    meta["schedule"] = vector_json(taus);
    meta["contaminated_subjects"] = contaminant_count(epsilon, m);
    meta["layout"] = std::string(io::dataset_layout);
    meta["dataset"] = out;
    io::write_text_file(out + ".meta.json", meta.dump(2) + "\n");

    std::printf("wrote %d subjects x %d cells to %s\n", data.m(),
                data.schedule.n_cells(), out.c_str());
    std::printf("provenance: %s.meta.json\n", out.c_str());
  }
};

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitCmd {
  std::string data_path;
  std::string estimator = "mdpd";
  double gamma = 0.5;
  bool restricted = false;
  SolverOptions solver;
  std::string out;
  std::string config_path;

  void run() const {
    const PanelDataset data = io::read_dataset(data_path);
    const EstimatorSpec est = estimator_spec(estimator, gamma);
    const ScpConfig scp_cfg = solver.scp(restricted);
    const ConstraintSet cs = solver.load_constraints();

    const FitResult fr =
        scp_fit(data, est, scp_cfg, restricted ? &cs : nullptr);

    // Standard errors through the sandwich; the likelihood case is the
    // gamma '&'= 0 limit of the divergence asymptotics.
    DpdConfig asym_cfg = est.dpd;
    if (est.kind == Estimator::mle) asym_cfg.gamma = 0.0;
    const AsymptoticsResult asym = sigma_restricted(
        fr.theta_hat, data.schedule, asym_cfg, restricted ? &cs : nullptr,
        restricted ? fr.active : std::vector<int>{}, data.m());

    json report;
    report["command"] = "fit";
    report["data"] = data_path;
    report["m"] = data.m();
    report["estimator"] = estimator;
    if (est.kind == Estimator::mdpd) report["gamma"] = gamma;
    report["restricted"] = restricted;
    report["theta_hat"] = theta_json(fr.theta_hat.as_array());
    std::vector<double> lambda(fr.lambda_hat.data(),
                               fr.lambda_hat.data() + fr.lambda_hat.size());
    report["lambda_hat"] = vector_json(lambda);
    report["active"] = json(fr.active);
    report["objective"] = fr.objective;
    report["iterations"] = fr.iterations;
    report["converged"] = fr.converged;

    std::printf("fit: %s%s on %s (m = %d)\n", estimator.c_str(),
                est.kind == Estimator::mdpd
                    ? (" gamma=" + fmt(gamma)).c_str()
                    : "",
                data_path.c_str(), data.m());
    std::printf("%-8s %16s %16s\n", "param", "estimate", "std.error");
    for (int i = 0; i < n_params; ++i)
      std::printf("%-8s %16s %16s\n", kParamNames[i],
                  fmt(fr.theta_hat.as_array()[i]).c_str(),
                  fmt(asym.std_errors[static_cast<std::size_t>(i)]).c_str());
    std::printf("objective %s after %d iterations (%s)\n",
                fmt(fr.objective).c_str(), fr.iterations,
                fr.converged ? "converged" : "iteration cap");

    if (restricted) {
      const Eigen::VectorXd h = evaluate_h(cs, fr.theta_hat);
      std::vector<double> hv(h.data(), h.data() + h.size());
      report["h_values"] = vector_json(hv);
      const KktResidual kkt =
          est.kind == Estimator::mdpd
              ? kkt_residual(data, fr.theta_hat, fr.lambda_hat, est.dpd, cs)
              : kkt_residual_mle(data, fr.theta_hat, fr.lambda_hat, cs);
      json kj;
      kj["stationarity_inf"] = kkt.stationarity_inf();
      kj["feasibility_min"] = kkt.feasibility_min();
      kj["complementarity"] = kkt.complementarity;
      kj["dual_feasibility"] = kkt.dual_feasibility;
      report["kkt"] = kj;
      std::printf(
          "kkt: stationarity %s, feasibility %s, complementarity %s, dual "
          "%s\n",
          fmt(kkt.stationarity_inf()).c_str(),
          fmt(kkt.feasibility_min()).c_str(), fmt(kkt.complementarity).c_str(),
          fmt(kkt.dual_feasibility).c_str());
    } else {
      const Vec5 g = est.kind == Estimator::mdpd
                         ? dpd_gradient(data, fr.theta_hat, est.dpd)
                         : NllProblem(data).evaluate(fr.theta_hat).gradient;
      report["gradient_inf"] = linf_norm(g);
      std::printf("gradient sup-norm: %s\n", fmt(linf_norm(g)).c_str());
    }

    json se;
    for (int i = 0; i < n_params; ++i)
      se[kParamNames[i]] = asym.std_errors[static_cast<std::size_t>(i)];
    report["std_errors"] = se;
    report["j_condition"] = asym.j_condition;

    emit_report(report_path(out, "fit_report.json"), report);
  }
};

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

struct TuneCmd {
  std::string data_path;
  std::string method = "gsm";
  std::string grid_spec = "0.2:0.01:0.6";
  std::vector<double> pilots{default_iwj_pilots.begin(),
                             default_iwj_pilots.end()};
  bool restricted = false;
  bool symmetric_gsm = false;
  int max_iter = 10;
  int consensus_k = 3;
  int threads = 1;
  SolverOptions solver;
  std::string out;
  std::string config_path;

  static json result_json(const TuningResult& res) {
    json out;
    out["gamma_opt"] = res.gamma_opt;
    out["gammas"] = vector_json(res.gammas);
    out["scores"] = vector_json(res.scores);
    out["failed_gammas"] = vector_json(res.failed_gammas);
    json thetas = json::array();
    for (const ModelParams& th : res.per_gamma_theta)
      thetas.push_back(theta_json(th.as_array()));
    out["per_gamma_theta"] = thetas;
    if (!res.pilot_paths.empty()) {
      json paths = json::array();
      for (const auto& p : res.pilot_paths) paths.push_back(json(p));
      out["pilot_paths"] = paths;
    }
    return out;
  }

  void run() const {
    if (method != "gsm" && method != "iwj" && method != "both")
      throw UsageError("method must be gsm, iwj, or both");
    const PanelDataset data = io::read_dataset(data_path);
    GammaGrid grid;
    grid.values = parse_grid_spec(grid_spec);
    grid.validate();

    const ScpConfig scp_cfg = solver.scp(restricted);
    const ConstraintSet cs = solver.load_constraints();
    GammaFitCache cache(data, DpdConfig{}, scp_cfg,
                        restricted ? &cs : nullptr);

    json report;
    report["command"] = "tune";
    report["data"] = data_path;
    report["m"] = data.m();
    report["method"] = method;
    report["restricted"] = restricted;
    report["grid"] = vector_json(grid.values);

    auto print_result = [](const char* name, const TuningResult& res) {
      std::printf("%s: gamma_opt = %s\n", name, fmt(res.gamma_opt).c_str());
      std::printf("%-8s %16s\n", "gamma", "score");
      for (std::size_t i = 0; i < res.gammas.size(); ++i)
        std::printf("%-8s %16s\n", fmt(res.gammas[i]).c_str(),
                    fmt(res.scores[i]).c_str());
    };

    if (method == "gsm" || method == "both") {
      const TuningResult res =
          gsm_select(cache, grid, symmetric_gsm, threads);
      report["gsm"] = result_json(res);
      print_result("gsm", res);
    }
    if (method == "iwj" || method == "both") {
      const TuningResult res =
          iwj_select(cache, grid, pilots, max_iter, consensus_k, threads);
      report["iwj"] = result_json(res);
      print_result("iwj", res);
    }

    emit_report(report_path(out, "tune_report.json"), report);
  }
};

// ---------------------------------------------------------------------------
// gof
// ---------------------------------------------------------------------------

struct GofCmd {
  std::string data_path;
  std::string estimator = "mdpd";
  double gamma = 0.5;
  bool restricted = false;
  int bootstrap_samples = 1000;
  bool refit = false;
  std::uint64_t seed = 0;
  int threads = 1;
  SolverOptions solver;
  std::string out;
  std::string config_path;

  void run() const {
    const PanelDataset data = io::read_dataset(data_path);
    const EstimatorSpec est = estimator_spec(estimator, gamma);
    const ScpConfig scp_cfg = solver.scp(restricted);
    const ConstraintSet cs = solver.load_constraints();

    const FitResult fr =
        scp_fit(data, est, scp_cfg, restricted ? &cs : nullptr);
    const GofResult res = bootstrap_pvalue(
        data, fr.theta_hat, bootstrap_samples, seed, refit, est, scp_cfg,
        restricted ? &cs : nullptr, threads);

    json report;
    report["command"] = "gof";
    report["data"] = data_path;
    report["m"] = data.m();
    report["estimator"] = estimator;
    if (est.kind == Estimator::mdpd) report["gamma"] = gamma;
    report["restricted"] = restricted;
    report["theta_hat"] = theta_json(fr.theta_hat.as_array());
    report["t_stat"] = res.t_stat;
    report["p_value"] = res.p_value;
    report["b_samples"] = res.b_samples;
    report["mode"] = res.refit ? "refit" : "fixed";
    report["refit_failures"] = res.refit_failures;
    report["seed"] = seed;
    json q;
    for (std::size_t i = 0; i < gof_quantile_levels.size(); ++i)
      q[fmt(gof_quantile_levels[i])] = res.bootstrap_quantiles[i];
    report["bootstrap_quantiles"] = q;

    std::printf("gof: T = %s, p = %s (B = %d, %s theta)\n",
                fmt(res.t_stat).c_str(), fmt(res.p_value).c_str(),
                res.b_samples, res.refit ? "refit" : "fixed");

    emit_report(report_path(out, "gof_report.json"), report);
  }
};

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchmarkCmd {
  int reps = 200;
  int m = 100;
  std::vector<double> theta{4.5, 0.9, 0.5, 0.6, 0.2};
  std::vector<double> taus{0.01, 0.35, 0.69, 1.12};
  std::string estimators = "mdpd";
  std::string gammas = "0.5";
  std::string epsilons = "0";
  std::string restriction = "both";
  std::uint64_t seed = 0;
  int threads = 1;
  SolverOptions solver;
  std::string out;
  std::string config_path;

  void run() const {
    if (restriction != "both" && restriction != "restricted" &&
        restriction != "unrestricted")
      throw UsageError(
          "restriction must be both, restricted, or unrestricted");
    std::vector<bool> restricted_arms;
    if (restriction == "both")
      restricted_arms = {false, true};
    else
      restricted_arms = {restriction == "restricted"};

    std::vector<std::string> est_names;
    for (std::string_view t : io::detail::split_tokens(estimators, ','))
      est_names.emplace_back(t);
    const std::vector<double> gamma_list = parse_grid_spec(gammas);
    const std::vector<double> eps_list = parse_grid_spec(epsilons);

    SimConfig sim;
    sim.theta_true = theta_from(theta);
    sim.schedule = schedule_from(taus);
    sim.m = m;
    sim.seed = seed;

    const ConstraintSet cs = solver.load_constraints();

    json rows = json::array();
    std::printf("%-6s %-6s %-7s %-5s %11s %11s %11s  (per parameter)\n",
                "est", "gamma", "eps", "restr", "mean", "bias", "mse");
    for (const std::string& est_name : est_names) {
      const bool is_mle = est_name == "mle";
      const std::vector<double> cell_gammas =
          is_mle ? std::vector<double>{0.0} : gamma_list;
      for (double g : cell_gammas) {
        const EstimatorSpec est = estimator_spec(est_name, is_mle ? 0.5 : g);
        for (double eps : eps_list) {
          SimConfig cell_sim = sim;
          cell_sim.epsilon = eps;
          for (bool restr : restricted_arms) {
            const ScpConfig scp_cfg = solver.scp(restr);
            const ReplicationTable table =
                run_replications(cell_sim, reps, est, scp_cfg,
                                 restr ? &cs : nullptr, threads);
            json row;
            row["estimator"] = est_name;
            if (!is_mle) row["gamma"] = g;
            row["epsilon"] = eps;
            row["restricted"] = restr;
            row["mean"] = theta_json(table.mean);
            row["bias"] = theta_json(table.bias);
            row["mse"] = theta_json(table.mse);
            row["n_reps"] = table.n_reps;
            row["n_failed"] = table.n_failed;
            rows.push_back(row);
            for (int i = 0; i < n_params; ++i)
              std::printf("%-6s %-6s %-7s %-5s %11.6f %11.6f %11.6f  %s\n",
                          est_name.c_str(), is_mle ? "-" : fmt(g).c_str(),
                          fmt(eps).c_str(), restr ? "yes" : "no",
                          table.mean[i], table.bias[i], table.mse[i],
                          kParamNames[i]);
          }
        }
      }
    }

    json report;
    report["command"] = "benchmark";
    report["reps"] = reps;
    report["m"] = m;
    report["theta_true"] = theta_json(sim.theta_true.as_array());
    report["schedule"] = vector_json(taus);
    report["seed"] = seed;
    report["cells"] = rows;

    emit_report(report_path(out, "benchmark_report.json"), report);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "panelcount: robust divergence estimation for bivariate panel counts "
      "under a shared frailty"};
  app.require_subcommand(1);

  SimulateCmd sim;
  CLI::App* c_sim = app.add_subcommand(
      "simulate", "Generate a dataset from the frailty model");
  c_sim->add_option("--m", sim.m, "Subjects")->check(CLI::PositiveNumber);
  c_sim->add_option("--epsilon", sim.epsilon,
                    "Contamination proportion in [0,1)");
  c_sim->add_option("--seed", sim.seed, "Master seed");
  c_sim->add_option("--theta", sim.theta, "True (zeta a1 b1 a2 b2)")
      ->expected(5);
  c_sim->add_option("--schedule", sim.taus, "Observation times tau_0..tau_k")
      ->expected(-2);
  c_sim->add_option("--out", sim.out, "Dataset file to write")->required();
  add_config_flag(c_sim, sim.config_path);

  FitCmd fit;
  CLI::App* c_fit =
      app.add_subcommand("fit", "Fit one dataset with mle or mdpd");
  c_fit->add_option("--data", fit.data_path, "Dataset file")->required();
  c_fit->add_option("--estimator", fit.estimator, "mle | mdpd");
  c_fit->add_option("--gamma", fit.gamma, "Divergence tuning parameter");
  c_fit->add_flag("--restricted", fit.restricted,
                  "Impose the inequality constraints");
  fit.solver.add_flags(c_fit);
  c_fit->add_option("--out", fit.out, "Report file (JSON)");
  add_config_flag(c_fit, fit.config_path);

  TuneCmd tune;
  CLI::App* c_tune =
      app.add_subcommand("tune", "Select gamma by gsm and/or iwj");
  c_tune->add_option("--data", tune.data_path, "Dataset file")->required();
  c_tune->add_option("--method", tune.method, "gsm | iwj | both");
  c_tune->add_option("--grid", tune.grid_spec,
                     "start:step:end or comma list");
  c_tune->add_option("--pilots", tune.pilots, "IWJ pilot gammas")
      ->expected(-1);
  c_tune->add_flag("--restricted", tune.restricted,
                   "Impose the inequality constraints");
  c_tune->add_flag("--symmetric-gsm", tune.symmetric_gsm,
                   "Symmetric GSM cross term");
  c_tune->add_option("--max-iter", tune.max_iter, "IWJ iteration cap")
      ->check(CLI::PositiveNumber);
  c_tune->add_option("--consensus-k", tune.consensus_k,
                     "IWJ consensus tail length")
      ->check(CLI::PositiveNumber);
  c_tune->add_option("--threads", tune.threads, "Worker threads")
      ->check(CLI::PositiveNumber);
  tune.solver.add_flags(c_tune);
  c_tune->add_option("--out", tune.out, "Report file (JSON)");
  add_config_flag(c_tune, tune.config_path);

  GofCmd gof;
  CLI::App* c_gof = app.add_subcommand(
      "gof", "Dissimilarity statistic with bootstrap p-value");
  c_gof->add_option("--data", gof.data_path, "Dataset file")->required();
  c_gof->add_option("--estimator", gof.estimator, "mle | mdpd");
  c_gof->add_option("--gamma", gof.gamma, "Divergence tuning parameter");
  c_gof->add_flag("--restricted", gof.restricted,
                  "Impose the inequality constraints");
  c_gof->add_option("--bootstrap-samples", gof.bootstrap_samples,
                    "Bootstrap sample count B")
      ->check(CLI::PositiveNumber);
  c_gof->add_flag("--refit", gof.refit, "Refit theta per bootstrap sample");
  c_gof->add_option("--seed", gof.seed, "Master seed");
  c_gof->add_option("--threads", gof.threads, "Worker threads")
      ->check(CLI::PositiveNumber);
  gof.solver.add_flags(c_gof);
  c_gof->add_option("--out", gof.out, "Report file (JSON)");
  add_config_flag(c_gof, gof.config_path);

  BenchmarkCmd bench;
  CLI::App* c_bench = app.add_subcommand(
      "benchmark", "Replication tables over an experiment grid");
  c_bench->add_option("--reps", bench.reps, "Replications per cell")
      ->check(CLI::PositiveNumber);
  c_bench->add_option("--m", bench.m, "Subjects per dataset")
      ->check(CLI::PositiveNumber);
  c_bench->add_option("--theta", bench.theta, "True (zeta a1 b1 a2 b2)")
      ->expected(5);
  c_bench->add_option("--schedule", bench.taus,
                      "Observation times tau_0..tau_k")
      ->expected(-2);
  c_bench->add_option("--estimators", bench.estimators,
                      "Comma list from {mle, mdpd}");
  c_bench->add_option("--gammas", bench.gammas,
                      "Gamma grid (list or start:step:end)");
  c_bench->add_option("--epsilons", bench.epsilons,
                      "Contamination grid (list or start:step:end)");
  c_bench->add_option("--restriction", bench.restriction,
                      "both | restricted | unrestricted");
  c_bench->add_option("--seed", bench.seed, "Master seed");
  c_bench->add_option("--threads", bench.threads, "Worker threads")
      ->check(CLI::PositiveNumber);
  bench.solver.add_flags(c_bench);
  c_bench->add_option("--out", bench.out, "Report file (JSON)");
  add_config_flag(c_bench, bench.config_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;
  }

  try {
    if (c_sim->parsed()) apply_config(c_sim, sim.config_path);
    if (c_fit->parsed()) apply_config(c_fit, fit.config_path);
    if (c_tune->parsed()) apply_config(c_tune, tune.config_path);
    if (c_gof->parsed()) apply_config(c_gof, gof.config_path);
    if (c_bench->parsed()) apply_config(c_bench, bench.config_path);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (c_sim->parsed()) sim.run();
    if (c_fit->parsed()) fit.run();
    if (c_tune->parsed()) tune.run();
    if (c_gof->parsed()) gof.run();
    if (c_bench->parsed()) bench.run();
    return 0;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const CapacityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const InfeasibleError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const SingularError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
