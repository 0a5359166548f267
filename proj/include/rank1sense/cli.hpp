#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rank1sense/altmin.hpp"
#include "rank1sense/diagnostics.hpp"
#include "rank1sense/io.hpp"
#include "rank1sense/parallel.hpp"
#include "rank1sense/regression.hpp"
#include "rank1sense/sensing.hpp"

namespace rank1sense::cli {

// Exit codes: 0 success, 2 usage error, 1 runtime failure.

struct Params {
  int d = 20;
  int k = 2;
  double kappa = 2.0;
  std::vector<std::int64_t> m = {100000};
  int iters = 10;
  double eps0 = 1e-6;
  std::string method = "naive";
  double sketch_eps = 1e-6;
  double sketch_delta = 0.01;
  std::uint64_t seed = 0;
  int trials = 1;
  int probes = 4;
  double eps = 0.1;          // operator target for check-operators
  double dist_target = 0.1;  // perturbation size for proof-diagnostics
  std::string final_fit = "extra-block";
  std::string spectrum = "geometric";
  std::string out;  // empty = stdout
  std::string format = "csv";
  std::string config_file;
};

namespace detail {

inline SolveMethod parse_method(const std::string& s) {
  if (s == "naive") return SolveMethod::naive;
  if (s == "sketched") return SolveMethod::sketched;
  throw InvalidParameter("method must be 'naive' or 'sketched'");
}

inline FinalFit parse_final_fit(const std::string& s) {
  if (s == "extra-block") return FinalFit::extra_block;
  if (s == "literal") return FinalFit::literal;
  throw InvalidParameter("final-fit must be 'extra-block' or 'literal'");
}

inline SpectrumShape parse_spectrum(const std::string& s) {
  if (s == "geometric") return SpectrumShape::geometric;
  if (s == "linear") return SpectrumShape::linear;
  throw InvalidParameter("spectrum must be 'geometric' or 'linear'");
}

/// Output sink; the path is opened before any compute starts.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!file_->good())
        throw InvalidParameter("output path is not writable: " + path);
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

inline void apply_config_file(Params& p) {
  if (p.config_file.empty()) return;
  std::ifstream in(p.config_file);
  if (!in.good()) throw InvalidParameter("cannot read config file: " + p.config_file);
  nlohmann::json j;
  in >> j;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("d", p.d);
  get("k", p.k);
  get("kappa", p.kappa);
  if (j.contains("m")) {
    if (j.at("m").is_array())
      p.m = j.at("m").get<std::vector<std::int64_t>>();
    else
      p.m = {j.at("m").get<std::int64_t>()};
  }
  get("iters", p.iters);
  get("eps0", p.eps0);
  get("method", p.method);
  get("sketch-eps", p.sketch_eps);
  get("sketch-delta", p.sketch_delta);
  get("seed", p.seed);
  get("trials", p.trials);
  get("probes", p.probes);
  get("eps", p.eps);
  get("dist", p.dist_target);
  get("final-fit", p.final_fit);
  get("spectrum", p.spectrum);
  get("out", p.out);
  get("format", p.format);
}

inline std::vector<std::pair<std::string, std::string>> echo_common(
    const std::string& command, const Params& p) {
  return {{"command", command},
          {"d", std::to_string(p.d)},
          {"k", std::to_string(p.k)},
          {"kappa", format_double(p.kappa)},
          {"iters", std::to_string(p.iters)},
          {"eps0", format_double(p.eps0)},
          {"method", p.method},
          {"sketch_eps", format_double(p.sketch_eps)},
          {"sketch_delta", format_double(p.sketch_delta)},
          {"seed", std::to_string(p.seed)},
          {"trials", std::to_string(p.trials)},
          {"final_fit", p.final_fit},
          {"spectrum", p.spectrum}};
}

inline nlohmann::json echo_json(const std::string& command, const Params& p) {
  nlohmann::json j;
  for (const auto& [key, value] : echo_common(command, p)) j[key] = value;
  return j;
}

inline SolverConfig solver_config(const Params& p, std::int64_t m_per_block,
                                  std::uint64_t seed) {
  SolverConfig cfg;
  cfg.d = p.d;
  cfg.k = p.k;
  cfg.m_per_block = int(m_per_block);
  cfg.iterations = p.iters;
  cfg.eps0 = p.eps0;
  cfg.method = parse_method(p.method);
  cfg.sketch_eps = p.sketch_eps;
  cfg.sketch_delta = p.sketch_delta;
  cfg.seed = seed;
  cfg.final_fit = parse_final_fit(p.final_fit);
  return cfg;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median of the finite per-iteration contraction ratios of one run.
inline double median_decay_ratio(const ConvergenceTrace& trace) {
  std::vector<double> finite;
  for (double r : decay_ratios(trace))
    if (std::isfinite(r)) finite.push_back(r);
  return median(std::move(finite));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

inline int cmd_run(const Params& p) {
  if (p.m.size() != 1)
    throw InvalidParameter("run: exactly one --m value expected");
  detail::Sink sink(p.out);

  nlohmann::json json_out = nlohmann::json::array();
  for (int trial = 0; trial < p.trials; ++trial) {
    const std::uint64_t seed = p.seed + std::uint64_t(trial);
    const GroundTruth gt = make_ground_truth(
        p.d, p.k, p.kappa, detail::parse_spectrum(p.spectrum), seed);
    const SolverConfig cfg = detail::solver_config(p, p.m[0], seed);
    const SensingResult result = fast_matrix_sensing(cfg, gt);
    const ConvergenceTrace& trace = result.trace;

    nlohmann::json summary;
    summary["seed"] = seed;
    summary["final_rel_error"] = trace.rel_error.back();
    summary["final_abs_error"] = trace.abs_error.back();
    summary["total_samples"] = trace.total_samples;
    summary["init_millis"] = trace.millis.front();
    double iter_ms = 0.0;
    for (std::size_t t = 1; t < trace.millis.size(); ++t) iter_ms += trace.millis[t];
    summary["iterations_millis"] = iter_ms;
    summary["total_millis"] = trace.total_millis;

    if (cfg.method == SolveMethod::sketched) {
      // Replays the final fit with both solvers on identical inputs so the
      // summary can state whether the sketched residual kept the guarantee.
      const MeasurementEnsemble e =
          sample_ensemble(cfg.d, int(cfg.total_samples()), seed);
      const Vector b = evaluate(gt.reconstruct(), e);
      auto blocks = split_ensemble(e, b, cfg.total_blocks());
      const auto& [ef, bf] = blocks.back();
      const Matrix u_final = top_k_left_singular_vectors(result.w, cfg.k);
      RegressionProblem prob(build_design_matrix(u_final, ef), bf, cfg.d, cfg.k);
      const double res_naive = (prob.m * solve_naive(prob) - prob.b).norm();
      const double res_sketched =
          (prob.m * solve_sketched(prob, cfg.sketch_eps, cfg.sketch_delta, seed) -
           prob.b)
              .norm();
      summary["final_block_naive_residual"] = res_naive;
      summary["final_block_sketched_residual"] = res_sketched;
      summary["naive_equivalent"] =
          res_sketched <= (1.0 + cfg.sketch_eps) * res_naive + 1e-300;
    }

    auto echo = detail::echo_common("run", p);
    echo.emplace_back("m_per_block", std::to_string(p.m[0]));
    echo.emplace_back("run_seed", std::to_string(seed));
    if (p.format == "json") {
      nlohmann::json one;
      one["config"] = detail::echo_json("run", p);
      one["config"]["m_per_block"] = p.m[0];
      one["config"]["run_seed"] = seed;
      one["trace"] = trace;
      one["summary"] = summary;
      json_out.push_back(std::move(one));
    } else {
      write_trace_csv(sink.stream(), trace, echo);
      sink.stream() << "# summary=" << summary.dump() << '\n';
    }
  }
  if (p.format == "json")
    sink.stream() << (p.trials == 1 ? json_out[0].dump(2) : json_out.dump(2)) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// sweep-m
// ---------------------------------------------------------------------------

inline int cmd_sweep_m(const Params& p) {
  if (p.m.empty()) throw CLI::ValidationError("sweep-m", "--m list must not be empty");
  if (p.trials < 1) throw InvalidParameter("sweep-m: need trials >= 1");
  detail::Sink sink(p.out);

  std::vector<std::int64_t> ms = p.m;
  std::sort(ms.begin(), ms.end());

  struct Row {
    std::int64_t m;
    double median_rel_error;
    double median_decay_ratio;
    double success_fraction;
  };
  std::vector<Row> rows(ms.size());

  for (std::size_t mi = 0; mi < ms.size(); ++mi) {
    std::vector<double> rel(p.trials), decay(p.trials);
    std::vector<int> success(p.trials);
    parallel_for(p.trials, [&](int trial) {
      const std::uint64_t seed = p.seed + std::uint64_t(trial);
      const GroundTruth gt = make_ground_truth(
          p.d, p.k, p.kappa, detail::parse_spectrum(p.spectrum), seed);
      const SolverConfig cfg = detail::solver_config(p, ms[mi], seed);
      const SensingResult result = fast_matrix_sensing(cfg, gt);
      rel[trial] = result.trace.rel_error.back();
      decay[trial] = detail::median_decay_ratio(result.trace);
      success[trial] = rel[trial] <= p.eps0 ? 1 : 0;
    });
    rows[mi] = {ms[mi], detail::median(rel), detail::median(decay),
                double(std::accumulate(success.begin(), success.end(), 0)) /
                    double(p.trials)};
  }

  if (p.format == "json") {
    nlohmann::json j;
    j["config"] = detail::echo_json("sweep-m", p);
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
      j["rows"].push_back({{"m", r.m},
                           {"median_rel_error", r.median_rel_error},
                           {"median_decay_ratio", r.median_decay_ratio},
                           {"success_fraction", r.success_fraction}});
    sink.stream() << j.dump(2) << '\n';
  } else {
    write_echo_block(sink.stream(), detail::echo_common("sweep-m", p));
    sink.stream() << "m,median_rel_error,median_decay_ratio,success_fraction\n";
    for (const auto& r : rows)
      write_csv_row(sink.stream(),
                    {std::to_string(r.m), format_double(r.median_rel_error),
                     format_double(r.median_decay_ratio),
                     format_double(r.success_fraction)});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// check-operators
// ---------------------------------------------------------------------------

inline int cmd_check_operators(const Params& p) {
  if (p.m.size() != 1)
    throw InvalidParameter("check-operators: exactly one --m value expected");
  detail::Sink sink(p.out);

  std::vector<OperatorReport> reports(p.trials);
  std::vector<std::uint64_t> seeds(p.trials);
  parallel_for(p.trials, [&](int trial) {
    const std::uint64_t seed = p.seed + std::uint64_t(trial);
    seeds[trial] = seed;
    const GroundTruth gt = make_ground_truth(
        p.d, p.k, p.kappa, detail::parse_spectrum(p.spectrum), seed);
    const MeasurementEnsemble e = sample_ensemble(p.d, int(p.m[0]), seed);
    reports[trial] = check_all(gt, e, e, p.eps, p.probes);
  });

  if (p.format == "json") {
    nlohmann::json j;
    j["config"] = detail::echo_json("check-operators", p);
    j["config"]["m"] = p.m[0];
    j["config"]["eps"] = p.eps;
    j["config"]["probes"] = p.probes;
    j["reports"] = reports;
    sink.stream() << j.dump(2) << '\n';
  } else {
    auto echo = detail::echo_common("check-operators", p);
    echo.emplace_back("m", std::to_string(p.m[0]));
    echo.emplace_back("eps", format_double(p.eps));
    echo.emplace_back("probes", std::to_string(p.probes));
    write_echo_block(sink.stream(), echo);
    sink.stream() << "m,d,k,seed,init_error,bx_error,by_error,gx_norm,gy_norm\n";
    for (int t = 0; t < p.trials; ++t) {
      const auto& r = reports[t];
      write_csv_row(sink.stream(),
                    {std::to_string(p.m[0]), std::to_string(p.d),
                     std::to_string(p.k), std::to_string(seeds[t]),
                     format_double(r.init_error), format_double(r.b_x_error),
                     format_double(r.b_y_error), format_double(r.g_x_norm),
                     format_double(r.g_y_norm)});
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// proof-diagnostics
// ---------------------------------------------------------------------------

inline int cmd_proof_diagnostics(const Params& p) {
  if (p.m.size() != 1)
    throw InvalidParameter("proof-diagnostics: exactly one --m value expected");
  detail::Sink sink(p.out);

  std::vector<ShrinkingStepReport> reports(p.trials);
  std::vector<std::uint64_t> seeds(p.trials);
  parallel_for(p.trials, [&](int trial) {
    const std::uint64_t seed = p.seed + std::uint64_t(trial);
    seeds[trial] = seed;
    const GroundTruth gt = make_ground_truth(
        p.d, p.k, p.kappa, detail::parse_spectrum(p.spectrum), seed);
    const MeasurementEnsemble e = sample_ensemble(p.d, int(p.m[0]), seed);
    Rng rng = Rng::stream(seed, 0x9e27ULL << 32);
    const Matrix u_t = perturb_subspace(gt.u_star, p.dist_target, rng);
    reports[trial] = shrinking_step_report(gt, u_t, e, p.eps);
  });

  if (p.format == "json") {
    nlohmann::json j;
    j["config"] = detail::echo_json("proof-diagnostics", p);
    j["config"]["m"] = p.m[0];
    j["config"]["eps"] = p.eps;
    j["config"]["dist"] = p.dist_target;
    j["reports"] = reports;
    sink.stream() << j.dump(2) << '\n';
  } else {
    auto echo = detail::echo_common("proof-diagnostics", p);
    echo.emplace_back("m", std::to_string(p.m[0]));
    echo.emplace_back("eps", format_double(p.eps));
    echo.emplace_back("dist", format_double(p.dist_target));
    write_echo_block(sink.stream(), echo);
    sink.stream()
        << "d,k,m,seed,dist_u,f_identity_rel_residual,rewrite_residual,f_norm,"
           "f_bound_general,bd_minus_c_norm,bd_minus_c_bound,"
           "sigma_min_b_normalized,sigma_min_r,sigma_min_r_threshold\n";
    for (int t = 0; t < p.trials; ++t) {
      const auto& r = reports[t];
      write_csv_row(
          sink.stream(),
          {std::to_string(p.d), std::to_string(p.k), std::to_string(p.m[0]),
           std::to_string(seeds[t]), format_double(r.dist_u),
           format_double(r.f_identity_rel_residual),
           format_double(r.rewrite_residual), format_double(r.f_norm),
           format_double(r.f_bound_general), format_double(r.bd_minus_c_norm),
           format_double(r.bd_minus_c_bound),
           format_double(r.sigma_min_b_normalized), format_double(r.sigma_min_r),
           format_double(r.sigma_min_r_threshold)});
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bench-regression
// ---------------------------------------------------------------------------

inline int cmd_bench_regression(const Params& p, const std::vector<int>& d_grid,
                                const std::vector<int>& k_grid) {
  if (p.m.empty() || d_grid.empty() || k_grid.empty())
    throw CLI::ValidationError("bench-regression", "grid lists must not be empty");
  detail::Sink sink(p.out);

  struct Row {
    int d, k;
    std::int64_t m;
    std::string method;
    double build_ms, solve_ms, residual;
  };
  std::vector<Row> rows;
  std::vector<int> ds = d_grid, ks = k_grid;
  std::vector<std::int64_t> ms = p.m;
  std::sort(ds.begin(), ds.end());
  std::sort(ks.begin(), ks.end());
  std::sort(ms.begin(), ms.end());

  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  for (int d : ds) {
    for (int k : ks) {
      for (std::int64_t m : ms) {
        for (int rep = 0; rep < p.trials; ++rep) {
          const std::uint64_t seed = p.seed + std::uint64_t(rep);
          Rng rng = Rng::stream(seed, 0xbe9cULL << 32);
          Matrix g(d, k);
          for (Index j = 0; j < k; ++j)
            for (Index i = 0; i < d; ++i) g(i, j) = rng.gaussian();
          const Matrix u = thin_qr(g).q;
          const MeasurementEnsemble e = sample_ensemble(d, int(m), seed);
          Vector b(m);
          for (Index i = 0; i < m; ++i) b(i) = rng.gaussian();

          auto t0 = clock::now();
          Matrix design = build_design_matrix(u, e);
          const double build_ms = ms_since(t0);
          RegressionProblem prob(std::move(design), b, d, k);

          t0 = clock::now();
          const Vector v_naive = solve_naive(prob);
          const double naive_ms = ms_since(t0);

          t0 = clock::now();
          const Vector v_sketched =
              solve_sketched(prob, p.sketch_eps, p.sketch_delta, seed);
          const double sketched_ms = ms_since(t0);

          rows.push_back({d, k, m, "naive", build_ms, naive_ms,
                          (prob.m * v_naive - prob.b).norm()});
          rows.push_back({d, k, m, "sketched", build_ms, sketched_ms,
                          (prob.m * v_sketched - prob.b).norm()});
        }
      }
    }
  }

  if (p.format == "json") {
    nlohmann::json j;
    j["config"] = detail::echo_json("bench-regression", p);
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
      j["rows"].push_back({{"d", r.d},
                           {"k", r.k},
                           {"m", r.m},
                           {"method", r.method},
                           {"build_millis", r.build_ms},
                           {"solve_millis", r.solve_ms},
                           {"residual", r.residual}});
    sink.stream() << j.dump(2) << '\n';
  } else {
    write_echo_block(sink.stream(), detail::echo_common("bench-regression", p));
    sink.stream() << "d,k,m,method,build_millis,solve_millis,residual\n";
    for (const auto& r : rows)
      write_csv_row(sink.stream(),
                    {std::to_string(r.d), std::to_string(r.k), std::to_string(r.m),
                     r.method, format_double(r.build_ms), format_double(r.solve_ms),
                     format_double(r.residual)});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv) {
  Params p;

  // The config file provides defaults; explicit flags override it.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") p.config_file = argv[i + 1];
  }
  try {
    detail::apply_config_file(p);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << '\n';
    return 1;
  }

  CLI::App app{"rank-one matrix sensing experiments"};
  app.require_subcommand(1);
  std::vector<int> d_grid = {p.d};
  std::vector<int> k_grid = {p.k};

  const bool has_config = !p.config_file.empty();
  auto add_common = [&](CLI::App* cmd, bool m_required) {
    cmd->add_option("--kappa", p.kappa, "condition number of the target");
    cmd->add_option("--eps0", p.eps0, "target accuracy");
    cmd->add_option("--method", p.method, "inner solver: naive|sketched");
    cmd->add_option("--sketch-eps", p.sketch_eps, "sketched solver accuracy");
    cmd->add_option("--sketch-delta", p.sketch_delta, "sketched solver failure prob");
    cmd->add_option("--seed", p.seed, "base RNG seed");
    cmd->add_option("--trials", p.trials, "independent trials (per-trial seeds)");
    cmd->add_option("--final-fit", p.final_fit, "extra-block|literal");
    cmd->add_option("--spectrum", p.spectrum, "geometric|linear");
    cmd->add_option("--out", p.out, "output path (default stdout)");
    cmd->add_option("--format", p.format, "csv|json")
        ->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--config", p.config_file, "JSON config file (flags override)");
    cmd->add_option("--m", p.m, "samples per block (list for sweeps)")
        ->required(m_required && !has_config);
  };

  auto* run = app.add_subcommand("run", "end-to-end recovery runs");
  run->add_option("--d", p.d, "dimension")->required(!has_config);
  run->add_option("--k", p.k, "rank")->required(!has_config);
  run->add_option("--iters", p.iters, "alternating iterations T");
  add_common(run, true);

  auto* sweep = app.add_subcommand("sweep-m", "recovery quality vs sample count");
  sweep->add_option("--d", p.d, "dimension")->required(!has_config);
  sweep->add_option("--k", p.k, "rank")->required(!has_config);
  sweep->add_option("--iters", p.iters, "alternating iterations T");
  add_common(sweep, true);

  auto* check = app.add_subcommand("check-operators", "operator concentration report");
  check->add_option("--d", p.d, "dimension");
  check->add_option("--k", p.k, "rank");
  check->add_option("--eps", p.eps, "operator accuracy target");
  check->add_option("--probes", p.probes, "random probe quadruples per trial");
  add_common(check, false);

  auto* proof = app.add_subcommand("proof-diagnostics", "shrinking-step diagnostics");
  proof->add_option("--d", p.d, "dimension");
  proof->add_option("--k", p.k, "rank");
  proof->add_option("--eps", p.eps, "operator accuracy used in the bounds");
  proof->add_option("--dist", p.dist_target, "perturbation distance of U_t");
  add_common(proof, false);

  auto* bench = app.add_subcommand("bench-regression", "naive vs sketched timings");
  bench->add_option("--d", d_grid, "dimension grid")->required(!has_config);
  bench->add_option("--k", k_grid, "rank grid")->required(!has_config);
  add_common(bench, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(p);
    if (sweep->parsed()) return cmd_sweep_m(p);
    if (check->parsed()) return cmd_check_operators(p);
    if (proof->parsed()) return cmd_proof_diagnostics(p);
    if (bench->parsed()) return cmd_bench_regression(p, d_grid, k_grid);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << '\n';
    return 1;
  }
  return 2;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("rank1sense");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(int(argv.size()), argv.data());
}

}  // namespace rank1sense::cli
