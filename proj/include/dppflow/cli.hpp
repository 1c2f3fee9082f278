#pragma once

// Operator surface: train / sample / bench-modes / bench-ideal / sweep /
// inpaint-demo. Flags mirror config keys and override them; every command
// writes its resolved config next to its outputs. Exit codes: 0 success,
// 2 config error, 3 numeric failure, 4 IO.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dppflow/bench.hpp"
#include "dppflow/cfm.hpp"
#include "dppflow/config.hpp"
#include "dppflow/errors.hpp"
#include "dppflow/gmm.hpp"
#include "dppflow/guidance.hpp"
#include "dppflow/report.hpp"
#include "dppflow/rng.hpp"
#include "dppflow/velocity_net.hpp"

namespace dppflow::cli {

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create output directory " + dir + ": " + ec.message());
}

inline void write_resolved_config(const RunConfig& cfg) {
  ensure_dir(cfg.output_dir);
  const std::string path = cfg.output_dir + "/config.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << run_config_to_json(cfg).dump(2) << "\n";
}

inline std::string series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[i % 8];
}

}  // namespace detail

// Trains one checkpoint per requested formulation from a shared config.
inline void cmd_train(RunConfig cfg, std::vector<std::string> formulations) {
  if (formulations.empty()) {
    if (!cfg.flow_path.formulation)
      throw Error(ErrorKind::config, "missing key: flow_path.formulation");
    formulations.push_back(*cfg.flow_path.formulation);
  }
  detail::write_resolved_config(cfg);
  for (const std::string& name : formulations) {
    FlowPathSpec spec;
    spec.formulation = parse_formulation(name);
    spec.sigma_fm = cfg.flow_path.sigma_fm;
    spec.sb_sigma = cfg.flow_path.sb_sigma;
    const TrainResult result = train(spec, cfg.train_config());
    const std::string base = cfg.output_dir + "/checkpoint_" + name;
    save_checkpoint(base + ".json", result.checkpoint);
    write_training_log_csv(cfg.output_dir + "/training_log_" + name + ".csv", result.log);
    std::cout << "trained " << name << ": smoothed loss " << result.initial_smoothed_loss
              << " -> " << result.final_smoothed_loss << ", wrote " << base << ".json\n";
  }
}

inline void cmd_sample(RunConfig cfg) {
  if (cfg.sample.checkpoint.empty())
    throw Error(ErrorKind::config, "missing key: sample.checkpoint");
  const Checkpoint ck = load_checkpoint(cfg.sample.checkpoint);
  const GmmSpec source = build_gmm(cfg.source_gmm);
  if (source.dim != ck.field.input_dim)
    throw Error(ErrorKind::config, "source dimension does not match the checkpoint");
  detail::write_resolved_config(cfg);

  Rng rng(cfg.seed);
  ParticleBatch x0{gmm_sample(source, rng, cfg.sample.k), 0.0};
  const Eigen::MatrixXd source_points = x0.points;
  const std::vector<ParticleBatch> traj =
      sample_flow(ck.field, x0, cfg.guidance_config(), cfg.solver_config());

  write_samples_csv(cfg.output_dir + "/samples.csv", traj.back());
  if (cfg.sample.dump_trajectory)
    write_trajectory_csv(cfg.output_dir + "/trajectory.csv", 0, traj);
  svg_scatter(cfg.output_dir + "/scatter.svg",
              {{"source", "#7f7f7f", source_points}, {"samples", "#d62728", traj.back().points}});
  std::cout << "wrote " << cfg.output_dir << "/samples.csv (" << cfg.sample.k << " rows)\n";
}

inline void cmd_bench_modes(RunConfig cfg) {
  if (cfg.bench.checkpoints.empty())
    throw Error(ErrorKind::config, "missing key: bench.checkpoints");
  if (cfg.bench.k_min < 1 || cfg.bench.k_max < cfg.bench.k_min)
    throw Error(ErrorKind::config, "bench: need 1 <= k_min <= k_max");
  const GmmSpec source = build_gmm(cfg.source_gmm);
  const GmmSpec target = build_gmm(cfg.target_gmm);
  detail::write_resolved_config(cfg);

  std::vector<BenchCsvRow> rows;
  std::vector<SvgSeries> series;
  for (const std::string& ck_path : cfg.bench.checkpoints) {
    const Checkpoint ck = load_checkpoint(ck_path);
    for (const std::string& method : cfg.bench.methods) {
      GuidanceConfig gcfg = cfg.guidance_config();
      gcfg.method = parse_method(method);
      SvgSeries s;
      s.label = ck.formulation + "/" + method;
      s.color = detail::series_color(series.size());
      for (int k = cfg.bench.k_min; k <= cfg.bench.k_max; ++k) {
        const BenchResult r =
            run_mode_trials(ck.field, source, target, gcfg, cfg.solver_config(), k,
                            cfg.bench.trials, cfg.seed, cfg.bench.radius_mult, cfg.bench.workers);
        rows.push_back({method, ck.formulation, k, r.trials, r.modes_mean, r.modes_std,
                        r.modes_max});
        s.xs.push_back(k);
        s.ys.push_back(r.modes_mean);
        std::cout << ck.formulation << " " << method << " K=" << k << ": modes_mean "
                  << r.modes_mean << " max " << r.modes_max << "\n";
      }
      series.push_back(std::move(s));
    }
  }
  write_bench_csv(cfg.output_dir + "/bench_modes.csv", rows);
  svg_lines(cfg.output_dir + "/bench_modes.svg", series);
}

// True-score benchmark on the symmetric uniform circle mixture.
inline void cmd_bench_ideal(RunConfig cfg, int modes, int k, double noise_level, double strength,
                            const std::string& method) {
  cfg.target_gmm = GmmSection{"circle", 0, modes, 2, "uniform"};
  cfg.guidance.method = method;
  cfg.guidance.strength = strength;
  cfg.guidance.schedule = "sigma_path";
  cfg.solver.noise_level = noise_level;
  detail::write_resolved_config(cfg);
  const GmmSpec gmm = build_gmm(cfg.target_gmm);

  std::vector<BenchCsvRow> rows;
  SvgSeries s{method, "#d62728", {}, {}};
  for (int budget = cfg.bench.k_min; budget <= std::max(cfg.bench.k_max, k); ++budget) {
    if (k > 0 && budget != k) continue;  // single-K mode when -K given
    const BenchResult r =
        run_mode_trials_ideal(gmm, cfg.guidance_config(), cfg.solver_config(), budget,
                              cfg.bench.trials, cfg.seed, cfg.bench.radius_mult,
                              cfg.bench.workers);
    rows.push_back({method, "ideal-score", budget, r.trials, r.modes_mean, r.modes_std,
                    r.modes_max});
    s.xs.push_back(budget);
    s.ys.push_back(r.modes_mean);
    std::cout << "ideal-score " << method << " K=" << budget << ": modes_mean " << r.modes_mean
              << " max " << r.modes_max << "\n";
  }
  write_bench_csv(cfg.output_dir + "/bench_ideal.csv", rows);
  svg_lines(cfg.output_dir + "/bench_ideal.svg", {s});
}

inline void cmd_sweep(RunConfig cfg, int modes) {
  cfg.target_gmm = GmmSection{"circle", 0, modes, 2, "uniform"};
  detail::write_resolved_config(cfg);
  const GmmSpec gmm = build_gmm(cfg.target_gmm);
  const SweepGrid grid = sweep_heatmap(
      gmm, cfg.sweep.noise_levels, cfg.sweep.strengths, parse_method(cfg.sweep.method),
      cfg.sweep.k, cfg.sweep.trials, cfg.guidance_config(), cfg.solver_config(), cfg.seed,
      cfg.bench.radius_mult, cfg.bench.workers);
  write_sweep_csv(cfg.output_dir + "/sweep.csv", grid);
  svg_heatmap(cfg.output_dir + "/sweep.svg", grid, "modes_mean, method=" + cfg.sweep.method);
  for (std::size_t i = 0; i < grid.noise_levels.size(); ++i)
    for (std::size_t j = 0; j < grid.strengths.size(); ++j)
      std::cout << "noise " << grid.noise_levels[i] << " W " << grid.strengths[j]
                << ": modes_mean " << grid.cells[i][j].modes_mean << "\n";
}

inline void cmd_inpaint_demo(RunConfig cfg) {
  if (cfg.inpaint.checkpoint.empty())
    throw Error(ErrorKind::config, "missing key: inpaint.checkpoint");
  if (cfg.inpaint.observed.empty() || cfg.inpaint.mask.size() != cfg.inpaint.observed.size())
    throw Error(ErrorKind::config, "inpaint: observed and mask must be equal-length vectors");
  const Checkpoint ck = load_checkpoint(cfg.inpaint.checkpoint);
  const GmmSpec source = build_gmm(cfg.source_gmm);
  const GmmSpec target = build_gmm(cfg.target_gmm);
  detail::write_resolved_config(cfg);

  InpaintTask task;
  task.observed = Eigen::Map<const Eigen::VectorXd>(cfg.inpaint.observed.data(),
                                                    cfg.inpaint.observed.size());
  task.mask = Eigen::Map<const Eigen::VectorXd>(cfg.inpaint.mask.data(), cfg.inpaint.mask.size());

  GuidanceConfig guided = cfg.guidance_config();
  GuidanceConfig plain = guided;
  plain.method = GuidanceMethod::none;

  const std::string csv_path = cfg.output_dir + "/inpaint_coverage.csv";
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + csv_path);
  out << "trial,modes_guided,modes_unguided\n";
  Eigen::MatrixXd last_guided, last_plain;
  bool warned = false;
  for (int t = 0; t < cfg.inpaint.trials; ++t) {
    Rng rng = trial_rng(cfg.seed, t);
    ParticleBatch x0{gmm_sample(source, rng, cfg.sample.k), 0.0};
    const InpaintResult g = mcg_inpaint(ck.field, task, x0, guided, cfg.solver_config());
    const InpaintResult p = mcg_inpaint(ck.field, task, x0, plain, cfg.solver_config());
    warned = warned || g.fully_observed;
    out << t << "," << count_modes(g.batch.points, target, cfg.bench.radius_mult) << ","
        << count_modes(p.batch.points, target, cfg.bench.radius_mult) << "\n";
    last_guided = g.batch.points;
    last_plain = p.batch.points;
  }
  if (warned) std::cout << "warning: mask is all-ones; outputs equal the observed vector\n";
  svg_scatter(cfg.output_dir + "/inpaint.svg",
              {{"guided", "#d62728", last_guided}, {"unguided", "#1f77b4", last_plain}});
  std::cout << "wrote " << csv_path << " (" << cfg.inpaint.trials << " paired trials)\n";
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"DPP-guided diverse sampling from flow-matching models"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--config", config_path, "run config JSON (defaults apply when omitted)");
  app.add_option("--out", out_dir, "output directory (overrides config output_dir)");
  app.add_option("--seed", seed_flag, "seed (overrides config and DPPFLOW_SEED)");

  auto* tr = app.add_subcommand("train", "train velocity fields");
  std::vector<std::string> formulations;
  tr->add_option("--formulation", formulations,
                 "formulation(s): CFM, MB-OT, SB-CFM, SI-CFM (repeatable)");
  std::optional<int> tr_steps, tr_batch, tr_hidden, tr_layers;
  tr->add_option("--steps", tr_steps, "training steps");
  tr->add_option("--batch-size", tr_batch, "batch size");
  tr->add_option("--hidden-dim", tr_hidden, "hidden width");
  tr->add_option("--num-layers", tr_layers, "affine layer count");

  auto* sa = app.add_subcommand("sample", "sample a trained flow");
  std::string sa_ckpt;
  std::optional<int> sa_k, sa_steps;
  std::optional<std::string> sa_method, sa_schedule, sa_objective;
  std::optional<double> sa_strength, sa_h;
  bool sa_traj = false;
  sa->add_option("--checkpoint", sa_ckpt, "checkpoint file");
  sa->add_option("-K,--k", sa_k, "number of particles");
  sa->add_option("--steps", sa_steps, "Euler steps");
  sa->add_option("--method", sa_method, "none | diverseflow | particle_guidance");
  sa->add_option("--strength", sa_strength, "guidance strength W");
  sa->add_option("--schedule", sa_schedule, "sqrt_one_minus_t | sigma_path");
  sa->add_option("--objective", sa_objective, "exact | soft");
  sa->add_option("--kernel-h", sa_h, "kernel spread h");
  sa->add_flag("--dump-trajectory", sa_traj, "write trajectory.csv");

  auto* bm = app.add_subcommand("bench-modes", "mode-discovery benchmark for trained flows");
  std::vector<std::string> bm_ckpts, bm_methods;
  std::optional<int> bm_kmin, bm_kmax, bm_trials, bm_workers, bm_steps;
  std::optional<double> bm_radius, bm_strength;
  bm->add_option("--checkpoint", bm_ckpts, "checkpoint file(s) (repeatable)");
  bm->add_option("--method", bm_methods, "guidance method(s) (repeatable)");
  bm->add_option("--k-min", bm_kmin, "smallest budget K");
  bm->add_option("--k-max", bm_kmax, "largest budget K");
  bm->add_option("--trials", bm_trials, "trials per cell");
  bm->add_option("--workers", bm_workers, "worker threads (0 = all cores)");
  bm->add_option("--radius-mult", bm_radius, "mode-discovery radius multiplier");
  bm->add_option("--strength", bm_strength, "guidance strength W");
  bm->add_option("--steps", bm_steps, "Euler steps");

  auto* bi = app.add_subcommand("bench-ideal", "mode discovery with the true circle-GMM score");
  int bi_modes = 10, bi_k = 10;
  double bi_noise = 0.0, bi_strength = 2.0;
  std::string bi_method = "diverseflow";
  std::optional<int> bi_trials, bi_workers;
  bi->add_option("--modes", bi_modes, "mixture mode count");
  bi->add_option("-K,--k", bi_k, "number of particles");
  bi->add_option("--noise-level", bi_noise, "lambda in [0,1]");
  bi->add_option("--strength", bi_strength, "guidance strength W");
  bi->add_option("--method", bi_method, "none | diverseflow | particle_guidance");
  bi->add_option("--trials", bi_trials, "trials");
  bi->add_option("--workers", bi_workers, "worker threads");

  auto* sw = app.add_subcommand("sweep", "noise x strength heatmap with the true score");
  int sw_modes = 10;
  std::vector<double> sw_noise, sw_strengths;
  std::optional<std::string> sw_method;
  std::optional<int> sw_k, sw_trials, sw_workers;
  sw->add_option("--modes", sw_modes, "mixture mode count");
  sw->add_option("--noise-levels", sw_noise, "lambda grid");
  sw->add_option("--strengths", sw_strengths, "W grid");
  sw->add_option("--method", sw_method, "diverseflow | particle_guidance");
  sw->add_option("-K,--k", sw_k, "number of particles");
  sw->add_option("--trials", sw_trials, "trials per cell");
  sw->add_option("--workers", sw_workers, "worker threads");

  auto* ip = app.add_subcommand("inpaint-demo", "masked-vector MCG inpainting demo");
  std::string ip_ckpt;
  std::vector<double> ip_observed, ip_mask;
  std::optional<int> ip_trials, ip_k;
  std::optional<double> ip_strength;
  ip->add_option("--checkpoint", ip_ckpt, "checkpoint file");
  ip->add_option("--observed", ip_observed, "observed vector y");
  ip->add_option("--mask", ip_mask, "binary mask (1 = known)");
  ip->add_option("--trials", ip_trials, "paired trials");
  ip->add_option("-K,--k", ip_k, "particles per trial");
  ip->add_option("--strength", ip_strength, "guidance strength W");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (seed_flag) cfg.seed = *seed_flag;
    if (!out_dir.empty()) cfg.output_dir = out_dir;

    if (tr->parsed()) {
      if (tr_steps) cfg.train.steps = *tr_steps;
      if (tr_batch) cfg.train.batch_size = *tr_batch;
      if (tr_hidden) cfg.train.hidden_dim = *tr_hidden;
      if (tr_layers) cfg.train.num_layers = *tr_layers;
      if (formulations.size() == 1) cfg.flow_path.formulation = formulations.front();
      cmd_train(cfg, formulations);
    } else if (sa->parsed()) {
      if (!sa_ckpt.empty()) cfg.sample.checkpoint = sa_ckpt;
      if (sa_k) cfg.sample.k = *sa_k;
      if (sa_steps) cfg.solver.steps = *sa_steps;
      if (sa_method) cfg.guidance.method = *sa_method;
      if (sa_strength) cfg.guidance.strength = *sa_strength;
      if (sa_schedule) cfg.guidance.schedule = *sa_schedule;
      if (sa_objective) cfg.guidance.objective = *sa_objective;
      if (sa_h) cfg.guidance.h = *sa_h;
      if (sa_traj) cfg.sample.dump_trajectory = true;
      cmd_sample(cfg);
    } else if (bm->parsed()) {
      if (!bm_ckpts.empty()) cfg.bench.checkpoints = bm_ckpts;
      if (!bm_methods.empty()) cfg.bench.methods = bm_methods;
      if (bm_kmin) cfg.bench.k_min = *bm_kmin;
      if (bm_kmax) cfg.bench.k_max = *bm_kmax;
      if (bm_trials) cfg.bench.trials = *bm_trials;
      if (bm_workers) cfg.bench.workers = *bm_workers;
      if (bm_radius) cfg.bench.radius_mult = *bm_radius;
      if (bm_strength) cfg.guidance.strength = *bm_strength;
      if (bm_steps) cfg.solver.steps = *bm_steps;
      cmd_bench_modes(cfg);
    } else if (bi->parsed()) {
      if (bi_trials) cfg.bench.trials = *bi_trials;
      if (bi_workers) cfg.bench.workers = *bi_workers;
      cfg.bench.k_min = bi_k;
      cfg.bench.k_max = bi_k;
      cmd_bench_ideal(cfg, bi_modes, bi_k, bi_noise, bi_strength, bi_method);
    } else if (sw->parsed()) {
      if (!sw_noise.empty()) cfg.sweep.noise_levels = sw_noise;
      if (!sw_strengths.empty()) cfg.sweep.strengths = sw_strengths;
      if (sw_method) cfg.sweep.method = *sw_method;
      if (sw_k) cfg.sweep.k = *sw_k;
      if (sw_trials) cfg.sweep.trials = *sw_trials;
      if (sw_workers) cfg.bench.workers = *sw_workers;
      cmd_sweep(cfg, sw_modes);
    } else if (ip->parsed()) {
      if (!ip_ckpt.empty()) cfg.inpaint.checkpoint = ip_ckpt;
      if (!ip_observed.empty()) cfg.inpaint.observed = ip_observed;
      if (!ip_mask.empty()) cfg.inpaint.mask = ip_mask;
      if (ip_trials) cfg.inpaint.trials = *ip_trials;
      if (ip_k) cfg.sample.k = *ip_k;
      if (ip_strength) cfg.guidance.strength = *ip_strength;
      if (cfg.guidance.method == "none") cfg.guidance.method = "diverseflow";
      cmd_inpaint_demo(cfg);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace dppflow::cli
