#pragma once

// Mode-discovery trial harnesses. Trials are embarrassingly parallel with
// per-trial RNG streams derived from (master_seed, trial_index) — see
// trial_rng — so results are identical regardless of worker count.

#include <Eigen/Core>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dppflow/errors.hpp"
#include "dppflow/gmm.hpp"
#include "dppflow/guidance.hpp"
#include "dppflow/rng.hpp"
#include "dppflow/velocity_net.hpp"

namespace dppflow {

struct BenchResult {
  int budget_k = 0;
  int trials = 0;
  double modes_mean = 0.0;
  double modes_std = 0.0;
  int modes_max = 0;
  std::vector<int> per_trial;
};

namespace detail {

inline BenchResult aggregate_counts(int k, std::vector<int> counts) {
  BenchResult out;
  out.budget_k = k;
  out.trials = static_cast<int>(counts.size());
  double mean = 0.0;
  for (int c : counts) {
    mean += c;
    out.modes_max = std::max(out.modes_max, c);
  }
  mean /= out.trials;
  double var = 0.0;
  for (int c : counts) var += (c - mean) * (c - mean);
  out.modes_mean = mean;
  out.modes_std = out.trials > 1 ? std::sqrt(var / out.trials) : 0.0;
  out.per_trial = std::move(counts);
  return out;
}

// Runs one_trial(trial_index) for every index on a small worker pool and
// rethrows the first failure tagged with its trial index.
inline std::vector<int> pooled_trials(int trials, int workers,
                                      const std::function<int(int)>& one_trial) {
  if (trials < 1) throw Error(ErrorKind::invalid_input, "run_mode_trials: trials >= 1 required");
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, trials));

  std::vector<int> counts(trials, 0);
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  int first_error_trial = -1;

  auto body = [&]() {
    for (;;) {
      const int idx = next.fetch_add(1);
      if (idx >= trials) return;
      try {
        counts[idx] = one_trial(idx);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error || idx < first_error_trial) {
          first_error = std::current_exception();
          first_error_trial = idx;
        }
        return;
      }
    }
  };

  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& th : pool) th.join();
  }
  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const Error& e) {
      throw Error(e.kind(), "trial " + std::to_string(first_error_trial) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::numeric,
                  "trial " + std::to_string(first_error_trial) + ": " + e.what());
    }
  }
  return counts;
}

}  // namespace detail

// Trained-field harness: per trial, draw K source points, integrate the
// (optionally guided) flow, and count discovered target modes.
inline BenchResult run_mode_trials(const VelocityField& field, const GmmSpec& source,
                                   const GmmSpec& target, const GuidanceConfig& gcfg,
                                   const SolverConfig& scfg, int k, int trials,
                                   std::uint64_t master_seed, double radius_mult, int workers) {
  source.validate();
  target.validate();
  auto one_trial = [&](int idx) {
    Rng rng = trial_rng(master_seed, static_cast<std::uint64_t>(idx));
    ParticleBatch x0{gmm_sample(source, rng, k), 0.0};
    const std::vector<ParticleBatch> traj = sample_flow(field, x0, gcfg, scfg);
    return count_modes(traj.back().points, target, radius_mult);
  };
  return detail::aggregate_counts(k, detail::pooled_trials(trials, workers, one_trial));
}

// Ideal-score harness: the sampler draws its own source points from the
// per-trial stream (scfg.seed is overridden per trial).
inline BenchResult run_mode_trials_ideal(const GmmSpec& gmm, const GuidanceConfig& gcfg,
                                         const SolverConfig& scfg, int k, int trials,
                                         std::uint64_t master_seed, double radius_mult,
                                         int workers) {
  gmm.validate();
  auto one_trial = [&](int idx) {
    SolverConfig trial_cfg = scfg;
    trial_cfg.seed = master_seed + static_cast<std::uint64_t>(idx);
    const ParticleBatch batch = sample_ideal_score(gmm, gcfg, trial_cfg, k);
    return count_modes(batch.points, gmm, radius_mult);
  };
  return detail::aggregate_counts(k, detail::pooled_trials(trials, workers, one_trial));
}

struct SweepGrid {
  std::vector<double> noise_levels;
  std::vector<double> strengths;
  std::vector<std::vector<BenchResult>> cells;  // [noise][strength]
};

// One ideal-score BenchResult per (noise level, strength) cell. W = 0 columns
// reduce to the IID baseline for that noise level.
inline SweepGrid sweep_heatmap(const GmmSpec& gmm, const std::vector<double>& noise_levels,
                               const std::vector<double>& strengths, GuidanceMethod method,
                               int k, int trials, const GuidanceConfig& base_gcfg,
                               const SolverConfig& base_scfg, std::uint64_t master_seed,
                               double radius_mult, int workers) {
  if (noise_levels.empty() || strengths.empty())
    throw Error(ErrorKind::invalid_input, "sweep_heatmap: grids must be non-empty");
  SweepGrid grid;
  grid.noise_levels = noise_levels;
  grid.strengths = strengths;
  for (double lambda : noise_levels) {
    std::vector<BenchResult> row;
    for (double w : strengths) {
      GuidanceConfig gcfg = base_gcfg;
      gcfg.method = method;
      gcfg.strength = w;
      gcfg.schedule = GammaSchedule::sigma_path;
      SolverConfig scfg = base_scfg;
      scfg.noise_level = lambda;
      row.push_back(
          run_mode_trials_ideal(gmm, gcfg, scfg, k, trials, master_seed, radius_mult, workers));
    }
    grid.cells.push_back(std::move(row));
  }
  return grid;
}

}  // namespace dppflow
