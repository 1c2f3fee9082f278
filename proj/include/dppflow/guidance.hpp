#pragma once

// The coupled guided ODE and every sampler built on it: Euler integration
// with determinantal gradient guidance, the Particle Guidance baseline, the
// ideal-score SDE/ODE noise-interpolation family, masked-vector MCG
// inpainting, and progressively growing kernels.
//
// Sign convention: guidance ascends the DPP log-likelihood (velocity +=
// gamma * grad logL with gamma >= 0); Particle Guidance descends its
// similarity potential. The schedule factor s(t) inside gamma is evaluated at
// each Euler step's end time, so the final step's guidance term is exactly
// zero under the sqrt(1-t) schedule.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dppflow/dpp.hpp"
#include "dppflow/errors.hpp"
#include "dppflow/gmm.hpp"
#include "dppflow/linalg.hpp"
#include "dppflow/rng.hpp"
#include "dppflow/velocity_net.hpp"

namespace dppflow {

enum class GuidanceMethod { none, diverseflow, particle_guidance };
enum class GammaSchedule { sqrt_one_minus_t, sigma_path };
enum class KernelSupport { x_t, x1_hat };
enum class JacobianMode { full, identity };

struct GuidanceConfig {
  GuidanceMethod method = GuidanceMethod::none;
  double strength = 0.0;  // W
  GammaSchedule schedule = GammaSchedule::sqrt_one_minus_t;
  bool normalize_by_grad_norm = true;
  double h = 1.0;
  std::optional<QualityParams> quality;
  DppObjective objective = DppObjective::exact;  // soft fallback on singularity
  KernelSupport pg_kernel_on = KernelSupport::x_t;
  JacobianMode jacobian = JacobianMode::full;
  FeatureMap feature;
  double sigma_max = 10.0;  // sigma_path schedule endpoints
  double sigma_min = 0.01;

  bool active(int k) const { return method != GuidanceMethod::none && strength > 0.0 && k >= 1; }
};

struct SolverConfig {
  int steps = 100;           // uniform Euler grid
  double noise_level = 0.0;  // lambda in [0,1]; 0 = ODE, 1 = full reverse SDE
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw Error(ErrorKind::invalid_input, "SolverConfig: steps >= 1 required");
    if (!(noise_level >= 0.0 && noise_level <= 1.0))
      throw Error(ErrorKind::invalid_input, "SolverConfig: noise_level must lie in [0,1]");
  }
};

struct ParticleBatch {
  Eigen::MatrixXd points;  // k x d
  double t = 0.0;

  int k() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

struct TargetEstimate {
  Eigen::MatrixXd points;
};
struct SourceEstimate {
  Eigen::MatrixXd points;
};

struct InpaintTask {
  Eigen::VectorXd observed;  // y
  Eigen::VectorXd mask;      // 1 = known coordinate, 0 = free

  void validate(int dim) const {
    if (static_cast<int>(observed.size()) != dim || static_cast<int>(mask.size()) != dim)
      throw Error(ErrorKind::invalid_input, "InpaintTask: dimension mismatch");
    if (!observed.allFinite()) throw Error(ErrorKind::invalid_input, "InpaintTask: non-finite y");
    for (int i = 0; i < mask.size(); ++i)
      if (mask[i] != 0.0 && mask[i] != 1.0)
        throw Error(ErrorKind::invalid_input, "InpaintTask: mask entries must be 0 or 1");
  }
};

// x1_hat = x_t + v(x_t, t) (1 - t), per particle.
inline TargetEstimate estimate_x1(const ParticleBatch& batch, const VelocityField& field) {
  const Eigen::MatrixXd v = forward_batch(field, batch.points, batch.t);
  return TargetEstimate{batch.points + (1.0 - batch.t) * v};
}

// x0_hat = x_t - v(x_t, t) t, per particle.
inline SourceEstimate estimate_x0(const ParticleBatch& batch, const VelocityField& field) {
  const Eigen::MatrixXd v = forward_batch(field, batch.points, batch.t);
  return SourceEstimate{batch.points - batch.t * v};
}

// W * s(t) / max(grad_norm, 1e-12). s is sqrt(1-t) or the variance-schedule
// path sigma(t) = sigma_max * (sigma_min/sigma_max)^t.
inline double gamma(const GuidanceConfig& cfg, double t, double grad_norm) {
  if (!(grad_norm >= 0.0)) throw Error(ErrorKind::invalid_input, "gamma: grad_norm >= 0 required");
  double s = 0.0;
  switch (cfg.schedule) {
    case GammaSchedule::sqrt_one_minus_t: s = std::sqrt(std::max(0.0, 1.0 - t)); break;
    case GammaSchedule::sigma_path:
      s = cfg.sigma_max * std::pow(cfg.sigma_min / cfg.sigma_max, t);
      break;
  }
  if (!cfg.normalize_by_grad_norm) return cfg.strength * s;
  return cfg.strength * s / std::max(grad_norm, 1e-12);
}

namespace detail {

// DPP log-likelihood gradient for the live particles, optionally against
// frozen extra repulsors appended to the kernel's point set (the growing
// kernel of the progressive sampler). Returns gamma * composed gradient —
// the term ADDED to the velocities — plus the kernel order used.
struct GuidanceDelta {
  Eigen::MatrixXd delta;
  int kernel_order = 0;
};

inline GuidanceDelta diverseflow_delta(const ParticleBatch& batch, const VelocityField& field,
                                       const Eigen::MatrixXd& velocities,
                                       const GuidanceConfig& cfg, double sched_t,
                                       const Eigen::MatrixXd& extra) {
  const int k = batch.k();
  const double t = batch.t;
  Eigen::MatrixXd points(k + extra.rows(), batch.dim());
  points.topRows(k) = batch.points + (1.0 - t) * velocities;
  if (extra.rows() > 0) points.bottomRows(extra.rows()) = extra;

  std::optional<Eigen::VectorXd> quality;
  if (cfg.quality) {
    const Eigen::MatrixXd x0_hat = batch.points - t * velocities;
    Eigen::VectorXd q(points.rows());
    q.head(k) = quality_vector(x0_hat, *cfg.quality);
    q.tail(extra.rows()).setOnes();  // finished samples count as full quality
    quality = q;
  }

  Eigen::MatrixXd grad_all;
  try {
    grad_all = grad_loglik(points, cfg.h, cfg.feature, quality, cfg.objective);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::singular_kernel) throw;
    grad_all = grad_loglik(points, cfg.h, cfg.feature, quality, DppObjective::soft);
  }

  Eigen::MatrixXd composed = grad_all.topRows(k);
  if (cfg.jacobian == JacobianMode::full && t < 1.0) {
    for (int i = 0; i < k; ++i) {
      const Eigen::VectorXd jt_g =
          vjp_input(field, batch.points.row(i).transpose(), t, composed.row(i).transpose());
      composed.row(i) += (1.0 - t) * jt_g.transpose();
    }
  }
  const double g = gamma(cfg, sched_t, composed.norm());
  return GuidanceDelta{g * composed, static_cast<int>(points.rows())};
}

// Particle Guidance: per-particle potential Phi_i = sum_j L_ij on the chosen
// support; velocities receive -gamma * grad Phi.
inline GuidanceDelta particle_guidance_delta(const ParticleBatch& batch,
                                             const VelocityField& field,
                                             const Eigen::MatrixXd& velocities,
                                             const GuidanceConfig& cfg, double sched_t,
                                             const Eigen::MatrixXd& extra) {
  const int k = batch.k();
  const double t = batch.t;
  const bool on_estimate = cfg.pg_kernel_on == KernelSupport::x1_hat;
  Eigen::MatrixXd support(k + extra.rows(), batch.dim());
  support.topRows(k) = on_estimate ? (batch.points + (1.0 - t) * velocities).eval() : batch.points;
  if (extra.rows() > 0) support.bottomRows(extra.rows()) = extra;

  if (!cfg.feature.is_identity() && !cfg.feature.vjp)
    throw Error(ErrorKind::invalid_input,
                "particle_guidance: custom feature map requires a vjp");
  Eigen::MatrixXd feats = support;
  if (!cfg.feature.is_identity()) {
    for (int i = 0; i < support.rows(); ++i) {
      const Eigen::VectorXd f = cfg.feature.map(support.row(i).transpose());
      if (i == 0) feats.resize(support.rows(), f.size());
      feats.row(i) = f.transpose();
    }
  }
  const SymMatrix dists = pairwise_sq_dists(feats);
  const double med = median_upper(dists);
  if (!(med > 0.0))
    throw Error(ErrorKind::degenerate_input, "particle_guidance: zero bandwidth");

  Eigen::MatrixXd grad_phi = Eigen::MatrixXd::Zero(k, feats.cols());
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < static_cast<int>(feats.rows()); ++j) {
      if (j == i) continue;
      const double l_ij = std::exp(-cfg.h * dists(i, j) / med);
      grad_phi.row(i) += l_ij * (-cfg.h / med) * 2.0 * (feats.row(i) - feats.row(j));
    }
  }
  Eigen::MatrixXd composed(k, batch.dim());
  if (cfg.feature.is_identity()) {
    composed = grad_phi;
  } else {
    for (int i = 0; i < k; ++i)
      composed.row(i) =
          cfg.feature.vjp(support.row(i).transpose(), grad_phi.row(i).transpose()).transpose();
  }
  if (on_estimate && cfg.jacobian == JacobianMode::full && t < 1.0) {
    for (int i = 0; i < k; ++i) {
      const Eigen::VectorXd jt_g =
          vjp_input(field, batch.points.row(i).transpose(), t, composed.row(i).transpose());
      composed.row(i) += (1.0 - t) * jt_g.transpose();
    }
  }
  const double g = gamma(cfg, sched_t, composed.norm());
  return GuidanceDelta{-g * composed, static_cast<int>(support.rows())};
}

inline GuidanceDelta guidance_delta(const ParticleBatch& batch, const VelocityField& field,
                                    const Eigen::MatrixXd& velocities, const GuidanceConfig& cfg,
                                    double sched_t, const Eigen::MatrixXd& extra) {
  if (cfg.method == GuidanceMethod::particle_guidance)
    return particle_guidance_delta(batch, field, velocities, cfg, sched_t, extra);
  return diverseflow_delta(batch, field, velocities, cfg, sched_t, extra);
}

}  // namespace detail

// One Euler step of the coupled guided ODE: x += (v + gamma * grad) dt. With
// guidance off the step is plain per-particle Euler, bitwise.
inline ParticleBatch diverse_step(const ParticleBatch& batch, const VelocityField& field,
                                  const GuidanceConfig& cfg, double dt) {
  if (cfg.method != GuidanceMethod::none && batch.k() < 2)
    throw Error(ErrorKind::invalid_input, "diverse_step: guidance needs k >= 2");
  const Eigen::MatrixXd v = forward_batch(field, batch.points, batch.t);
  ParticleBatch out;
  out.t = batch.t + dt;
  if (!cfg.active(batch.k())) {
    out.points = batch.points + v * dt;
    return out;
  }
  const Eigen::MatrixXd extra(0, batch.dim());
  const detail::GuidanceDelta gd =
      detail::guidance_delta(batch, field, v, cfg, batch.t + dt, extra);
  out.points = batch.points + (v + gd.delta) * dt;
  if (!out.points.allFinite())
    throw Error(ErrorKind::numeric, "diverse_step: non-finite state");
  return out;
}

// Single step of the particle-guidance-modified flow. Same stepping contract
// as diverse_step with the method forced.
inline ParticleBatch particle_guidance_step(const ParticleBatch& batch, const VelocityField& field,
                                            const GuidanceConfig& cfg, double dt) {
  GuidanceConfig pg = cfg;
  pg.method = GuidanceMethod::particle_guidance;
  return diverse_step(batch, field, pg, dt);
}

namespace detail {

// Shared integrator: sample_flow and the progressive rounds run the exact
// same per-step arithmetic (the latter with frozen extra repulsors).
inline std::vector<ParticleBatch> integrate_flow(const VelocityField& field,
                                                 const ParticleBatch& x0,
                                                 const GuidanceConfig& cfg,
                                                 const SolverConfig& scfg,
                                                 const Eigen::MatrixXd& extra,
                                                 std::vector<int>* kernel_orders) {
  scfg.validate();
  if (scfg.noise_level != 0.0)
    throw Error(ErrorKind::invalid_input, "sample_flow: noise_level must be 0 for the flow ODE");
  if (x0.t != 0.0) throw Error(ErrorKind::invalid_input, "sample_flow: batch must start at t = 0");
  if (!x0.points.allFinite())
    throw Error(ErrorKind::invalid_input, "sample_flow: non-finite initial state");
  if (cfg.method != GuidanceMethod::none && x0.k() + extra.rows() < 2)
    throw Error(ErrorKind::invalid_input, "sample_flow: guidance needs k >= 2");

  const int n = scfg.steps;
  std::vector<ParticleBatch> trajectory;
  trajectory.reserve(n + 1);
  trajectory.push_back(x0);
  ParticleBatch batch = x0;
  const bool guided = cfg.active(x0.k());
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double t_next = static_cast<double>(i + 1) / n;
    batch.t = t;
    const Eigen::MatrixXd v = forward_batch(field, batch.points, t);
    if (guided) {
      const GuidanceDelta gd = guidance_delta(batch, field, v, cfg, t_next, extra);
      if (kernel_orders) kernel_orders->push_back(gd.kernel_order);
      batch.points += (v + gd.delta) * (t_next - t);
    } else {
      batch.points += v * (t_next - t);
    }
    batch.t = t_next;
    if (!batch.points.allFinite())
      throw Error(ErrorKind::numeric,
                  "sample_flow: non-finite state at step " + std::to_string(i + 1));
    trajectory.push_back(batch);
  }
  return trajectory;
}

}  // namespace detail

// Uniform-grid Euler integration of Eq-9-style coupled dynamics from t=0 to
// t=1. Returns the full trajectory, steps+1 batches long.
inline std::vector<ParticleBatch> sample_flow(const VelocityField& field, const ParticleBatch& x0,
                                              const GuidanceConfig& cfg, const SolverConfig& scfg) {
  Eigen::MatrixXd extra(0, x0.dim());
  return detail::integrate_flow(field, x0, cfg, scfg, extra, nullptr);
}

// Reverse-time integration of the noise-interpolated family over a
// variance-exploding path with the closed-form noised GMM score:
//   x += (1+lambda)/2 * g^2(s) * score * ds + sqrt(lambda) * g(s) * dW
// lambda = 0 is the probability-flow ODE, lambda = 1 the full reverse SDE.
// DiverseFlow's kernel runs on the Tweedie denoised estimate
// x + sigma(s)^2 * score (identity Jacobian); Particle Guidance follows
// pg_kernel_on.
inline ParticleBatch sample_ideal_score(const GmmSpec& gmm, const GuidanceConfig& cfg,
                                        const SolverConfig& scfg, int k) {
  scfg.validate();
  gmm.validate();
  if (k < 1) throw Error(ErrorKind::invalid_input, "sample_ideal_score: k >= 1 required");
  if (cfg.method != GuidanceMethod::none && k < 2)
    throw Error(ErrorKind::invalid_input, "sample_ideal_score: guidance needs k >= 2");
  const int d = gmm.dim;
  const int n = scfg.steps;
  const double lambda = scfg.noise_level;
  const double log_ratio = std::log(cfg.sigma_max / cfg.sigma_min);

  Rng rng(scfg.seed);
  Eigen::MatrixXd x = cfg.sigma_max * rng.gauss_mat(k, d);
  const bool guided = cfg.active(k);

  for (int i = 0; i < n; ++i) {
    const double s = 1.0 - static_cast<double>(i) / n;
    const double ds = 1.0 / n;
    const double sigma = cfg.sigma_min * std::pow(cfg.sigma_max / cfg.sigma_min, s);
    const double g2 = 2.0 * log_ratio * sigma * sigma;

    Eigen::MatrixXd score(k, d);
    for (int p = 0; p < k; ++p)
      score.row(p) = gmm_noised_score(gmm, x.row(p).transpose(), sigma).transpose();

    Eigen::MatrixXd drift = 0.5 * (1.0 + lambda) * g2 * score;
    if (guided) {
      const double sampler_t_next = static_cast<double>(i + 1) / n;
      if (cfg.method == GuidanceMethod::diverseflow) {
        const Eigen::MatrixXd denoised = x + sigma * sigma * score;
        Eigen::MatrixXd grad;
        try {
          grad = grad_loglik(denoised, cfg.h, cfg.feature, std::nullopt, cfg.objective);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::singular_kernel) throw;
          grad = grad_loglik(denoised, cfg.h, cfg.feature, std::nullopt, DppObjective::soft);
        }
        drift += gamma(cfg, sampler_t_next, grad.norm()) * grad;
      } else {
        const Eigen::MatrixXd support = cfg.pg_kernel_on == KernelSupport::x1_hat
                                            ? (x + sigma * sigma * score).eval()
                                            : x;
        const SymMatrix dists = pairwise_sq_dists(support);
        const double med = median_upper(dists);
        if (med > 0.0) {
          Eigen::MatrixXd grad_phi = Eigen::MatrixXd::Zero(k, d);
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              if (a == b) continue;
              const double l_ab = std::exp(-cfg.h * dists(a, b) / med);
              grad_phi.row(a) += l_ab * (-cfg.h / med) * 2.0 * (support.row(a) - support.row(b));
            }
          drift -= gamma(cfg, sampler_t_next, grad_phi.norm()) * grad_phi;
        }
      }
    }

    x += drift * ds;
    if (lambda > 0.0)
      x += std::sqrt(lambda) * std::sqrt(g2) * std::sqrt(ds) * rng.gauss_mat(k, d);
    if (!x.allFinite())
      throw Error(ErrorKind::numeric,
                  "sample_ideal_score: non-finite state at step " + std::to_string(i + 1));
  }
  return ParticleBatch{std::move(x), 1.0};
}

struct InpaintResult {
  ParticleBatch batch;
  bool fully_observed = false;  // warning: mask was all-ones, output is y
};

// Masked-vector MCG flow inpainting: Euler step with optional guidance, MCG
// correction scaled by alpha(t) = sqrt(1 - t_i), linear interpolation of the
// known region from x0 to y, then masked replacement. The final replacement
// makes masked coordinates equal y exactly.
inline InpaintResult mcg_inpaint(const VelocityField& field, const InpaintTask& task,
                                 const ParticleBatch& x0, const GuidanceConfig& cfg,
                                 const SolverConfig& scfg) {
  scfg.validate();
  task.validate(x0.dim());
  if (scfg.noise_level != 0.0)
    throw Error(ErrorKind::invalid_input, "mcg_inpaint: noise_level must be 0");
  if (x0.t != 0.0) throw Error(ErrorKind::invalid_input, "mcg_inpaint: batch must start at t = 0");
  if (cfg.method != GuidanceMethod::none && x0.k() < 2)
    throw Error(ErrorKind::invalid_input, "mcg_inpaint: guidance needs k >= 2");

  const int k = x0.k();
  const int d = x0.dim();
  const bool mask_any = (task.mask.array() > 0.5).any();
  const bool mask_all = (task.mask.array() > 0.5).all();
  if (mask_all) {
    ParticleBatch out;
    out.t = 1.0;
    out.points = task.observed.transpose().replicate(k, 1);
    return InpaintResult{std::move(out), true};
  }

  const Eigen::MatrixXd origin = x0.points;  // known-region interpolation anchor
  const int n = scfg.steps;
  ParticleBatch batch = x0;
  const bool guided = cfg.active(k);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double t_next = static_cast<double>(i + 1) / n;
    batch.t = t;
    const Eigen::MatrixXd x_pre = batch.points;
    Eigen::MatrixXd v = forward_batch(field, x_pre, t);
    const Eigen::MatrixXd x1_hat = x_pre + (1.0 - t) * v;
    if (guided) {
      Eigen::MatrixXd extra(0, d);
      const detail::GuidanceDelta gd = detail::guidance_delta(batch, field, v, cfg, t_next, extra);
      v += gd.delta;
    }

    // grad_x ||M (y - x1_hat(x))||^2 = (I + (1-t) J^T) (-2 M (y - x1_hat)),
    // evaluated at the pre-step state.
    Eigen::MatrixXd mcg_grad(k, d);
    if (mask_any) {
      for (int p = 0; p < k; ++p) {
        const Eigen::VectorXd cot =
            (-2.0 * task.mask.cwiseProduct(task.observed - x1_hat.row(p).transpose())).eval();
        Eigen::VectorXd grad_x = cot;
        grad_x += (1.0 - t) * vjp_input(field, x_pre.row(p).transpose(), t, cot);
        mcg_grad.row(p) = grad_x.transpose();
      }
    }

    batch.points = x_pre + v * (t_next - t);
    if (mask_any) {
      batch.points -= std::sqrt(1.0 - t) * mcg_grad;
      const Eigen::MatrixXd known =
          origin * (1.0 - t_next) + task.observed.transpose().replicate(k, 1) * t_next;
      for (int p = 0; p < k; ++p)
        for (int c = 0; c < d; ++c)
          if (task.mask[c] == 1.0) batch.points(p, c) = known(p, c);
    }
    batch.t = t_next;
    if (!batch.points.allFinite())
      throw Error(ErrorKind::numeric,
                  "mcg_inpaint: non-finite state at step " + std::to_string(i + 1));
  }
  return InpaintResult{std::move(batch), false};
}

struct ProgressiveResult {
  std::vector<ParticleBatch> rounds;     // finished batch per round
  std::vector<int> kernel_orders;        // kernel order used during each round
  Eigen::MatrixXd all_samples;           // stacked k_per_round * rounds samples
};

// Progressively growing kernel: each round integrates k_per_round fresh
// particles whose DPP kernel includes every previously finished sample as a
// frozen repulsor; gradients flow only into the live particles.
inline ProgressiveResult progressive_sample(const VelocityField& field, const GmmSpec& source,
                                            const GuidanceConfig& cfg, const SolverConfig& scfg,
                                            int k_per_round, int rounds) {
  scfg.validate();
  source.validate();
  if (k_per_round < 1) throw Error(ErrorKind::invalid_input, "progressive_sample: k_per_round >= 1");
  if (rounds < 1) throw Error(ErrorKind::invalid_input, "progressive_sample: rounds >= 1 required");

  const int d = source.dim;
  Rng rng(scfg.seed);
  ProgressiveResult result;
  Eigen::MatrixXd cache(0, d);
  for (int r = 0; r < rounds; ++r) {
    ParticleBatch x0{gmm_sample(source, rng, k_per_round), 0.0};
    std::vector<int> orders;
    const std::vector<ParticleBatch> traj =
        detail::integrate_flow(field, x0, cfg, scfg, cache, &orders);
    const ParticleBatch& finished = traj.back();
    result.kernel_orders.push_back(orders.empty() ? k_per_round + static_cast<int>(cache.rows())
                                                  : orders.front());
    result.rounds.push_back(finished);
    cache.conservativeResize(cache.rows() + k_per_round, d);
    cache.bottomRows(k_per_round) = finished.points;
  }
  result.all_samples = cache;
  return result;
}

}  // namespace dppflow
