#pragma once

// RunConfig: one JSON document describing a run. Strict parse — unknown keys
// are rejected — and every command writes the fully resolved config next to
// its outputs, so a run can be reproduced from the artifact directory alone.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppflow/cfm.hpp"
#include "dppflow/dpp.hpp"
#include "dppflow/errors.hpp"
#include "dppflow/gmm.hpp"
#include "dppflow/guidance.hpp"

namespace dppflow {

inline GuidanceMethod parse_method(const std::string& s) {
  if (s == "none") return GuidanceMethod::none;
  if (s == "diverseflow") return GuidanceMethod::diverseflow;
  if (s == "particle_guidance") return GuidanceMethod::particle_guidance;
  throw Error(ErrorKind::config, "unknown guidance method: " + s);
}

inline std::string method_name(GuidanceMethod m) {
  switch (m) {
    case GuidanceMethod::none: return "none";
    case GuidanceMethod::diverseflow: return "diverseflow";
    case GuidanceMethod::particle_guidance: return "particle_guidance";
  }
  return "none";
}

inline GammaSchedule parse_schedule(const std::string& s) {
  if (s == "sqrt_one_minus_t") return GammaSchedule::sqrt_one_minus_t;
  if (s == "sigma_path") return GammaSchedule::sigma_path;
  throw Error(ErrorKind::config, "unknown gamma schedule: " + s);
}

inline DppObjective parse_objective(const std::string& s) {
  if (s == "exact") return DppObjective::exact;
  if (s == "soft") return DppObjective::soft;
  throw Error(ErrorKind::config, "unknown dpp objective: " + s);
}

inline KernelSupport parse_support(const std::string& s) {
  if (s == "x_t") return KernelSupport::x_t;
  if (s == "x1_hat") return KernelSupport::x1_hat;
  throw Error(ErrorKind::config, "unknown kernel support: " + s);
}

inline JacobianMode parse_jacobian(const std::string& s) {
  if (s == "full") return JacobianMode::full;
  if (s == "identity") return JacobianMode::identity;
  throw Error(ErrorKind::config, "unknown jacobian mode: " + s);
}

struct GmmSection {
  std::string kind = "std_normal";  // eight_gauss | random | circle | std_normal
  std::uint64_t seed = 0;
  int modes = 10;
  int dim = 2;
  std::string weight_mode = "random";  // random | uniform
};

inline GmmSpec build_gmm(const GmmSection& s) {
  if (s.kind == "eight_gauss") return make_source_8gauss(s.seed);
  if (s.kind == "std_normal") return std_normal_spec(s.dim);
  const WeightMode wm = s.weight_mode == "uniform" ? WeightMode::uniform
                        : s.weight_mode == "random"
                            ? WeightMode::random
                            : throw Error(ErrorKind::config, "unknown weight_mode: " + s.weight_mode);
  if (s.kind == "random") return make_random_gmm(s.seed, s.modes, s.dim, wm, Layout::random);
  if (s.kind == "circle") return make_random_gmm(s.seed, s.modes, s.dim, wm, Layout::circle);
  throw Error(ErrorKind::config, "unknown gmm kind: " + s.kind);
}

struct FlowPathSection {
  std::optional<std::string> formulation;  // required by cmd_train
  double sigma_fm = 0.0;
  double sb_sigma = 0.1;
};

struct TrainSection {
  int batch_size = 256;
  int steps = 20000;
  double learning_rate = 1e-3;
  int hidden_dim = 256;
  int num_layers = 4;
};

struct GuidanceSection {
  std::string method = "none";
  double strength = 0.0;
  std::string schedule = "sqrt_one_minus_t";
  bool normalize_by_grad_norm = true;
  double h = 1.0;
  std::string objective = "exact";
  std::string pg_kernel_on = "x_t";
  std::string jacobian = "full";
  double sigma_max = 10.0;
  double sigma_min = 0.01;
  std::optional<QualityParams> quality;
};

struct SolverSection {
  int steps = 100;
  double noise_level = 0.0;
};

struct SampleSection {
  int k = 5;
  bool dump_trajectory = false;
  std::string checkpoint;
};

struct BenchSection {
  int k_min = 2;
  int k_max = 10;
  int trials = 1000;
  double radius_mult = 3.0;
  int workers = 0;  // 0 = all cores
  std::vector<std::string> checkpoints;
  std::vector<std::string> methods{"none", "diverseflow"};
};

struct SweepSection {
  std::vector<double> noise_levels{0.0, 0.1, 0.3, 1.0};
  std::vector<double> strengths{0.0, 1.0, 2.0, 5.0, 10.0, 20.0};
  std::string method = "diverseflow";
  int k = 10;
  int trials = 100;
};

struct InpaintSection {
  std::vector<double> observed;
  std::vector<double> mask;
  int trials = 200;
  std::string checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  FlowPathSection flow_path;
  TrainSection train;
  GuidanceSection guidance;
  SolverSection solver;
  GmmSection source_gmm{"eight_gauss", 0, 8, 2, "uniform"};
  GmmSection target_gmm{"random", kToyTargetSeed, 10, 2, "random"};
  SampleSection sample;
  BenchSection bench;
  SweepSection sweep;
  InpaintSection inpaint;

  GuidanceConfig guidance_config() const {
    GuidanceConfig g;
    g.method = parse_method(guidance.method);
    g.strength = guidance.strength;
    g.schedule = parse_schedule(guidance.schedule);
    g.normalize_by_grad_norm = guidance.normalize_by_grad_norm;
    g.h = guidance.h;
    g.objective = parse_objective(guidance.objective);
    g.pg_kernel_on = parse_support(guidance.pg_kernel_on);
    g.jacobian = parse_jacobian(guidance.jacobian);
    g.sigma_max = guidance.sigma_max;
    g.sigma_min = guidance.sigma_min;
    g.quality = guidance.quality;
    return g;
  }

  SolverConfig solver_config() const {
    SolverConfig s;
    s.steps = solver.steps;
    s.noise_level = solver.noise_level;
    s.seed = seed;
    return s;
  }

  FlowPathSpec flow_path_spec() const {
    FlowPathSpec spec;
    if (!flow_path.formulation)
      throw Error(ErrorKind::config, "missing key: flow_path.formulation");
    spec.formulation = parse_formulation(*flow_path.formulation);
    spec.sigma_fm = flow_path.sigma_fm;
    spec.sb_sigma = flow_path.sb_sigma;
    return spec;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.batch_size = train.batch_size;
    t.steps = train.steps;
    t.learning_rate = train.learning_rate;
    t.hidden_dim = train.hidden_dim;
    t.num_layers = train.num_layers;
    t.seed = seed;
    t.source = build_gmm(source_gmm);
    t.target = build_gmm(target_gmm);
    return t;
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::config, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw Error(ErrorKind::config, "unknown config key '" + where + "." + it.key() + "'");
  }
}

template <typename T>
void assign_if(const nlohmann::json& j, const char* key, T& target, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::config, "bad value for config key '" + where + "." + key + "'");
  }
}

inline GmmSection parse_gmm_section(const nlohmann::json& j, const std::string& where) {
  check_keys(j, {"kind", "seed", "modes", "dim", "weight_mode"}, where);
  GmmSection s;
  assign_if(j, "kind", s.kind, where);
  assign_if(j, "seed", s.seed, where);
  assign_if(j, "modes", s.modes, where);
  assign_if(j, "dim", s.dim, where);
  assign_if(j, "weight_mode", s.weight_mode, where);
  return s;
}

inline nlohmann::json gmm_to_json(const GmmSection& s) {
  return {{"kind", s.kind}, {"seed", s.seed}, {"modes", s.modes}, {"dim", s.dim},
          {"weight_mode", s.weight_mode}};
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::check_keys(j,
                     {"seed", "output_dir", "flow_path", "train", "guidance", "solver",
                      "source_gmm", "target_gmm", "sample", "bench", "sweep", "inpaint"},
                     "config");
  RunConfig cfg;
  detail::assign_if(j, "seed", cfg.seed, "config");
  detail::assign_if(j, "output_dir", cfg.output_dir, "config");

  if (j.contains("flow_path")) {
    const auto& fp = j.at("flow_path");
    detail::check_keys(fp, {"formulation", "sigma_fm", "sb_sigma"}, "flow_path");
    if (fp.contains("formulation")) {
      std::string f;
      detail::assign_if(fp, "formulation", f, "flow_path");
      parse_formulation(f);  // validate early
      cfg.flow_path.formulation = f;
    }
    detail::assign_if(fp, "sigma_fm", cfg.flow_path.sigma_fm, "flow_path");
    detail::assign_if(fp, "sb_sigma", cfg.flow_path.sb_sigma, "flow_path");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t, {"batch_size", "steps", "learning_rate", "hidden_dim", "num_layers"},
                       "train");
    detail::assign_if(t, "batch_size", cfg.train.batch_size, "train");
    detail::assign_if(t, "steps", cfg.train.steps, "train");
    detail::assign_if(t, "learning_rate", cfg.train.learning_rate, "train");
    detail::assign_if(t, "hidden_dim", cfg.train.hidden_dim, "train");
    detail::assign_if(t, "num_layers", cfg.train.num_layers, "train");
  }
  if (j.contains("guidance")) {
    const auto& g = j.at("guidance");
    detail::check_keys(g,
                       {"method", "strength", "schedule", "normalize_by_grad_norm", "h",
                        "objective", "pg_kernel_on", "jacobian", "sigma_max", "sigma_min",
                        "quality"},
                       "guidance");
    detail::assign_if(g, "method", cfg.guidance.method, "guidance");
    detail::assign_if(g, "strength", cfg.guidance.strength, "guidance");
    detail::assign_if(g, "schedule", cfg.guidance.schedule, "guidance");
    detail::assign_if(g, "normalize_by_grad_norm", cfg.guidance.normalize_by_grad_norm,
                      "guidance");
    detail::assign_if(g, "h", cfg.guidance.h, "guidance");
    detail::assign_if(g, "objective", cfg.guidance.objective, "guidance");
    detail::assign_if(g, "pg_kernel_on", cfg.guidance.pg_kernel_on, "guidance");
    detail::assign_if(g, "jacobian", cfg.guidance.jacobian, "guidance");
    detail::assign_if(g, "sigma_max", cfg.guidance.sigma_max, "guidance");
    detail::assign_if(g, "sigma_min", cfg.guidance.sigma_min, "guidance");
    if (g.contains("quality") && !g.at("quality").is_null()) {
      const auto& q = g.at("quality");
      detail::check_keys(q, {"rho", "epsilon"}, "guidance.quality");
      QualityParams params;
      detail::assign_if(q, "rho", params.rho, "guidance.quality");
      detail::assign_if(q, "epsilon", params.epsilon, "guidance.quality");
      cfg.guidance.quality = params;
    }
    parse_method(cfg.guidance.method);
    parse_schedule(cfg.guidance.schedule);
    parse_objective(cfg.guidance.objective);
    parse_support(cfg.guidance.pg_kernel_on);
    parse_jacobian(cfg.guidance.jacobian);
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    detail::check_keys(s, {"steps", "noise_level"}, "solver");
    detail::assign_if(s, "steps", cfg.solver.steps, "solver");
    detail::assign_if(s, "noise_level", cfg.solver.noise_level, "solver");
  }
  if (j.contains("source_gmm")) cfg.source_gmm = detail::parse_gmm_section(j.at("source_gmm"), "source_gmm");
  if (j.contains("target_gmm")) cfg.target_gmm = detail::parse_gmm_section(j.at("target_gmm"), "target_gmm");
  if (j.contains("sample")) {
    const auto& s = j.at("sample");
    detail::check_keys(s, {"k", "dump_trajectory", "checkpoint"}, "sample");
    detail::assign_if(s, "k", cfg.sample.k, "sample");
    detail::assign_if(s, "dump_trajectory", cfg.sample.dump_trajectory, "sample");
    detail::assign_if(s, "checkpoint", cfg.sample.checkpoint, "sample");
  }
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    detail::check_keys(
        b, {"k_min", "k_max", "trials", "radius_mult", "workers", "checkpoints", "methods"},
        "bench");
    detail::assign_if(b, "k_min", cfg.bench.k_min, "bench");
    detail::assign_if(b, "k_max", cfg.bench.k_max, "bench");
    detail::assign_if(b, "trials", cfg.bench.trials, "bench");
    detail::assign_if(b, "radius_mult", cfg.bench.radius_mult, "bench");
    detail::assign_if(b, "workers", cfg.bench.workers, "bench");
    detail::assign_if(b, "checkpoints", cfg.bench.checkpoints, "bench");
    detail::assign_if(b, "methods", cfg.bench.methods, "bench");
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::check_keys(s, {"noise_levels", "strengths", "method", "k", "trials"}, "sweep");
    detail::assign_if(s, "noise_levels", cfg.sweep.noise_levels, "sweep");
    detail::assign_if(s, "strengths", cfg.sweep.strengths, "sweep");
    detail::assign_if(s, "method", cfg.sweep.method, "sweep");
    detail::assign_if(s, "k", cfg.sweep.k, "sweep");
    detail::assign_if(s, "trials", cfg.sweep.trials, "sweep");
  }
  if (j.contains("inpaint")) {
    const auto& s = j.at("inpaint");
    detail::check_keys(s, {"observed", "mask", "trials", "checkpoint"}, "inpaint");
    detail::assign_if(s, "observed", cfg.inpaint.observed, "inpaint");
    detail::assign_if(s, "mask", cfg.inpaint.mask, "inpaint");
    detail::assign_if(s, "trials", cfg.inpaint.trials, "inpaint");
    detail::assign_if(s, "checkpoint", cfg.inpaint.checkpoint, "inpaint");
  }
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  nlohmann::json fp;
  if (cfg.flow_path.formulation) fp["formulation"] = *cfg.flow_path.formulation;
  fp["sigma_fm"] = cfg.flow_path.sigma_fm;
  fp["sb_sigma"] = cfg.flow_path.sb_sigma;
  j["flow_path"] = fp;
  j["train"] = {{"batch_size", cfg.train.batch_size},
                {"steps", cfg.train.steps},
                {"learning_rate", cfg.train.learning_rate},
                {"hidden_dim", cfg.train.hidden_dim},
                {"num_layers", cfg.train.num_layers}};
  nlohmann::json g = {{"method", cfg.guidance.method},
                      {"strength", cfg.guidance.strength},
                      {"schedule", cfg.guidance.schedule},
                      {"normalize_by_grad_norm", cfg.guidance.normalize_by_grad_norm},
                      {"h", cfg.guidance.h},
                      {"objective", cfg.guidance.objective},
                      {"pg_kernel_on", cfg.guidance.pg_kernel_on},
                      {"jacobian", cfg.guidance.jacobian},
                      {"sigma_max", cfg.guidance.sigma_max},
                      {"sigma_min", cfg.guidance.sigma_min}};
  if (cfg.guidance.quality)
    g["quality"] = {{"rho", cfg.guidance.quality->rho}, {"epsilon", cfg.guidance.quality->epsilon}};
  j["guidance"] = g;
  j["solver"] = {{"steps", cfg.solver.steps}, {"noise_level", cfg.solver.noise_level}};
  j["source_gmm"] = detail::gmm_to_json(cfg.source_gmm);
  j["target_gmm"] = detail::gmm_to_json(cfg.target_gmm);
  j["sample"] = {{"k", cfg.sample.k},
                 {"dump_trajectory", cfg.sample.dump_trajectory},
                 {"checkpoint", cfg.sample.checkpoint}};
  j["bench"] = {{"k_min", cfg.bench.k_min},     {"k_max", cfg.bench.k_max},
                {"trials", cfg.bench.trials},   {"radius_mult", cfg.bench.radius_mult},
                {"workers", cfg.bench.workers}, {"checkpoints", cfg.bench.checkpoints},
                {"methods", cfg.bench.methods}};
  j["sweep"] = {{"noise_levels", cfg.sweep.noise_levels},
                {"strengths", cfg.sweep.strengths},
                {"method", cfg.sweep.method},
                {"k", cfg.sweep.k},
                {"trials", cfg.sweep.trials}};
  j["inpaint"] = {{"observed", cfg.inpaint.observed},
                  {"mask", cfg.inpaint.mask},
                  {"trials", cfg.inpaint.trials},
                  {"checkpoint", cfg.inpaint.checkpoint}};
  return j;
}

// File load + DPPFLOW_SEED env override. Missing path = defaults.
inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::config, "config parse error in " + path + ": " + e.what());
    }
    cfg = parse_run_config(j);
  }
  if (const char* env = std::getenv("DPPFLOW_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (...) {
      throw Error(ErrorKind::config, "DPPFLOW_SEED is not an integer: " + std::string(env));
    }
  }
  return cfg;
}

}  // namespace dppflow
