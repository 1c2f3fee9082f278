#pragma once

// The learnable velocity field v(x, t): a small fully connected network with
// deterministic initialization, forward evaluation, and vector-Jacobian
// products for both input gradients (guidance backprop) and parameter
// gradients (training). Time enters as one extra input coordinate.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppflow/errors.hpp"
#include "dppflow/rng.hpp"

namespace dppflow {

struct VelocityField {
  int input_dim = 2;   // d; the network consumes d+1 inputs (x, t)
  int hidden_dim = 256;
  int num_layers = 4;  // number of affine layers
  std::string activation = "silu";
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is out x in
  std::vector<Eigen::VectorXd> biases;

  int layer_in(int l) const { return l == 0 ? input_dim + 1 : hidden_dim; }
  int layer_out(int l) const { return l == num_layers - 1 ? input_dim : hidden_dim; }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// "silu" is the default; "identity" gives a purely linear network (used by
// closed-form gradient checks).
inline bool use_silu_activation(const std::string& tag) {
  if (tag == "silu") return true;
  if (tag == "identity") return false;
  throw Error(ErrorKind::invalid_input, "unknown activation tag: " + tag);
}

inline void check_forward_inputs(const VelocityField& f, const Eigen::VectorXd& x, double t) {
  if (static_cast<int>(x.size()) != f.input_dim)
    throw Error(ErrorKind::invalid_input, "forward: x has wrong dimension");
  if (!x.allFinite() || !std::isfinite(t))
    throw Error(ErrorKind::invalid_input, "forward: non-finite input");
  if (t < 0.0 || t > 1.0) throw Error(ErrorKind::invalid_input, "forward: t outside [0,1]");
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

// Deterministic parameters per seed: uniform in +-sqrt(1/fan_in), weights
// drawn row-major then the bias, layer by layer.
inline VelocityField init_field(std::uint64_t seed, int d, int hidden, int layers) {
  if (d < 1 || hidden < 1 || layers < 2)
    throw Error(ErrorKind::invalid_input, "init_field requires d >= 1, hidden >= 1, layers >= 2");
  VelocityField f;
  f.input_dim = d;
  f.hidden_dim = hidden;
  f.num_layers = layers;
  Rng rng(seed);
  for (int l = 0; l < layers; ++l) {
    const int in = f.layer_in(l);
    const int out = f.layer_out(l);
    const double bound = std::sqrt(1.0 / in);
    Eigen::MatrixXd w(out, in);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-bound, bound);
    Eigen::VectorXd b(out);
    for (int i = 0; i < out; ++i) b[i] = rng.uniform(-bound, bound);
    f.weights.push_back(std::move(w));
    f.biases.push_back(std::move(b));
  }
  return f;
}

inline Eigen::VectorXd forward(const VelocityField& f, const Eigen::VectorXd& x, double t) {
  detail::check_forward_inputs(f, x, t);
  const bool silu_act = detail::use_silu_activation(f.activation);
  Eigen::VectorXd h(f.input_dim + 1);
  h.head(f.input_dim) = x;
  h[f.input_dim] = t;
  for (int l = 0; l < f.num_layers; ++l) {
    Eigen::VectorXd s = f.weights[l] * h + f.biases[l];
    if (silu_act && l < f.num_layers - 1)
      for (int i = 0; i < s.size(); ++i) s[i] = detail::silu(s[i]);
    if (!s.allFinite())
      throw Error(ErrorKind::numeric,
                  "forward: layer " + std::to_string(l) + " produced a non-finite value");
    h = std::move(s);
  }
  return h;
}

// Row-wise convenience over a K x d batch; evaluates the per-sample path so
// batched and per-sample results are bitwise identical.
inline Eigen::MatrixXd forward_batch(const VelocityField& f, const Eigen::MatrixXd& x, double t) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) out.row(i) = forward(f, x.row(i).transpose(), t).transpose();
  return out;
}

// J^T u where J = dv/dx at (x, t). Excludes the identity term of the target
// estimate's Jacobian; callers compose u + (1-t) * J^T u themselves.
inline Eigen::VectorXd vjp_input(const VelocityField& f, const Eigen::VectorXd& x, double t,
                                 const Eigen::VectorXd& cotangent) {
  detail::check_forward_inputs(f, x, t);
  if (cotangent.size() != f.input_dim)
    throw Error(ErrorKind::invalid_input, "vjp_input: cotangent has wrong dimension");
  const bool silu_act = detail::use_silu_activation(f.activation);
  std::vector<Eigen::VectorXd> pre;  // pre-activations per layer
  pre.reserve(f.num_layers);
  Eigen::VectorXd h(f.input_dim + 1);
  h.head(f.input_dim) = x;
  h[f.input_dim] = t;
  for (int l = 0; l < f.num_layers; ++l) {
    Eigen::VectorXd s = f.weights[l] * h + f.biases[l];
    if (!s.allFinite())
      throw Error(ErrorKind::numeric,
                  "vjp_input: layer " + std::to_string(l) + " produced a non-finite value");
    pre.push_back(s);
    if (silu_act && l < f.num_layers - 1)
      for (int i = 0; i < s.size(); ++i) s[i] = detail::silu(s[i]);
    h = std::move(s);
  }
  Eigen::VectorXd g = cotangent;
  for (int l = f.num_layers - 1; l >= 0; --l) {
    if (silu_act && l < f.num_layers - 1)
      for (int i = 0; i < g.size(); ++i) g[i] *= detail::silu_grad(pre[l][i]);
    g = (f.weights[l].transpose() * g).eval();
  }
  return g.head(f.input_dim);  // drop the time coordinate
}

struct ParamGrads {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;
};

inline ParamGrads vjp_params(const VelocityField& f, const Eigen::VectorXd& x, double t,
                             const Eigen::VectorXd& cotangent) {
  detail::check_forward_inputs(f, x, t);
  if (cotangent.size() != f.input_dim)
    throw Error(ErrorKind::invalid_input, "vjp_params: cotangent has wrong dimension");
  const bool silu_act = detail::use_silu_activation(f.activation);
  std::vector<Eigen::VectorXd> acts;  // h_0 .. h_{L-1}
  std::vector<Eigen::VectorXd> pre;
  Eigen::VectorXd h(f.input_dim + 1);
  h.head(f.input_dim) = x;
  h[f.input_dim] = t;
  for (int l = 0; l < f.num_layers; ++l) {
    acts.push_back(h);
    Eigen::VectorXd s = f.weights[l] * h + f.biases[l];
    if (!s.allFinite())
      throw Error(ErrorKind::numeric,
                  "vjp_params: layer " + std::to_string(l) + " produced a non-finite value");
    pre.push_back(s);
    if (silu_act && l < f.num_layers - 1)
      for (int i = 0; i < s.size(); ++i) s[i] = detail::silu(s[i]);
    h = std::move(s);
  }
  ParamGrads grads;
  grads.d_weights.resize(f.num_layers);
  grads.d_biases.resize(f.num_layers);
  Eigen::VectorXd g = cotangent;
  for (int l = f.num_layers - 1; l >= 0; --l) {
    if (silu_act && l < f.num_layers - 1)
      for (int i = 0; i < g.size(); ++i) g[i] *= detail::silu_grad(pre[l][i]);
    grads.d_weights[l] = g * acts[l].transpose();
    grads.d_biases[l] = g;
    if (l > 0) g = (f.weights[l].transpose() * g).eval();
  }
  return grads;
}

namespace detail {

// Fused batch loss + parameter gradients for the trainer (GEMM path; the
// public forward/vjp stay per-sample). Loss is mean over the batch of the
// squared residual ||v(x_b, t_b) - u_b||^2.
inline double batch_loss_and_grads(const VelocityField& f, const Eigen::MatrixXd& x,
                                   const Eigen::VectorXd& t, const Eigen::MatrixXd& u,
                                   ParamGrads& grads) {
  const bool silu_act = use_silu_activation(f.activation);
  const int batch = static_cast<int>(x.rows());
  Eigen::MatrixXd a(batch, f.input_dim + 1);
  a.leftCols(f.input_dim) = x;
  a.col(f.input_dim) = t;

  std::vector<Eigen::MatrixXd> acts(f.num_layers);
  std::vector<Eigen::MatrixXd> pre(f.num_layers);
  for (int l = 0; l < f.num_layers; ++l) {
    acts[l] = a;
    Eigen::MatrixXd s = a * f.weights[l].transpose();
    s.rowwise() += f.biases[l].transpose();
    pre[l] = s;
    if (silu_act && l < f.num_layers - 1)
      a = s.unaryExpr([](double v) { return silu(v); });
    else
      a = std::move(s);
  }

  const Eigen::MatrixXd resid = a - u;
  const double loss = resid.squaredNorm() / batch;

  grads.d_weights.resize(f.num_layers);
  grads.d_biases.resize(f.num_layers);
  Eigen::MatrixXd g = (2.0 / batch) * resid;
  for (int l = f.num_layers - 1; l >= 0; --l) {
    if (silu_act && l < f.num_layers - 1)
      g = g.cwiseProduct(pre[l].unaryExpr([](double v) { return silu_grad(v); }));
    grads.d_weights[l] = g.transpose() * acts[l];
    grads.d_biases[l] = g.colwise().sum().transpose();
    if (l > 0) g = (g * f.weights[l]).eval();
  }
  return loss;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Checkpoint file: a single JSON document, schema_version checked on load.
// Field names: schema_version, input_dim, hidden_dim, num_layers, activation,
// formulation, train_config_digest, layers[{in, out, weight(row-major), bias}].

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  int schema_version = kCheckpointSchemaVersion;
  VelocityField field;
  std::string formulation = "CFM";
  std::string train_config_digest;
};

inline std::string checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::json j;
  j["schema_version"] = ck.schema_version;
  j["input_dim"] = ck.field.input_dim;
  j["hidden_dim"] = ck.field.hidden_dim;
  j["num_layers"] = ck.field.num_layers;
  j["activation"] = ck.field.activation;
  j["formulation"] = ck.formulation;
  j["train_config_digest"] = ck.train_config_digest;
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < ck.field.num_layers; ++l) {
    const auto& w = ck.field.weights[l];
    nlohmann::json layer;
    layer["in"] = static_cast<int>(w.cols());
    layer["out"] = static_cast<int>(w.rows());
    std::vector<double> flat(static_cast<std::size_t>(w.size()));
    for (int i = 0; i < w.rows(); ++i)
      for (int jj = 0; jj < w.cols(); ++jj) flat[static_cast<std::size_t>(i) * w.cols() + jj] = w(i, jj);
    layer["weight"] = flat;
    layer["bias"] = std::vector<double>(ck.field.biases[l].data(),
                                        ck.field.biases[l].data() + ck.field.biases[l].size());
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "save_checkpoint: cannot open " + path);
  out << checkpoint_to_json(ck);
  if (!out) throw Error(ErrorKind::io, "save_checkpoint: write failed for " + path);
}

inline Checkpoint checkpoint_from_json(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "checkpoint parse error in " + origin + ": " + e.what());
  }
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw Error(ErrorKind::version, "checkpoint " + origin + ": missing schema_version");
  const int version = j["schema_version"].get<int>();
  if (version != kCheckpointSchemaVersion)
    throw Error(ErrorKind::version, "checkpoint " + origin + ": unknown schema_version " +
                                        std::to_string(version) + " (expected " +
                                        std::to_string(kCheckpointSchemaVersion) + ")");
  try {
    Checkpoint ck;
    ck.schema_version = version;
    ck.field.input_dim = j.at("input_dim").get<int>();
    ck.field.hidden_dim = j.at("hidden_dim").get<int>();
    ck.field.num_layers = j.at("num_layers").get<int>();
    ck.field.activation = j.at("activation").get<std::string>();
    ck.formulation = j.at("formulation").get<std::string>();
    ck.train_config_digest = j.at("train_config_digest").get<std::string>();
    const auto& layers = j.at("layers");
    if (!layers.is_array() || static_cast<int>(layers.size()) != ck.field.num_layers)
      throw Error(ErrorKind::config, "checkpoint " + origin + ": layer count mismatch");
    for (int l = 0; l < ck.field.num_layers; ++l) {
      const auto& layer = layers[l];
      const int in = layer.at("in").get<int>();
      const int out = layer.at("out").get<int>();
      if (in != ck.field.layer_in(l) || out != ck.field.layer_out(l))
        throw Error(ErrorKind::config,
                    "checkpoint " + origin + ": layer " + std::to_string(l) + " shape mismatch");
      const auto flat = layer.at("weight").get<std::vector<double>>();
      const auto bias = layer.at("bias").get<std::vector<double>>();
      if (static_cast<int>(flat.size()) != in * out || static_cast<int>(bias.size()) != out)
        throw Error(ErrorKind::config,
                    "checkpoint " + origin + ": layer " + std::to_string(l) + " array size mismatch");
      Eigen::MatrixXd w(out, in);
      for (int i = 0; i < out; ++i)
        for (int c = 0; c < in; ++c) w(i, c) = flat[static_cast<std::size_t>(i) * in + c];
      ck.field.weights.push_back(std::move(w));
      ck.field.biases.push_back(Eigen::Map<const Eigen::VectorXd>(bias.data(), out));
    }
    if (!ck.field.weights.empty()) {
      for (const auto& w : ck.field.weights)
        if (!w.allFinite())
          throw Error(ErrorKind::config, "checkpoint " + origin + ": non-finite parameter");
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "checkpoint " + origin + ": " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "load_checkpoint: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str(), path);
}

}  // namespace dppflow
