#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "dppflow/errors.hpp"
#include "dppflow/velocity_net.hpp"
#include "test_helpers.hpp"

using namespace dppflow;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/dppflow_test_") + name;
}

}  // namespace

TEST_CASE("init_field is deterministic per seed") {
  const VelocityField a = init_field(5, 2, 32, 3);
  const VelocityField b = init_field(5, 2, 32, 3);
  for (int l = 0; l < a.num_layers; ++l) {
    CHECK(a.weights[l] == b.weights[l]);
    CHECK(a.biases[l] == b.biases[l]);
  }
  const VelocityField c = init_field(6, 2, 32, 3);
  bool any_diff = false;
  for (int l = 0; l < a.num_layers && !any_diff; ++l)
    any_diff = (a.weights[l] - c.weights[l]).cwiseAbs().maxCoeff() > 0.0;
  CHECK(any_diff);
}

TEST_CASE("init_field layer dims chain (d+1) -> hidden -> ... -> d") {
  const VelocityField f = init_field(0, 2, 256, 4);
  REQUIRE(f.weights.size() == 4);
  CHECK(f.weights[0].cols() == 3);
  CHECK(f.weights[0].rows() == 256);
  CHECK(f.weights[1].rows() == 256);
  CHECK(f.weights[1].cols() == 256);
  CHECK(f.weights[2].rows() == 256);
  CHECK(f.weights[2].cols() == 256);
  CHECK(f.weights[3].rows() == 2);
  CHECK(f.weights[3].cols() == 256);
  CHECK_THROWS_AS(init_field(0, 2, 16, 1), Error);
}

TEST_CASE("forward with a zeroed final layer is the zero vector") {
  VelocityField f = init_field(1, 2, 16, 3);
  f.weights.back().setZero();
  f.biases.back().setZero();
  Rng rng(2);
  for (int probe = 0; probe < 5; ++probe) {
    const Eigen::VectorXd x = rng.gauss_vec(2);
    const Eigen::VectorXd v = forward(f, x, rng.uniform());
    CHECK(v.norm() == 0.0);
  }
}

TEST_CASE("batched forward equals per-sample forward entrywise") {
  const VelocityField f = init_field(3, 2, 24, 3);
  Rng rng(4);
  const Eigen::MatrixXd x = testutil::random_points(rng, 7, 2);
  const Eigen::MatrixXd batch = forward_batch(f, x, 0.4);
  for (int i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd single = forward(f, x.row(i).transpose(), 0.4);
    CHECK(batch.row(i) == single.transpose());
  }
}

TEST_CASE("forward consumes the time input") {
  const VelocityField f = init_field(9, 2, 16, 3);
  const Eigen::VectorXd x = Eigen::Vector2d(0.3, -0.8);
  const Eigen::VectorXd a = forward(f, x, 0.1);
  const Eigen::VectorXd b = forward(f, x, 0.9);
  CHECK((a - b).norm() > 0.0);
}

TEST_CASE("forward validates inputs") {
  const VelocityField f = init_field(0, 2, 8, 2);
  CHECK_THROWS_AS(forward(f, Eigen::Vector2d(0, 0), 1.5), Error);
  CHECK_THROWS_AS(forward(f, Eigen::Vector2d(std::nan(""), 0), 0.5), Error);
}

TEST_CASE("vjp_input zero cotangent gives zero") {
  const VelocityField f = init_field(12, 2, 16, 3);
  const Eigen::VectorXd g = vjp_input(f, Eigen::Vector2d(0.3, 0.4), 0.2, Eigen::Vector2d(0, 0));
  CHECK(g.norm() == 0.0);
}

TEST_CASE("vjp_input on a linear network matches the explicit weight product") {
  VelocityField f = init_field(13, 2, 8, 3);
  f.activation = "identity";
  // J = W2 * W1 * W0[:, :d] for a purely linear stack.
  Eigen::MatrixXd jac = f.weights[2] * f.weights[1] * f.weights[0].leftCols(2);
  Rng rng(14);
  for (int probe = 0; probe < 5; ++probe) {
    const Eigen::VectorXd u = rng.gauss_vec(2);
    const Eigen::VectorXd got = vjp_input(f, rng.gauss_vec(2), 0.3, u);
    const Eigen::VectorXd want = jac.transpose() * u;
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-13);
  }
}

TEST_CASE("vjp_input matches central finite differences") {
  Rng rng(15);
  int probes = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const VelocityField f = init_field(100 + trial, 2, 16, 3);
    const Eigen::VectorXd x = rng.gauss_vec(2);
    const double t = rng.uniform(0.05, 0.95);
    const Eigen::VectorXd u = rng.gauss_vec(2);
    const Eigen::VectorXd an = vjp_input(f, x, t, u);
    const double step = 1e-4;
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd hi = x, lo = x;
      hi[j] += step;
      lo[j] -= step;
      const double fd = (u.dot(forward(f, hi, t)) - u.dot(forward(f, lo, t))) / (2.0 * step);
      const double denom = std::max({std::abs(an[j]), std::abs(fd), 1e-6});
      CHECK(std::abs(fd - an[j]) / denom <= 1e-5);
    }
    ++probes;
  }
  CHECK(probes >= 20);
}

TEST_CASE("vjp_params zero cotangent gives all-zero gradients") {
  const VelocityField f = init_field(16, 2, 8, 2);
  const ParamGrads g = vjp_params(f, Eigen::Vector2d(1, 2), 0.7, Eigen::Vector2d(0, 0));
  for (const auto& w : g.d_weights) CHECK(w.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& b : g.d_biases) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vjp_params single linear layer is the cotangent/input outer product") {
  VelocityField f;
  f.input_dim = 2;
  f.hidden_dim = 2;
  f.num_layers = 1;
  f.activation = "identity";
  Rng rng(17);
  Eigen::MatrixXd w(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) w(i, j) = rng.gauss();
  f.weights.push_back(w);
  f.biases.push_back(Eigen::VectorXd::Zero(2));

  const Eigen::VectorXd x = Eigen::Vector2d(0.5, -1.5);
  const double t = 0.25;
  const Eigen::VectorXd u = Eigen::Vector2d(2.0, -3.0);
  const ParamGrads g = vjp_params(f, x, t, u);
  Eigen::VectorXd h(3);
  h << 0.5, -1.5, 0.25;
  const Eigen::MatrixXd want = u * h.transpose();
  CHECK((g.d_weights[0] - want).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((g.d_biases[0] - u).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("vjp_params matches central finite differences") {
  Rng rng(18);
  int probes = 0;
  for (int trial = 0; trial < 22; ++trial) {
    VelocityField f = init_field(200 + trial, 2, 6, 3);
    const Eigen::VectorXd x = rng.gauss_vec(2);
    const double t = rng.uniform(0.05, 0.95);
    const Eigen::VectorXd u = rng.gauss_vec(2);
    const ParamGrads an = vjp_params(f, x, t, u);
    const double step = 1e-5;
    // spot-check a handful of coordinates per layer
    for (int l = 0; l < f.num_layers; ++l) {
      const int r = static_cast<int>(rng.uniform() * f.weights[l].rows());
      const int c = static_cast<int>(rng.uniform() * f.weights[l].cols());
      VelocityField hi = f, lo = f;
      hi.weights[l](r, c) += step;
      lo.weights[l](r, c) -= step;
      const double fd = (u.dot(forward(hi, x, t)) - u.dot(forward(lo, x, t))) / (2.0 * step);
      const double denom = std::max({std::abs(an.d_weights[l](r, c)), std::abs(fd), 1e-6});
      CHECK(std::abs(fd - an.d_weights[l](r, c)) / denom <= 1e-4);

      const int br = static_cast<int>(rng.uniform() * f.biases[l].size());
      VelocityField bhi = f, blo = f;
      bhi.biases[l][br] += step;
      blo.biases[l][br] -= step;
      const double bfd = (u.dot(forward(bhi, x, t)) - u.dot(forward(blo, x, t))) / (2.0 * step);
      const double bdenom = std::max({std::abs(an.d_biases[l][br]), std::abs(bfd), 1e-6});
      CHECK(std::abs(bfd - an.d_biases[l][br]) / bdenom <= 1e-4);
    }
    ++probes;
  }
  CHECK(probes >= 20);
}

TEST_CASE("checkpoint round-trip preserves forward outputs and bytes") {
  Checkpoint ck;
  ck.field = init_field(77, 2, 12, 3);
  ck.formulation = "MB-OT";
  ck.train_config_digest = "deadbeef";
  const std::string path = temp_path("ck.json");
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.formulation == "MB-OT");

  Rng rng(78);
  for (int probe = 0; probe < 100; ++probe) {
    const Eigen::VectorXd x = rng.gauss_vec(2);
    const double t = rng.uniform();
    const Eigen::VectorXd a = forward(ck.field, x, t);
    const Eigen::VectorXd b = forward(back.field, x, t);
    CHECK(a == b);
  }

  // save -> load -> save is byte-identical
  const std::string path2 = temp_path("ck2.json");
  save_checkpoint(path2, back);
  std::ifstream f1(path), f2(path2);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint load rejects corruption and unknown versions") {
  const std::string path = temp_path("ck_bad.json");
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  try {
    load_checkpoint(path);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }

  Checkpoint ck;
  ck.field = init_field(1, 2, 4, 2);
  ck.schema_version = 99;
  {
    std::ofstream out(path);
    out << checkpoint_to_json(ck);
  }
  try {
    load_checkpoint(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::version);
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/ck.json"), Error);
}
