#include <doctest.h>

#include <Eigen/Core>
#include <cmath>

#include "dppflow/errors.hpp"
#include "dppflow/gmm.hpp"
#include "dppflow/rng.hpp"
#include "test_helpers.hpp"

using namespace dppflow;

TEST_CASE("make_random_gmm circle layout: uniform weights on a radius-5 circle") {
  const GmmSpec spec = make_random_gmm(0, 10, 2, WeightMode::uniform, Layout::circle);
  REQUIRE(spec.mode_count() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(spec.weights[i] == doctest::Approx(0.1).epsilon(1e-15));
    const double angle = 2.0 * M_PI * i / 10.0;
    CHECK(spec.means[i][0] == doctest::Approx(5.0 * std::cos(angle)).epsilon(1e-12));
    CHECK(spec.means[i][1] == doctest::Approx(5.0 * std::sin(angle)).epsilon(1e-12));
  }
}

TEST_CASE("make_random_gmm determinism and separation") {
  const GmmSpec a = make_random_gmm(42, 10, 2, WeightMode::random, Layout::random);
  const GmmSpec b = make_random_gmm(42, 10, 2, WeightMode::random, Layout::random);
  REQUIRE(a.mode_count() == b.mode_count());
  for (int i = 0; i < a.mode_count(); ++i) {
    CHECK(a.means[i] == b.means[i]);
    CHECK(a.scales[i] == b.scales[i]);
    CHECK(a.weights[i] == b.weights[i]);
  }
  double max_sigma = 0.0;
  for (double s : a.scales) {
    CHECK(s >= 0.25);
    CHECK(s <= 0.35);
    max_sigma = std::max(max_sigma, s);
  }
  for (int i = 0; i < a.mode_count(); ++i)
    for (int j = i + 1; j < a.mode_count(); ++j)
      CHECK((a.means[i] - a.means[j]).norm() >= 6.0 * max_sigma);
  double total = 0.0;
  for (double w : a.weights) total += w;
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("make_source_8gauss geometry") {
  const GmmSpec spec = make_source_8gauss();
  REQUIRE(spec.mode_count() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(spec.weights[i] == doctest::Approx(1.0 / 8.0).epsilon(1e-15));
    CHECK(spec.means[i].norm() == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(spec.scales[i] == 0.1);
  }
}

TEST_CASE("make_source_8gauss samples stay near modes") {
  const GmmSpec spec = make_source_8gauss();
  Rng rng(1);
  const Eigen::MatrixXd samples = gmm_sample(spec, rng, 100000);
  int near = 0;
  for (int s = 0; s < samples.rows(); ++s) {
    double best = 1e9;
    for (const auto& mu : spec.means) best = std::min(best, (samples.row(s).transpose() - mu).norm());
    if (best <= 4.0 * 0.1) ++near;
  }
  CHECK(static_cast<double>(near) / samples.rows() >= 0.999);
}

TEST_CASE("gmm_sample single tight mode stays within 6 sigma") {
  GmmSpec spec;
  spec.dim = 2;
  spec.means.push_back(Eigen::Vector2d(3.0, -1.0));
  spec.scales.push_back(1e-4);
  spec.weights.push_back(1.0);
  Rng rng(2);
  const Eigen::MatrixXd samples = gmm_sample(spec, rng, 2000);
  for (int s = 0; s < samples.rows(); ++s)
    CHECK((samples.row(s).transpose() - spec.means[0]).norm() <= 6e-4);
}

TEST_CASE("gmm_sample empirical weights match within 1%") {
  GmmSpec spec;
  spec.dim = 1;
  for (int i = 0; i < 3; ++i) {
    spec.means.push_back(Eigen::VectorXd::Constant(1, 10.0 * i));
    spec.scales.push_back(0.1);
  }
  spec.weights = {0.2, 0.3, 0.5};
  Rng rng(3);
  const Eigen::MatrixXd samples = gmm_sample(spec, rng, 100000);
  std::vector<int> counts(3, 0);
  for (int s = 0; s < samples.rows(); ++s) {
    int best = 0;
    double best_dist = 1e18;
    for (int i = 0; i < 3; ++i) {
      const double dist = std::abs(samples(s, 0) - 10.0 * i);
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    counts[best]++;
  }
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(counts[i] / 1e5 - spec.weights[i]) <= 0.01);
}

TEST_CASE("gmm_sample determinism per seed") {
  const GmmSpec spec = make_source_8gauss();
  Rng a(9), b(9);
  CHECK(gmm_sample(spec, a, 50) == gmm_sample(spec, b, 50));
}

TEST_CASE("gmm_noised_score closed forms") {
  const GmmSpec std_spec = std_normal_spec(2);
  Rng rng(4);
  for (int probe = 0; probe < 5; ++probe) {
    const Eigen::VectorXd x = rng.gauss_vec(2);
    const Eigen::VectorXd score = gmm_noised_score(std_spec, x, 0.0);
    CHECK((score + x).cwiseAbs().maxCoeff() <= 1e-12);
  }

  GmmSpec two;
  two.dim = 2;
  two.means.push_back(Eigen::Vector2d(-2.0, 0.0));
  two.means.push_back(Eigen::Vector2d(2.0, 0.0));
  two.scales = {0.5, 0.5};
  two.weights = {0.5, 0.5};
  const Eigen::VectorXd mid = gmm_noised_score(two, Eigen::Vector2d(0.0, 0.7), 0.3);
  CHECK(std::abs(mid[0]) <= 1e-12);  // symmetric component cancels
}

TEST_CASE("gmm_noised_score matches finite differences of the log density") {
  const GmmSpec spec = make_random_gmm(7, 4, 2, WeightMode::random, Layout::random);
  auto log_density = [&](const Eigen::VectorXd& x, double sigma_t) {
    double acc = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < spec.mode_count(); ++i) {
      const double var = spec.scales[i] * spec.scales[i] + sigma_t * sigma_t;
      const double term = std::log(spec.weights[i]) - std::log(2.0 * M_PI * var) -
                          (x - spec.means[i]).squaredNorm() / (2.0 * var);
      acc = std::max(acc, term) + std::log1p(std::exp(-std::abs(acc - term)));
    }
    return acc;
  };
  Rng rng(5);
  for (int probe = 0; probe < 10; ++probe) {
    const Eigen::VectorXd x = 3.0 * rng.gauss_vec(2);
    const double sigma_t = rng.uniform(0.0, 2.0);
    const Eigen::VectorXd score = gmm_noised_score(spec, x, sigma_t);
    const double step = 1e-6;
    for (int c = 0; c < 2; ++c) {
      Eigen::VectorXd hi = x, lo = x;
      hi[c] += step;
      lo[c] -= step;
      const double fd = (log_density(hi, sigma_t) - log_density(lo, sigma_t)) / (2.0 * step);
      CHECK(testutil::rel_err(score[c], fd) <= 1e-6);
    }
  }
}

TEST_CASE("count_modes basics and monotonicity") {
  const GmmSpec spec = make_random_gmm(11, 6, 2, WeightMode::uniform, Layout::random);
  Eigen::MatrixXd at_means(6, 2);
  for (int i = 0; i < 6; ++i) at_means.row(i) = spec.means[i].transpose();
  CHECK(count_modes(at_means, spec, 3.0) == 6);

  const Eigen::MatrixXd empty(0, 2);
  CHECK(count_modes(empty, spec, 3.0) == 0);

  Eigen::MatrixXd all_first(4, 2);
  for (int i = 0; i < 4; ++i) all_first.row(i) = spec.means[0].transpose();
  CHECK(count_modes(all_first, spec, 3.0) == 1);

  // adding samples never decreases the count
  Rng rng(6);
  Eigen::MatrixXd some = gmm_sample(spec, rng, 5);
  const int before = count_modes(some, spec, 3.0);
  Eigen::MatrixXd more(10, 2);
  more.topRows(5) = some;
  more.bottomRows(5) = gmm_sample(spec, rng, 5);
  CHECK(count_modes(more, spec, 3.0) >= before);
}
