#include <doctest.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dppflow/errors.hpp"
#include "dppflow/linalg.hpp"
#include "dppflow/rng.hpp"
#include "test_helpers.hpp"

using namespace dppflow;

TEST_CASE("pairwise_sq_dists basics") {
  Eigen::MatrixXd pts(2, 2);
  pts << 0, 0, 3, 4;
  const SymMatrix d = pairwise_sq_dists(pts);
  CHECK(d.order == 2);
  CHECK(d(0, 0) == 0.0);
  CHECK(d(1, 1) == 0.0);
  CHECK(d(0, 1) == 25.0);
  CHECK(d(1, 0) == 25.0);

  Eigen::MatrixXd single(1, 2);
  single << 1, 1;
  const SymMatrix d1 = pairwise_sq_dists(single);
  CHECK(d1.order == 1);
  CHECK(d1(0, 0) == 0.0);
}

TEST_CASE("pairwise_sq_dists matches direct per-coordinate summation") {
  Rng rng(7);
  const Eigen::MatrixXd pts = testutil::random_points(rng, 3, 2);
  const SymMatrix d = pairwise_sq_dists(pts);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double expect = 0.0;
      for (int c = 0; c < 2; ++c) {
        const double diff = pts(i, c) - pts(j, c);
        expect += diff * diff;
      }
      CHECK(d(i, j) == doctest::Approx(expect).epsilon(1e-15));
    }
  }
}

TEST_CASE("pairwise_sq_dists rejects non-finite input") {
  Eigen::MatrixXd pts(2, 2);
  pts << 0, 0, std::nan(""), 1;
  CHECK_THROWS_AS(pairwise_sq_dists(pts), Error);
}

TEST_CASE("pairwise_sq_dists translation invariance") {
  // Exact on a dyadic grid where adding an integer shift is representable.
  Rng rng(11);
  Eigen::MatrixXd pts(5, 3);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) pts(i, j) = std::floor(rng.uniform(-32.0, 32.0)) / 16.0;
  Eigen::MatrixXd shifted = pts;
  shifted.col(0).array() += 3.0;
  shifted.col(1).array() -= 7.0;
  shifted.col(2).array() += 1.0;
  const SymMatrix a = pairwise_sq_dists(pts);
  const SymMatrix b = pairwise_sq_dists(shifted);
  for (std::size_t i = 0; i < a.entries.size(); ++i) CHECK(a.entries[i] == b.entries[i]);

  // Loose bound for arbitrary real shifts.
  const Eigen::MatrixXd real_pts = testutil::random_points(rng, 6, 2);
  Eigen::MatrixXd real_shift = real_pts;
  real_shift.array() += 0.731;
  const SymMatrix c = pairwise_sq_dists(real_pts);
  const SymMatrix e = pairwise_sq_dists(real_shift);
  for (std::size_t i = 0; i < c.entries.size(); ++i)
    CHECK(std::abs(c.entries[i] - e.entries[i]) <= 1e-12);
}

TEST_CASE("median_upper odd, even, constant") {
  SymMatrix odd(3);
  odd.set(0, 1, 1.0);
  odd.set(0, 2, 4.0);
  odd.set(1, 2, 9.0);
  CHECK(median_upper(odd) == 4.0);

  // Upper entries {0.5, 1, 2, 3, 10, 20}: even count, mean of the middle two.
  SymMatrix even(4);
  even.set(0, 1, 1.0);
  even.set(0, 2, 2.0);
  even.set(0, 3, 3.0);
  even.set(1, 2, 10.0);
  even.set(1, 3, 0.5);
  even.set(2, 3, 20.0);
  CHECK(median_upper(even) == 2.5);

  SymMatrix constant(4);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) constant.set(i, j, 7.25);
  CHECK(median_upper(constant) == 7.25);

  SymMatrix one(1);
  CHECK_THROWS_AS(median_upper(one), Error);
}

TEST_CASE("cholesky_logdet closed forms") {
  for (int n : {1, 3, 6}) {
    SymMatrix eye(n);
    for (int i = 0; i < n; ++i) eye.set(i, i, 1.0);
    CHECK(cholesky_logdet(eye) == doctest::Approx(0.0).epsilon(1e-14));
  }
  SymMatrix two(2);
  two.set(0, 0, 1.0);
  two.set(1, 1, 1.0);
  two.set(0, 1, 0.5);
  CHECK(cholesky_logdet(two) == doctest::Approx(std::log(0.75)).epsilon(1e-14));
}

TEST_CASE("cholesky_logdet matches the eigenvalue route") {
  Rng rng(19);
  const SymMatrix m = testutil::random_spd(rng, 4);
  const auto eig = sym_eigenvalues(m);
  double expect = 0.0;
  for (double lambda : eig) expect += std::log(lambda);
  CHECK(std::abs(cholesky_logdet(m) - expect) <= 1e-10);
}

TEST_CASE("cholesky_logdet vs eigenvalues on random SPD up to order 16") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 15.0);
    const SymMatrix m = testutil::random_spd(rng, std::min(n, 16));
    const auto eig = sym_eigenvalues(m);
    double expect = 0.0;
    for (double lambda : eig) expect += std::log(lambda);
    CHECK(std::abs(cholesky_logdet(m) - expect) <= 1e-8);
  }
}

TEST_CASE("cholesky_logdet raises singular-kernel after max jitter") {
  SymMatrix ones(3);
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) ones.set(i, j, 1.0);
  CHECK_THROWS_AS(cholesky_logdet(ones), Error);
  try {
    cholesky_logdet(ones);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::singular_kernel);
  }
}

TEST_CASE("sym_eigenvalues closed forms") {
  SymMatrix eye(3);
  for (int i = 0; i < 3; ++i) eye.set(i, i, 1.0);
  const auto ev = sym_eigenvalues(eye);
  for (double v : ev) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));

  SymMatrix diag(2);
  diag.set(0, 0, 2.0);
  diag.set(1, 1, 5.0);
  const auto dv = sym_eigenvalues(diag);
  CHECK(dv[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(dv[1] == doctest::Approx(5.0).epsilon(1e-14));

  SymMatrix ones(3);
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) ones.set(i, j, 1.0);
  const auto ov = sym_eigenvalues(ones);
  CHECK(std::abs(ov[0]) <= 1e-12);
  CHECK(std::abs(ov[1]) <= 1e-12);
  CHECK(ov[2] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("sym_eigen reconstruction residual") {
  Rng rng(31);
  for (int n : {2, 5, 12, 32}) {
    const SymMatrix m = testutil::random_spd(rng, n);
    const auto res = sym_eigen(m);
    Eigen::MatrixXd mat(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mat(i, j) = m(i, j);
    Eigen::VectorXd lam = Eigen::Map<const Eigen::VectorXd>(res.values.data(), n);
    const double resid = (mat * res.vectors - res.vectors * lam.asDiagonal()).norm();
    CHECK(resid <= 1e-8 * n);
  }
}

TEST_CASE("sym_eigen enforces the small-matrix cap") {
  SymMatrix big(kSmallMatrixCap + 1);
  for (int i = 0; i < big.order; ++i) big.set(i, i, 1.0);
  CHECK_THROWS_AS(sym_eigenvalues(big), Error);
}

TEST_CASE("hungarian basics") {
  Eigen::MatrixXd diag_dominant(3, 3);
  diag_dominant << 1, 50, 50, 50, 2, 50, 50, 50, 3;
  const Assignment a = hungarian(diag_dominant);
  CHECK(a.perm == std::vector<int>{0, 1, 2});
  CHECK(a.cost == doctest::Approx(6.0));

  Eigen::MatrixXd swap(2, 2);
  swap << 10, 1, 1, 10;
  const Assignment b = hungarian(swap);
  CHECK(b.perm == std::vector<int>{1, 0});
  CHECK(b.cost == doctest::Approx(2.0));
}

TEST_CASE("hungarian matches exhaustive search on 6x6") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd cost(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) cost(i, j) = rng.uniform(0.0, 10.0);
    const Assignment a = hungarian(cost);

    std::vector<int> perm{0, 1, 2, 3, 4, 5};
    double best = std::numeric_limits<double>::infinity();
    do {
      double total = 0.0;
      for (int i = 0; i < 6; ++i) total += cost(i, perm[i]);
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(a.cost == doctest::Approx(best).epsilon(1e-12));

    // perm must be a permutation
    std::vector<int> sorted = a.perm;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5});
  }
}

TEST_CASE("hungarian never beats itself with the identity pairing") {
  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 7.0);
    Eigen::MatrixXd cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cost(i, j) = rng.uniform(-3.0, 3.0);
    const Assignment a = hungarian(cost);
    CHECK(a.cost <= cost.diagonal().sum() + 1e-12);
  }
}

TEST_CASE("sinkhorn basics") {
  Eigen::MatrixXd one(1, 1);
  one << 4.2;
  const TransportPlan p1 = sinkhorn(one, 1.0, 10);
  CHECK(p1.plan(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::MatrixXd equal(2, 2);
  equal << 3.0, 3.0, 3.0, 3.0;
  const TransportPlan p2 = sinkhorn(equal, 0.7, 50);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(p2.plan(i, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sinkhorn concentrates on the hungarian support for small reg") {
  Rng rng(47);
  Eigen::MatrixXd cost(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cost(i, j) = rng.uniform(0.0, 5.0);
  const Assignment a = hungarian(cost);
  const TransportPlan p = sinkhorn(cost, 0.01, 5000);
  double support_mass = 0.0;
  for (int i = 0; i < 4; ++i) support_mass += p.plan(i, a.perm[i]);
  CHECK(support_mass >= 0.95);
}

TEST_CASE("sinkhorn marginals within tolerance on random inputs") {
  Rng rng(53);
  for (int trial = 0; trial < 8; ++trial) {
    const int r = 2 + static_cast<int>(rng.uniform() * 5.0);
    const int c = 2 + static_cast<int>(rng.uniform() * 5.0);
    Eigen::MatrixXd cost(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) cost(i, j) = rng.uniform(0.0, 4.0);
    const TransportPlan p = sinkhorn(cost, 0.5, 500);
    for (int i = 0; i < r; ++i) CHECK(std::abs(p.plan.row(i).sum() - 1.0 / r) <= p.marginal_tol);
    for (int j = 0; j < c; ++j) CHECK(std::abs(p.plan.col(j).sum() - 1.0 / c) <= p.marginal_tol);
  }
}

TEST_CASE("sinkhorn input validation") {
  Eigen::MatrixXd cost(2, 2);
  cost << 1, 2, 3, 4;
  CHECK_THROWS_AS(sinkhorn(cost, 0.0, 10), Error);
  CHECK_THROWS_AS(sinkhorn(cost, 1.0, 0), Error);
}
