#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>

#include "dppflow/linalg.hpp"
#include "dppflow/rng.hpp"

namespace testutil {

inline Eigen::MatrixXd random_points(dppflow::Rng& rng, int k, int d, double scale = 1.0) {
  Eigen::MatrixXd pts(k, d);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) pts(i, j) = scale * rng.gauss();
  return pts;
}

// Well-conditioned random SPD matrix (a Gram matrix of random vectors plus a
// small ridge).
inline dppflow::SymMatrix random_spd(dppflow::Rng& rng, int n, double ridge = 0.1) {
  Eigen::MatrixXd a(n, n + 4);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n + 4; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  Eigen::MatrixXd g = a * a.transpose();
  dppflow::SymMatrix m(n);
  for (int i = 0; i < n; ++i) {
    m.set(i, i, g(i, i) + ridge);
    for (int j = i + 1; j < n; ++j) m.set(i, j, 0.5 * (g(i, j) + g(j, i)));
  }
  return m;
}

// Central finite difference of a scalar function along coordinate (r, c) of a
// matrix argument.
inline double central_diff(const std::function<double(const Eigen::MatrixXd&)>& f,
                           const Eigen::MatrixXd& x, int r, int c, double step) {
  Eigen::MatrixXd hi = x, lo = x;
  hi(r, c) += step;
  lo(r, c) -= step;
  return (f(hi) - f(lo)) / (2.0 * step);
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
  return std::abs(got - want) / denom;
}

}  // namespace testutil
