#pragma once

// Dense symmetric linear algebra for the DPP machinery: pairwise distances,
// medians, Cholesky log-determinants with a jitter policy, a cyclic Jacobi
// eigensolver, and the assignment/transport solvers backing the minibatch
// couplings. Everything here is a pure function of its inputs.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dppflow/errors.hpp"

namespace dppflow {

inline constexpr int kSmallMatrixCap = 64;  // sym_eigen order cap; K <= 32 in practice

struct SymMatrix {
  int order = 0;
  std::vector<double> entries;  // row-major, order*order, entries[i][j] == entries[j][i]

  SymMatrix() = default;

  explicit SymMatrix(int n) : order(n) {
    if (n < 1) throw Error(ErrorKind::invalid_input, "SymMatrix order must be >= 1");
    entries.assign(static_cast<std::size_t>(n) * n, 0.0);
  }

  double operator()(int i, int j) const { return entries[static_cast<std::size_t>(i) * order + j]; }

  // Writes both (i,j) and (j,i) so symmetry holds exactly as stored.
  void set(int i, int j, double v) {
    entries[static_cast<std::size_t>(i) * order + j] = v;
    entries[static_cast<std::size_t>(j) * order + i] = v;
  }

  double trace() const {
    double t = 0.0;
    for (int i = 0; i < order; ++i) t += (*this)(i, i);
    return t;
  }

  SymMatrix plus_identity() const {
    SymMatrix out = *this;
    for (int i = 0; i < order; ++i)
      out.entries[static_cast<std::size_t>(i) * order + i] += 1.0;
    return out;
  }
};

struct Assignment {
  int size = 0;
  std::vector<int> perm;  // row i is assigned column perm[i]; a permutation of 0..size-1
  double cost = 0.0;
};

struct TransportPlan {
  int rows = 0;
  int cols = 0;
  Eigen::MatrixXd plan;        // nonnegative, row sums 1/rows, column sums 1/cols
  double marginal_tol = 1e-6;
};

// D[i][j] = ||x_i - x_j||^2 over the rows of `points` (K x d).
inline SymMatrix pairwise_sq_dists(const Eigen::MatrixXd& points) {
  const int k = static_cast<int>(points.rows());
  const int d = static_cast<int>(points.cols());
  if (k < 1 || d < 1) throw Error(ErrorKind::invalid_input, "pairwise_sq_dists requires K >= 1, d >= 1");
  if (!points.allFinite()) throw Error(ErrorKind::invalid_input, "pairwise_sq_dists: non-finite coordinate");
  SymMatrix dist(k);
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        const double diff = points(i, c) - points(j, c);
        s += diff * diff;
      }
      dist.set(i, j, s);
    }
  }
  return dist;
}

// Median of the strictly-upper-triangle entries; even counts take the mean of
// the two middle values.
inline double median_upper(const SymMatrix& m) {
  if (m.order < 2)
    throw Error(ErrorKind::degenerate_input, "median_upper: order-1 matrix has no off-diagonal entries");
  std::vector<double> upper;
  upper.reserve(static_cast<std::size_t>(m.order) * (m.order - 1) / 2);
  for (int i = 0; i < m.order; ++i)
    for (int j = i + 1; j < m.order; ++j) upper.push_back(m(i, j));
  std::sort(upper.begin(), upper.end());
  const std::size_t n = upper.size();
  if (n % 2 == 1) return upper[n / 2];
  return 0.5 * (upper[n / 2 - 1] + upper[n / 2]);
}

namespace detail {

// Pivot acceptance is relative to the mean diagonal: anything at or below
// kPivotRelTol * trace/order counts as singular. This keeps exactly
// rank-deficient kernels (duplicate particles) detectable — a bare epsilon of
// jitter always makes them numerically factorable, which is not the verdict
// the DPP wants.
inline constexpr double kPivotRelTol = 2e-6;

// Plain lower Cholesky of M + diag_add*I. Returns false on a small,
// non-positive, or non-finite pivot.
inline bool try_cholesky(const SymMatrix& m, double diag_add, double pivot_floor,
                         std::vector<double>& lower) {
  const int n = m.order;
  lower.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    double diag = m(j, j) + diag_add;
    for (int c = 0; c < j; ++c) diag -= lower[static_cast<std::size_t>(j) * n + c] * lower[static_cast<std::size_t>(j) * n + c];
    if (!(diag > pivot_floor) || !std::isfinite(diag)) return false;
    const double ljj = std::sqrt(diag);
    lower[static_cast<std::size_t>(j) * n + j] = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (int c = 0; c < j; ++c)
        s -= lower[static_cast<std::size_t>(i) * n + c] * lower[static_cast<std::size_t>(j) * n + c];
      lower[static_cast<std::size_t>(i) * n + j] = s / ljj;
    }
  }
  return true;
}

struct CholeskyFactor {
  int order = 0;
  std::vector<double> lower;  // row-major lower triangle (full storage)
  double diag_add = 0.0;      // jitter that was required
};

// Jitter policy: plain attempt first, then 1e-12*trace/order escalating by
// x10 up to 1e-6*trace/order. Duplicate particles legitimately produce a
// singular kernel, so failure is reported as singular_kernel for callers to
// detect.
inline CholeskyFactor cholesky_factor(const SymMatrix& m) {
  CholeskyFactor f;
  f.order = m.order;
  const double base = std::abs(m.trace()) / m.order;
  const double unit = (base > 0.0) ? base : 1.0;
  const double pivot_floor = kPivotRelTol * unit;
  if (try_cholesky(m, 0.0, pivot_floor, f.lower)) return f;
  for (double scale = 1e-12; scale <= 1e-6 * 1.0000001; scale *= 10.0) {
    const double add = scale * unit;
    if (try_cholesky(m, add, pivot_floor, f.lower)) {
      f.diag_add = add;
      return f;
    }
  }
  throw Error(ErrorKind::singular_kernel,
              "matrix not positive definite after max jitter (1e-6*trace/order)");
}

inline void cholesky_solve_in_place(const CholeskyFactor& f, Eigen::MatrixXd& b) {
  const int n = f.order;
  // forward: L y = b
  for (int col = 0; col < b.cols(); ++col) {
    for (int i = 0; i < n; ++i) {
      double s = b(i, col);
      for (int c = 0; c < i; ++c) s -= f.lower[static_cast<std::size_t>(i) * n + c] * b(c, col);
      b(i, col) = s / f.lower[static_cast<std::size_t>(i) * n + i];
    }
    // backward: L^T x = y
    for (int i = n - 1; i >= 0; --i) {
      double s = b(i, col);
      for (int c = i + 1; c < n; ++c) s -= f.lower[static_cast<std::size_t>(c) * n + i] * b(c, col);
      b(i, col) = s / f.lower[static_cast<std::size_t>(i) * n + i];
    }
  }
}

}  // namespace detail

// log det(M) as twice the sum of log Cholesky diagonal entries, under the
// jitter policy above.
inline double cholesky_logdet(const SymMatrix& m) {
  const auto f = detail::cholesky_factor(m);
  double acc = 0.0;
  for (int i = 0; i < m.order; ++i)
    acc += std::log(f.lower[static_cast<std::size_t>(i) * m.order + i]);
  return 2.0 * acc;
}

// Solves M X = B for SPD M (same jitter policy). This is the only inversion
// route exposed; no generic inverse.
inline Eigen::MatrixXd cholesky_solve(const SymMatrix& m, const Eigen::MatrixXd& b) {
  if (static_cast<int>(b.rows()) != m.order)
    throw Error(ErrorKind::invalid_input, "cholesky_solve: dimension mismatch");
  const auto f = detail::cholesky_factor(m);
  Eigen::MatrixXd x = b;
  detail::cholesky_solve_in_place(f, x);
  return x;
}

struct SymEigenResult {
  std::vector<double> values;   // ascending
  Eigen::MatrixXd vectors;      // column a is the eigenvector for values[a]
  int sweeps = 0;
};

// Cyclic Jacobi for symmetric matrices of order <= kSmallMatrixCap.
inline SymEigenResult sym_eigen(const SymMatrix& m) {
  const int n = m.order;
  if (n > kSmallMatrixCap)
    throw Error(ErrorKind::invalid_input,
                "sym_eigen: order exceeds the small-matrix cap (" + std::to_string(kSmallMatrixCap) + ")");
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = m(i, j);
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  double norm = a.norm();
  if (norm == 0.0) norm = 1.0;
  const double tol = 1e-15 * norm;
  const int max_sweeps = 100;
  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= tol) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= tol / (n * n)) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  if (sweep == max_sweeps)
    throw Error(ErrorKind::numeric,
                "sym_eigen: Jacobi did not converge after " + std::to_string(max_sweeps) + " sweeps");

  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int x, int y) { return a(x, x) < a(y, y); });
  SymEigenResult res;
  res.sweeps = sweep;
  res.values.resize(n);
  res.vectors.resize(n, n);
  for (int i = 0; i < n; ++i) {
    res.values[i] = a(idx[i], idx[i]);
    res.vectors.col(i) = v.col(idx[i]);
  }
  return res;
}

inline std::vector<double> sym_eigenvalues(const SymMatrix& m) { return sym_eigen(m).values; }

// Minimum-cost perfect assignment on a square cost matrix (shortest
// augmenting paths with potentials, O(n^3)).
inline Assignment hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (n < 1 || cost.cols() != cost.rows())
    throw Error(ErrorKind::invalid_input, "hungarian: cost matrix must be square and non-empty");
  if (!cost.allFinite()) throw Error(ErrorKind::invalid_input, "hungarian: non-finite cost");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  out.size = n;
  out.perm.assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) out.perm[p[j] - 1] = j - 1;
  out.cost = 0.0;
  for (int i = 0; i < n; ++i) out.cost += cost(i, out.perm[i]);
  return out;
}

// Entropic OT with uniform marginals, run in the log domain so small reg
// survives. Stops early once both marginals are within marginal_tol.
inline TransportPlan sinkhorn(const Eigen::MatrixXd& cost, double reg, int iters) {
  const int r = static_cast<int>(cost.rows());
  const int c = static_cast<int>(cost.cols());
  if (r < 1 || c < 1) throw Error(ErrorKind::invalid_input, "sinkhorn: empty cost matrix");
  if (!(reg > 0.0)) throw Error(ErrorKind::invalid_input, "sinkhorn: reg must be > 0");
  if (iters < 1) throw Error(ErrorKind::invalid_input, "sinkhorn: iters must be >= 1");
  if (!cost.allFinite()) throw Error(ErrorKind::invalid_input, "sinkhorn: non-finite cost");

  const double tol = 1e-6;
  const Eigen::ArrayXXd k_log = (-cost / reg).array();
  const double log_mr = std::log(1.0 / r);
  const double log_mc = std::log(1.0 / c);
  Eigen::ArrayXd f = Eigen::ArrayXd::Zero(r);
  Eigen::ArrayXd g = Eigen::ArrayXd::Zero(c);

  auto lse_rows = [&](const Eigen::ArrayXXd& m) -> Eigen::ArrayXd {  // logsumexp per row
    Eigen::ArrayXd mx = m.rowwise().maxCoeff();
    return mx + (m.colwise() - mx).exp().rowwise().sum().log();
  };

  TransportPlan out;
  out.rows = r;
  out.cols = c;
  out.marginal_tol = tol;
  for (int it = 0; it < iters; ++it) {
    f = log_mr - lse_rows(k_log.rowwise() + g.transpose());
    g = log_mc - lse_rows((k_log.colwise() + f).transpose());
    // After the g update column sums are exact; the row-sum error measures
    // convergence. Checking every iteration keeps the early stop simple.
    Eigen::ArrayXXd plan_log = (k_log.colwise() + f).rowwise() + g.transpose();
    Eigen::ArrayXXd plan = plan_log.exp();
    const double row_err = (plan.rowwise().sum() - 1.0 / r).abs().maxCoeff();
    const double col_err = (plan.colwise().sum().transpose() - 1.0 / c).abs().maxCoeff();
    if (row_err <= tol && col_err <= tol) {
      out.plan = plan.matrix();
      return out;
    }
  }
  throw Error(ErrorKind::numeric,
              "sinkhorn: marginals not within 1e-6 after " + std::to_string(iters) +
                  " iterations; increase iters or use a larger reg");
}

}  // namespace dppflow
