#pragma once

// The determinantal diversity objective: median-bandwidth similarity kernel,
// quality weighting, exact likelihood det(L)/det(L+I), the soft
// expected-cardinality relaxation, and the analytic gradient of the
// log-likelihood with respect to the points entering the kernel.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dppflow/errors.hpp"
#include "dppflow/linalg.hpp"

namespace dppflow {

// Distances should be computed in a robust feature space for structured data;
// at desk scale the identity map is the default. A custom map must also carry
// its vjp for grad_loglik to remain usable.
struct FeatureMap {
  std::string name = "identity";
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> map;  // empty => identity
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> vjp;

  bool is_identity() const { return !map; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return map ? map(x) : x; }
};

inline FeatureMap identity_feature() { return FeatureMap{}; }

struct QualityParams {
  double rho = 2.0;       // percentile radius in source-space units
  double epsilon = 0.01;  // minimum quality; keeps the determinant off zero
};

struct DppKernel {
  int k = 0;
  SymMatrix L;
  double bandwidth = 0.0;  // med(U(D)) of squared feature distances
  double h = 1.0;          // kernel spread
  std::optional<Eigen::VectorXd> quality;
};

struct LikelihoodReport {
  double det_ratio = 0.0;        // det(L)/det(L+I), in [0,1)
  double loglik = 0.0;           // log det(L) - log det(L+I); -inf for singular L
  std::vector<double> eigenvalues;  // ascending
  double soft_cardinality = 0.0;    // sum lambda/(1+lambda), finite even when singular
};

namespace detail {

inline Eigen::MatrixXd feature_points(const Eigen::MatrixXd& points, const FeatureMap& feature) {
  if (feature.is_identity()) return points;
  Eigen::MatrixXd out;
  for (int i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd f = feature.map(points.row(i).transpose());
    if (i == 0) out.resize(points.rows(), f.size());
    out.row(i) = f.transpose();
  }
  return out;
}

// L_ij = exp(-h * D_ij / bandwidth) with an exactly unit diagonal.
inline SymMatrix kernel_from_dists(const SymMatrix& dists, double h, double bandwidth) {
  SymMatrix kernel(dists.order);
  for (int i = 0; i < dists.order; ++i) {
    kernel.set(i, i, 1.0);
    for (int j = i + 1; j < dists.order; ++j)
      kernel.set(i, j, std::exp(-h * dists(i, j) / bandwidth));
  }
  return kernel;
}

}  // namespace detail

inline DppKernel build_kernel(const Eigen::MatrixXd& points, double h,
                              const FeatureMap& feature = identity_feature()) {
  if (points.rows() < 2) throw Error(ErrorKind::invalid_input, "build_kernel: k >= 2 required");
  if (!(h > 0.0)) throw Error(ErrorKind::invalid_input, "build_kernel: h > 0 required");
  const Eigen::MatrixXd feats = detail::feature_points(points, feature);
  const SymMatrix dists = pairwise_sq_dists(feats);
  const double med = median_upper(dists);
  if (!(med > 0.0))
    throw Error(ErrorKind::degenerate_input,
                "build_kernel: zero bandwidth (median pairwise distance is 0; degenerate point set)");
  DppKernel kernel;
  kernel.k = static_cast<int>(points.rows());
  kernel.h = h;
  kernel.bandwidth = med;
  kernel.L = detail::kernel_from_dists(dists, h, med);
  return kernel;
}

// q_i = 1 inside the rho-ball of the source estimate norm, otherwise a decayed
// value floored at epsilon.
inline Eigen::VectorXd quality_vector(const Eigen::MatrixXd& x0_estimates,
                                      const QualityParams& params) {
  if (!x0_estimates.allFinite())
    throw Error(ErrorKind::invalid_input, "quality_vector: non-finite estimate");
  if (!(params.epsilon > 0.0) || params.epsilon >= 1.0)
    throw Error(ErrorKind::invalid_input, "quality_vector: epsilon must lie in (0,1)");
  if (!(params.rho > 0.0)) throw Error(ErrorKind::invalid_input, "quality_vector: rho > 0 required");
  Eigen::VectorXd q(x0_estimates.rows());
  const double rho_sq = params.rho * params.rho;
  for (int i = 0; i < x0_estimates.rows(); ++i) {
    const double sq = x0_estimates.row(i).squaredNorm();
    q[i] = (sq <= rho_sq) ? 1.0 : std::max(params.epsilon, std::exp(-(sq - rho_sq)));
  }
  return q;
}

// L_q = L elementwise* q q^T; diagonal entries become q_i^2.
inline DppKernel apply_quality(const DppKernel& kernel, const Eigen::VectorXd& q) {
  if (static_cast<int>(q.size()) != kernel.k)
    throw Error(ErrorKind::invalid_input, "apply_quality: quality vector length mismatch");
  for (int i = 0; i < kernel.k; ++i)
    if (!(q[i] > 0.0) || q[i] > 1.0)
      throw Error(ErrorKind::invalid_input, "apply_quality: quality entries must lie in (0,1]");
  DppKernel out = kernel;
  for (int i = 0; i < kernel.k; ++i)
    for (int j = i; j < kernel.k; ++j) out.L.set(i, j, kernel.L(i, j) * q[i] * q[j]);
  out.quality = q;
  return out;
}

// det_ratio runs through the eigenvalue product, loglik through the Cholesky
// route; the two agree within 1e-8 on healthy kernels. A singular kernel is a
// value here (loglik -inf, det_ratio 0), not an error.
inline LikelihoodReport likelihood_report(const DppKernel& kernel) {
  LikelihoodReport report;
  report.eigenvalues = sym_eigenvalues(kernel.L);

  double det_ratio = 1.0;
  double soft = 0.0;
  for (double lambda : report.eigenvalues) {
    const double lam = std::max(lambda, 0.0);
    det_ratio *= lam / (1.0 + lam);
    soft += lam / (1.0 + lam);
  }
  report.soft_cardinality = soft;

  try {
    const double log_l = cholesky_logdet(kernel.L);
    const double log_l_plus_i = cholesky_logdet(kernel.L.plus_identity());
    report.loglik = log_l - log_l_plus_i;
    report.det_ratio = det_ratio;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::singular_kernel) throw;
    report.loglik = -std::numeric_limits<double>::infinity();
    report.det_ratio = 0.0;
  }
  return report;
}

enum class DppObjective { exact, soft };

// Analytic gradient of the chosen objective with respect to the points.
// Uses d logdet(M)/dM = M^{-1}:
//   exact: G = L^{-1} - (L+I)^{-1}
//   soft:  G = (L+I)^{-1} (L+I)^{-1}
// then grad_i = 4 * sum_j (-h/med) * L_ij * G_ij * (y_i - y_j). The median
// bandwidth is a stop-gradient constant; quality entries (when given) are
// constants as well.
inline Eigen::MatrixXd grad_loglik(const Eigen::MatrixXd& points, double h,
                                   const FeatureMap& feature = identity_feature(),
                                   const std::optional<Eigen::VectorXd>& quality = std::nullopt,
                                   DppObjective objective = DppObjective::exact) {
  const int k = static_cast<int>(points.rows());
  if (k < 2) throw Error(ErrorKind::invalid_input, "grad_loglik: k >= 2 required");
  if (!(h > 0.0)) throw Error(ErrorKind::invalid_input, "grad_loglik: h > 0 required");
  if (!feature.is_identity() && !feature.vjp)
    throw Error(ErrorKind::invalid_input,
                "grad_loglik: custom feature map requires a vjp to backpropagate through");

  const Eigen::MatrixXd feats = detail::feature_points(points, feature);
  const SymMatrix dists = pairwise_sq_dists(feats);
  const double med = median_upper(dists);
  if (!(med > 0.0))
    throw Error(ErrorKind::degenerate_input, "grad_loglik: zero bandwidth (degenerate point set)");
  SymMatrix kernel = detail::kernel_from_dists(dists, h, med);
  if (quality) {
    if (static_cast<int>(quality->size()) != k)
      throw Error(ErrorKind::invalid_input, "grad_loglik: quality vector length mismatch");
    for (int i = 0; i < k; ++i)
      for (int j = i; j < k; ++j) kernel.set(i, j, kernel(i, j) * (*quality)[i] * (*quality)[j]);
  }

  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(k, k);
  Eigen::MatrixXd weight_g(k, k);
  if (objective == DppObjective::exact) {
    Eigen::MatrixXd l_inv;
    try {
      l_inv = cholesky_solve(kernel, identity);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::singular_kernel)
        throw Error(ErrorKind::singular_kernel,
                    "grad_loglik: kernel is singular under the exact objective "
                    "(duplicate points); use the soft objective");
      throw;
    }
    const Eigen::MatrixXd l_plus_inv = cholesky_solve(kernel.plus_identity(), identity);
    weight_g = l_inv - l_plus_inv;
  } else {
    const Eigen::MatrixXd l_plus_inv = cholesky_solve(kernel.plus_identity(), identity);
    weight_g = l_plus_inv * l_plus_inv;
  }

  Eigen::MatrixXd grad_feats = Eigen::MatrixXd::Zero(feats.rows(), feats.cols());
  const double scale = -h / med;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      const double w = 4.0 * scale * kernel(i, j) * weight_g(i, j);
      grad_feats.row(i) += w * (feats.row(i) - feats.row(j));
    }
  }

  if (feature.is_identity()) return grad_feats;
  Eigen::MatrixXd grad(points.rows(), points.cols());
  for (int i = 0; i < k; ++i)
    grad.row(i) = feature.vjp(points.row(i).transpose(), grad_feats.row(i).transpose()).transpose();
  return grad;
}

}  // namespace dppflow
