#pragma once

// Covariance of the ML estimate (inverse Hessian of the negative
// log-likelihood) propagated to the geometric and unit-normalised
// algebraic parameters, and the planar confidence region
// { x : zbar(x) <= chi2_{5, alpha} }.

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include "mlellipse/error.hpp"
#include "mlellipse/forward.hpp"
#include "mlellipse/geometry.hpp"
#include "mlellipse/optimize.hpp"

namespace mlellipse {

/// Regularised lower incomplete gamma P(df/2, x/2).
inline double chi2_cdf(int df, double x) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * df, 0.5 * x);
}

/// Upper 100(1 - alpha)% point of the chi-squared distribution, found by
/// bracketing followed by safeguarded Newton iterations on the CDF.
inline double chi2_quantile(int df, double alpha) {
  if (df < 1) throw InvalidConfig("chi2 quantile needs df >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidConfig("alpha must lie in (0, 1)");
  const double target = 1.0 - alpha;
  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(df));
  while (chi2_cdf(df, hi) < target) {
    lo = hi;
    hi *= 2.0;
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double fx = chi2_cdf(df, x) - target;
    if (fx == 0.0) return x;
    if (fx < 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    // Density of chi2_df at x is 0.5 * d/dz P(df/2, z) at z = x/2.
    const double dens = 0.5 * boost::math::gamma_p_derivative(0.5 * df, 0.5 * x);
    double next = (dens > 0.0) ? x - fx / dens : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-15 * std::max(1.0, x)) return next;
    x = next;
  }
  return x;
}

struct HessianInverse {
  Matrix6 covariance = Matrix6::Zero();
  /// True when the Hessian was ill-conditioned or indefinite and the
  /// Moore-Penrose inverse of its positive part was used instead.
  bool pseudo_inverse = false;
  double condition = 0.0;
};

/// Inverse of a symmetric Hessian. Falls back to a pseudo-inverse over the
/// eigenvalues above 1e-12 * max|eigenvalue| when the condition number
/// exceeds 1e12 or the matrix is not positive definite.
inline HessianInverse covariance_from_hessian(const Matrix6& hessian) {
  const Matrix6 sym = 0.5 * (hessian + hessian.transpose());
  if (!sym.allFinite()) throw SingularHessian("Hessian has non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix6> eig(sym);
  const auto& values = eig.eigenvalues();
  const double largest = values.cwiseAbs().maxCoeff();
  HessianInverse out;
  if (!(largest > 0.0)) throw SingularHessian("Hessian is zero");
  const double smallest = values.minCoeff();
  out.condition = smallest > 0.0 ? values.maxCoeff() / smallest
                                 : std::numeric_limits<double>::infinity();
  constexpr double kMaxCondition = 1e12;
  Eigen::Matrix<double, 6, 1> inv = Eigen::Matrix<double, 6, 1>::Zero();
  if (smallest > 0.0 && out.condition <= kMaxCondition) {
    inv = values.cwiseInverse();
  } else {
    out.pseudo_inverse = true;
    int kept = 0;
    for (int i = 0; i < 6; ++i) {
      if (values[i] > largest / kMaxCondition) {
        inv[i] = 1.0 / values[i];
        ++kept;
      }
    }
    if (kept == 0) throw SingularHessian("Hessian has no positive curvature");
  }
  out.covariance = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

inline Matrix5 propagate_to_xi(const Matrix6& cov_eta, const EtaVector& eta_hat) {
  const Matrix56 j = jacobian_xi_of_eta(eta_hat);
  Matrix5 cov = j * cov_eta * j.transpose();
  return 0.5 * (cov + cov.transpose());
}

struct AlgebraicCovariance {
  AlgebraicEllipse theta_hat;  // unit norm
  Matrix6 cov_theta = Matrix6::Zero();
};

inline AlgebraicCovariance propagate_to_theta(const Matrix5& cov_xi, const GeometricEllipse& xi_hat) {
  const AlgebraicEllipse theta = geo_to_alg(xi_hat);
  const Eigen::Matrix<double, 6, 5> j = jacobian_pi(theta) * jacobian_kappa(xi_hat);
  AlgebraicCovariance out;
  out.theta_hat = theta.normalized();
  out.cov_theta = j * cov_xi * j.transpose();
  out.cov_theta = 0.5 * (out.cov_theta + out.cov_theta.transpose()).eval();
  return out;
}

struct CovarianceReport {
  Matrix6 cov_eta = Matrix6::Zero();
  Matrix5 cov_xi = Matrix5::Zero();
  Matrix6 cov_theta = Matrix6::Zero();
  AlgebraicEllipse theta_hat;
  bool pseudo_inverse = false;
  double condition = 0.0;
};

inline CovarianceReport covariance_report(const FitResult& fit) {
  const HessianInverse inv = covariance_from_hessian(fit.hessian);
  CovarianceReport r;
  r.cov_eta = inv.covariance;
  r.pseudo_inverse = inv.pseudo_inverse;
  r.condition = inv.condition;
  r.cov_xi = propagate_to_xi(r.cov_eta, fit.eta_hat);
  const AlgebraicCovariance alg = propagate_to_theta(r.cov_xi, fit.xi_hat);
  r.theta_hat = alg.theta_hat;
  r.cov_theta = alg.cov_theta;
  return r;
}

/// (theta^T u(x))^2 / (u(x)^T cov u(x)); +inf when the denominator is not positive.
inline double zbar(double x, double y, const AlgebraicEllipse& theta_hat, const Matrix6& cov_theta) {
  const Vector6 u = conic_carrier(x, y);
  const double num = theta_hat.to_vector().dot(u);
  const double den = u.dot(cov_theta * u);
  if (!(den > 0.0)) return std::numeric_limits<double>::infinity();
  return num * num / den;
}

/// Boolean raster of the region over the unit box; sample (i, j) sits at
/// x = j / (R - 1), y = (R - 1 - i) / (R - 1), matching the image grid.
struct ConfidenceRegionRaster {
  int resolution = 0;
  double alpha = 0.05;
  double threshold = 0.0;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;
  RealMatrix zbar;

  std::int64_t area_samples() const { return mask.cast<std::int64_t>().sum(); }
};

inline ConfidenceRegionRaster confidence_region(const AlgebraicEllipse& theta_hat,
                                                const Matrix6& cov_theta, double alpha,
                                                int resolution = 512) {
  if (resolution < 2) throw InvalidConfig("raster resolution must be >= 2");
  ConfidenceRegionRaster r;
  r.resolution = resolution;
  r.alpha = alpha;
  r.threshold = chi2_quantile(5, alpha);
  r.mask.resize(resolution, resolution);
  r.zbar.resize(resolution, resolution);
  const PixelGrid g{resolution, resolution};
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      const double z = zbar(g.x(j), g.y(i), theta_hat, cov_theta);
      r.zbar(i, j) = z;
      r.mask(i, j) = z <= r.threshold ? 1 : 0;
    }
  }
  return r;
}

/// True when every one of `samples` points on the ellipse `truth` satisfies
/// zbar <= threshold.
inline bool locus_inside_region(const GeometricEllipse& truth, const AlgebraicEllipse& theta_hat,
                                const Matrix6& cov_theta, double threshold, int samples = 720) {
  const double ct = std::cos(truth.tau), st = std::sin(truth.tau);
  for (int i = 0; i < samples; ++i) {
    const double t = 2.0 * std::numbers::pi * i / samples;
    const double px = truth.A * std::cos(t), py = truth.B * std::sin(t);
    const double x = truth.H + px * ct - py * st;
    const double y = truth.K + px * st + py * ct;
    if (!(zbar(x, y, theta_hat, cov_theta) <= threshold)) return false;
  }
  return true;
}

}  // namespace mlellipse
