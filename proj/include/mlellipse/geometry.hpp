#pragma once

// Ellipse representations: geometric (A, B, H, K, tau), algebraic conic
// coefficients (a, b, c, d, e, f) and the optimiser parameterisation eta.
// Conversions in both directions plus the Jacobians used to propagate
// covariance from eta to the unit-normalised conic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mlellipse/error.hpp"

namespace mlellipse {

using Vector5 = Eigen::Matrix<double, 5, 1>;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix5 = Eigen::Matrix<double, 5, 5>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Matrix56 = Eigen::Matrix<double, 5, 6>;
using Matrix65 = Eigen::Matrix<double, 6, 5>;

/// Reduces an angle into [0, pi).
inline double canonical_angle(double tau) {
  constexpr double pi = std::numbers::pi;
  double t = std::fmod(tau, pi);
  if (t < 0.0) t += pi;
  if (t >= pi) t -= pi;
  return t;
}

/// Semi-axes A >= B > 0, centre (H, K) and orientation tau of the major
/// axis against the positive x axis, all in unit-box coordinates.
struct GeometricEllipse {
  double A = 1.0;
  double B = 1.0;
  double H = 0.0;
  double K = 0.0;
  double tau = 0.0;

  Vector5 to_vector() const { return {A, B, H, K, tau}; }
  static GeometricEllipse from_vector(const Vector5& v) {
    return {v[0], v[1], v[2], v[3], v[4]};
  }

  /// Swaps the axes if needed so that A >= B and wraps tau into [0, pi).
  GeometricEllipse canonical() const {
    GeometricEllipse out = *this;
    if (out.A < out.B) {
      std::swap(out.A, out.B);
      out.tau += std::numbers::pi / 2.0;
    }
    out.tau = canonical_angle(out.tau);
    return out;
  }

  bool valid() const {
    return std::isfinite(A) && std::isfinite(B) && std::isfinite(H) &&
           std::isfinite(K) && std::isfinite(tau) && B > 0.0 && A >= B;
  }
};

/// Homogeneous conic a x^2 + b xy + c y^2 + d x + e y + f = 0.
struct AlgebraicEllipse {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  double e = 0.0;
  double f = 0.0;

  Vector6 to_vector() const { return {a, b, c, d, e, f}; }
  static AlgebraicEllipse from_vector(const Vector6& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }

  double discriminant() const { return b * b - 4.0 * a * c; }

  /// Value of the conic polynomial at (x, y).
  double evaluate(double x, double y) const {
    return a * x * x + b * x * y + c * y * y + d * x + e * y + f;
  }

  AlgebraicEllipse normalized() const {
    const Vector6 v = to_vector();
    const double n = v.norm();
    if (n == 0.0) throw ZeroVector("conic coefficients are all zero");
    return from_vector(v / n);
  }
};

/// Carrier u(x) = [x^2, xy, y^2, x, y, 1] so that theta . u(x) = 0 on the locus.
inline Vector6 conic_carrier(double x, double y) {
  return {x * x, x * y, y * y, x, y, 1.0};
}

/// Optimiser parameters. A, B and sigma_psf are recovered by squaring so
/// they never go negative; eps keeps the PSF width away from zero.
struct EtaVector {
  double sqrtA = 1.0;
  double sqrtB = 1.0;
  double H = 0.0;
  double K = 0.0;
  double tau = 0.0;
  double sqrtSigmaPsf = 0.0;

  Vector6 to_vector() const { return {sqrtA, sqrtB, H, K, tau, sqrtSigmaPsf}; }
  static EtaVector from_vector(const Vector6& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }

  static EtaVector from(const GeometricEllipse& xi, double sigma_psf,
                        double eps_sigma) {
    const double s = std::max(sigma_psf - eps_sigma, 0.0);
    return {std::sqrt(xi.A), std::sqrt(xi.B), xi.H, xi.K, xi.tau, std::sqrt(s)};
  }

  /// Derived geometric parameters, not canonicalised (A may be < B).
  GeometricEllipse xi() const {
    return {sqrtA * sqrtA, sqrtB * sqrtB, H, K, tau};
  }
  double sigma_psf(double eps_sigma) const {
    return sqrtSigmaPsf * sqrtSigmaPsf + eps_sigma;
  }

  bool finite() const { return to_vector().allFinite(); }
};

/// Geometric -> algebraic conversion.
inline AlgebraicEllipse geo_to_alg(const GeometricEllipse& xi) {
  const double ct = std::cos(xi.tau);
  const double st = std::sin(xi.tau);
  const double iA2 = 1.0 / (xi.A * xi.A);
  const double iB2 = 1.0 / (xi.B * xi.B);
  // Centre projected on the major (u) and minor (v) axis directions.
  const double u = xi.H * ct + xi.K * st;
  const double v = xi.K * ct - xi.H * st;
  AlgebraicEllipse t;
  t.a = ct * ct * iA2 + st * st * iB2;
  t.b = (iA2 - iB2) * std::sin(2.0 * xi.tau);
  t.c = ct * ct * iB2 + st * st * iA2;
  t.d = 2.0 * st * v * iB2 - 2.0 * ct * u * iA2;
  t.e = -2.0 * ct * v * iB2 - 2.0 * st * u * iA2;
  t.f = u * u * iA2 + v * v * iB2 - 1.0;
  return t;
}

namespace detail {

/// arccot with range (-pi/2, pi/2], the branch under which the orientation
/// case table below reproduces tau.
inline double arccot(double x) {
  if (x == 0.0) return std::numbers::pi / 2.0;
  return std::atan(1.0 / x);
}

}  // namespace detail

/// Algebraic -> geometric conversion. Throws DegenerateConic unless theta
/// describes a real ellipse with non-empty interior. Near-circles
/// ((a-c)^2 + b^2 < 1e-12 (a+c)^2) get tau = 0 and A = B.
inline GeometricEllipse alg_to_geo(const AlgebraicEllipse& theta) {
  constexpr double pi = std::numbers::pi;
  const double a = theta.a, b = theta.b, c = theta.c;
  const double d = theta.d, e = theta.e, f = theta.f;
  if (!theta.to_vector().allFinite()) {
    throw DegenerateConic("non-finite conic coefficients");
  }

  const double delta = b * b - 4.0 * a * c;
  if (!(delta < 0.0)) throw DegenerateConic("b^2 - 4ac >= 0: not an ellipse");

  const double root = std::sqrt(b * b + (a - c) * (a - c));
  const double lambda_plus = 0.5 * (a + c - root);
  const double lambda_minus = 0.5 * (a + c + root);
  const double psi = b * d * e - a * e * e - b * b * f + c * (4.0 * a * f - d * d);

  const double r_plus = psi / (lambda_plus * delta);
  const double r_minus = psi / (lambda_minus * delta);
  if (!(r_plus > 0.0) || !(r_minus > 0.0) || !std::isfinite(r_plus) ||
      !std::isfinite(r_minus)) {
    throw DegenerateConic("conic has no real points (imaginary ellipse)");
  }
  const double v_plus = std::sqrt(r_plus);
  const double v_minus = std::sqrt(r_minus);

  GeometricEllipse xi;
  xi.H = (2.0 * c * d - b * e) / delta;
  xi.K = (2.0 * a * e - b * d) / delta;

  const double scale = (a + c) * (a + c);
  if ((a - c) * (a - c) + b * b < 1e-12 * scale) {
    xi.A = xi.B = 0.5 * (v_plus + v_minus);
    xi.tau = 0.0;
    return xi;
  }

  xi.A = std::max(v_plus, v_minus);
  xi.B = std::min(v_plus, v_minus);

  const bool plus_major = v_plus >= v_minus;
  double tau = 0.0;
  if (b == 0.0) {
    // Axis-aligned: which axis is the major one depends on a vs c.
    const bool x_major = plus_major ? (a < c) : (a >= c);
    tau = x_major ? 0.0 : pi / 2.0;
  } else if (a == c) {
    tau = ((b < 0.0) == plus_major) ? pi / 4.0 : 3.0 * pi / 4.0;
  } else {
    const double half = 0.5 * detail::arccot((a - c) / b);
    if (plus_major) {
      if (b < 0.0) {
        tau = (a < c) ? half : half + pi / 2.0;
      } else {
        tau = (a < c) ? half + pi : half + pi / 2.0;
      }
    } else {
      if (b < 0.0) {
        tau = (a < c) ? half + pi / 2.0 : half + pi;
      } else {
        tau = (a < c) ? half + pi / 2.0 : half;
      }
    }
  }
  xi.tau = canonical_angle(tau);
  return xi;
}

/// d xi / d eta (5x6): 2 sqrtA, 2 sqrtB on the diagonal, identity for
/// H, K, tau and a zero column for the PSF width.
inline Matrix56 jacobian_xi_of_eta(const EtaVector& eta) {
  Matrix56 j = Matrix56::Zero();
  j(0, 0) = 2.0 * eta.sqrtA;
  j(1, 1) = 2.0 * eta.sqrtB;
  j(2, 2) = 1.0;
  j(3, 3) = 1.0;
  j(4, 4) = 1.0;
  return j;
}

/// d theta / d xi (6x5) for the unnormalised conic of geo_to_alg.
inline Matrix65 jacobian_kappa(const GeometricEllipse& xi) {
  const double A = xi.A, B = xi.B, H = xi.H, K = xi.K;
  const double ct = std::cos(xi.tau), st = std::sin(xi.tau);
  const double s2 = std::sin(2.0 * xi.tau), c2 = std::cos(2.0 * xi.tau);
  const double A2 = A * A, B2 = B * B, A3 = A2 * A, B3 = B2 * B;
  const double u = H * ct + K * st;  // H + K tan(tau), times cos(tau)
  const double v = K * ct - H * st;
  const double diff = (A - B) * (A + B) / (A2 * B2);

  Matrix65 j;
  j.row(0) << -2.0 * ct * ct / A3, -2.0 * st * st / B3, 0.0, 0.0,
      (1.0 / B2 - 1.0 / A2) * s2;
  j.row(1) << -2.0 * s2 / A3, 2.0 * s2 / B3, 0.0, 0.0,
      2.0 * (1.0 / A2 - 1.0 / B2) * c2;
  j.row(2) << -2.0 * st * st / A3, -2.0 * ct * ct / B3, 0.0, 0.0,
      (1.0 / A2 - 1.0 / B2) * s2;
  j.row(3) << 4.0 * ct * u / A3, -4.0 * st * v / B3,
      -2.0 * ct * ct / A2 - 2.0 * st * st / B2, (1.0 / B2 - 1.0 / A2) * s2,
      2.0 * diff * (K * c2 - H * s2);
  j.row(4) << 4.0 * st * u / A3, 4.0 * ct * v / B3, (1.0 / B2 - 1.0 / A2) * s2,
      -2.0 * ct * ct / B2 - 2.0 * st * st / A2, 2.0 * diff * (H * c2 + K * s2);
  j.row(5) << -2.0 * u * u / A3, -2.0 * v * v / B3,
      2.0 * ct * u / A2 - 2.0 * st * v / B2, 2.0 * st * u / A2 + 2.0 * ct * v / B2,
      -2.0 * (A - B) * (A + B) * v * u / (A2 * B2);
  return j;
}

/// Jacobian of theta -> theta / |theta|: |theta|^-1 (I - theta theta^T / |theta|^2).
inline Matrix6 jacobian_pi(const Vector6& theta) {
  const double n2 = theta.squaredNorm();
  if (n2 == 0.0) throw ZeroVector("cannot normalise a zero conic vector");
  const double n = std::sqrt(n2);
  return (Matrix6::Identity() - theta * theta.transpose() / n2) / n;
}

inline Matrix6 jacobian_pi(const AlgebraicEllipse& theta) {
  return jacobian_pi(theta.to_vector());
}

}  // namespace mlellipse
