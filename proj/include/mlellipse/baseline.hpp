#pragma once

// Direct ellipse fit baselines. Edge pixels come from a Sobel gradient with
// non-maximum suppression and a fractional magnitude threshold (a reduced
// Canny); coordinates are pixel centres.
//
//  * def_points:   ellipse-specific least squares on edge points
//                  (4ac - b^2 = 1 constraint, reduced 3x3 eigenproblem).
//  * def_gradient: weighted least squares for the dual conic tangent to the
//                  lines through each strong-gradient pixel orthogonal to
//                  its gradient, converted back to a point conic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mlellipse/error.hpp"
#include "mlellipse/forward.hpp"
#include "mlellipse/geometry.hpp"

namespace mlellipse {

struct EdgePoint {
  double x = 0.0;
  double y = 0.0;
  double gx = 0.0;  // image gradient in unit-box coordinates
  double gy = 0.0;
  double weight = 0.0;  // gradient magnitude
};

struct EdgePointSet {
  std::vector<EdgePoint> points;
};

struct GradientField {
  PixelGrid grid;
  RealMatrix gx;  // d/dx, zero on the one-pixel border
  RealMatrix gy;  // d/dy, y pointing up
  RealMatrix magnitude;
};

/// 3x3 Sobel gradient of the count image, scaled to unit-box derivatives.
inline GradientField sobel_gradient(const PhotonImage& img) {
  const PixelGrid& g = img.grid;
  if (g.M < 3 || g.N < 3) throw InvalidConfig("edge extraction needs M, N >= 3");
  GradientField f{g, RealMatrix::Zero(g.M, g.N), RealMatrix::Zero(g.M, g.N),
                  RealMatrix::Zero(g.M, g.N)};
  const RealMatrix v = img.counts.cast<double>();
  const double sx = (g.N - 1) / 8.0;
  const double sy = (g.M - 1) / 8.0;
  for (int m = 1; m < g.M - 1; ++m) {
    for (int n = 1; n < g.N - 1; ++n) {
      const double dcol = (v(m - 1, n + 1) + 2.0 * v(m, n + 1) + v(m + 1, n + 1)) -
                          (v(m - 1, n - 1) + 2.0 * v(m, n - 1) + v(m + 1, n - 1));
      const double drow = (v(m + 1, n - 1) + 2.0 * v(m + 1, n) + v(m + 1, n + 1)) -
                          (v(m - 1, n - 1) + 2.0 * v(m - 1, n) + v(m - 1, n + 1));
      f.gx(m, n) = dcol * sx;
      f.gy(m, n) = -drow * sy;  // rows grow downwards, y grows upwards
      f.magnitude(m, n) = std::hypot(f.gx(m, n), f.gy(m, n));
    }
  }
  return f;
}

/// Sobel + non-maximum suppression along the gradient (two neighbours,
/// direction quantised to 45 degrees) + threshold at
/// threshold_fraction * max magnitude.
inline EdgePointSet extract_edges(const PhotonImage& img, double threshold_fraction = 0.3) {
  const GradientField f = sobel_gradient(img);
  const PixelGrid& g = img.grid;
  const double peak = f.magnitude.maxCoeff();
  EdgePointSet out;
  if (peak > 0.0) {
    const double cut = threshold_fraction * peak;
    for (int m = 1; m < g.M - 1; ++m) {
      for (int n = 1; n < g.N - 1; ++n) {
        const double mag = f.magnitude(m, n);
        if (mag <= 0.0 || mag < cut) continue;
        // Gradient direction in index space (column step, row step).
        const double dc = f.gx(m, n) / g.pixel_width();
        const double dr = -f.gy(m, n) / g.pixel_height();
        double angle = std::atan2(dr, dc) * 180.0 / std::numbers::pi;
        if (angle < 0.0) angle += 180.0;
        int om = 0, on = 0;
        if (angle < 22.5 || angle >= 157.5) {
          on = 1;
        } else if (angle < 67.5) {
          om = 1;
          on = 1;
        } else if (angle < 112.5) {
          om = 1;
        } else {
          om = 1;
          on = -1;
        }
        if (mag < f.magnitude(m + om, n + on) || mag < f.magnitude(m - om, n - on)) continue;
        out.points.push_back({g.x(n), g.y(m), f.gx(m, n), f.gy(m, n), mag});
      }
    }
  }
  if (out.points.size() < 6) {
    throw TooFewEdgePoints("fewer than 6 edge points survived thresholding");
  }
  return out;
}

namespace detail {

/// Similarity that centres and scales a point cloud: p' = (p - origin) / scale.
struct Normalisation {
  double x0 = 0.0;
  double y0 = 0.0;
  double scale = 1.0;
};

inline Eigen::Matrix3d adjugate(const Eigen::Matrix3d& m) {
  Eigen::Matrix3d adj;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const int r1 = (r + 1) % 3, r2 = (r + 2) % 3, c1 = (c + 1) % 3, c2 = (c + 2) % 3;
      adj(c, r) = m(r1, c1) * m(r2, c2) - m(r1, c2) * m(r2, c1);
    }
  }
  return adj;
}

/// Conic in original coordinates from a conic in normalised coordinates.
inline Vector6 denormalise_conic(const Vector6& t, const Normalisation& nz) {
  Eigen::Matrix3d c;
  c << t[0], t[1] / 2, t[3] / 2, t[1] / 2, t[2], t[4] / 2, t[3] / 2, t[4] / 2, t[5];
  Eigen::Matrix3d tr;
  const double is = 1.0 / nz.scale;
  tr << is, 0, -nz.x0 * is, 0, is, -nz.y0 * is, 0, 0, 1;
  const Eigen::Matrix3d o = tr.transpose() * c * tr;
  Vector6 out{o(0, 0), 2 * o(0, 1), o(1, 1), 2 * o(0, 2), 2 * o(1, 2), o(2, 2)};
  return out / out.norm();
}

}  // namespace detail

/// Ellipse-specific direct least-squares fit to points.
inline AlgebraicEllipse def_points(const EdgePointSet& set) {
  const auto& pts = set.points;
  if (pts.size() < 6) throw TooFewEdgePoints("direct ellipse fit needs at least 6 points");
  detail::Normalisation nz;
  for (const auto& p : pts) {
    nz.x0 += p.x;
    nz.y0 += p.y;
  }
  const double count = static_cast<double>(pts.size());
  nz.x0 /= count;
  nz.y0 /= count;
  double spread = 0.0;
  for (const auto& p : pts) spread += (p.x - nz.x0) * (p.x - nz.x0) + (p.y - nz.y0) * (p.y - nz.y0);
  spread = std::sqrt(spread / (2.0 * count));
  if (!(spread > 0.0)) throw DegenerateData("all points coincide");
  nz.scale = spread;

  Eigen::Matrix3d s1 = Eigen::Matrix3d::Zero(), s2 = Eigen::Matrix3d::Zero(),
                  s3 = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const double x = (p.x - nz.x0) / nz.scale, y = (p.y - nz.y0) / nz.scale;
    const Eigen::Vector3d quad{x * x, x * y, y * y};
    const Eigen::Vector3d lin{x, y, 1.0};
    s1 += quad * quad.transpose();
    s2 += quad * lin.transpose();
    s3 += lin * lin.transpose();
  }
  Eigen::FullPivLU<Eigen::Matrix3d> lu(s3);
  lu.setThreshold(1e-10);
  if (lu.rank() < 3) throw DegenerateData("points are collinear");
  const Eigen::Matrix3d t = -lu.solve(s2.transpose());
  const Eigen::Matrix3d m = s1 + s2 * t;
  // Premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]].
  Eigen::Matrix3d reduced;
  reduced.row(0) = m.row(2) / 2.0;
  reduced.row(1) = -m.row(1);
  reduced.row(2) = m.row(0) / 2.0;
  Eigen::EigenSolver<Eigen::Matrix3d> es(reduced);
  const Eigen::Matrix3d vecs = es.eigenvectors().real();
  int pick = -1;
  double best = 0.0;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d v = vecs.col(i);
    const double cond = 4.0 * v[0] * v[2] - v[1] * v[1];
    if (cond > best) {
      best = cond;
      pick = i;
    }
  }
  if (pick < 0) throw DegenerateData("no ellipse-specific eigenvector");
  const Eigen::Vector3d a1 = vecs.col(pick);
  const Eigen::Vector3d a2 = t * a1;
  Vector6 theta;
  theta << a1, a2;
  const AlgebraicEllipse out = AlgebraicEllipse::from_vector(detail::denormalise_conic(theta, nz));
  if (!(out.discriminant() < 0.0)) throw DegenerateData("fit lost the ellipse constraint");
  return out;
}

/// Gradient-based direct fit on pixels with magnitude >= threshold_fraction
/// * max magnitude. Lines are normalised to unit (gx, gy) and weighted by
/// the gradient magnitude.
inline AlgebraicEllipse def_gradient(const PhotonImage& img, double threshold_fraction = 0.3) {
  const GradientField f = sobel_gradient(img);
  const PixelGrid& g = img.grid;
  const double peak = f.magnitude.maxCoeff();
  struct Line {
    double x, y, nx, ny, w;
  };
  std::vector<Line> lines;
  if (peak > 0.0) {
    for (int m = 1; m < g.M - 1; ++m) {
      for (int n = 1; n < g.N - 1; ++n) {
        const double mag = f.magnitude(m, n);
        if (mag <= 0.0 || mag < threshold_fraction * peak) continue;
        lines.push_back({g.x(n), g.y(m), f.gx(m, n) / mag, f.gy(m, n) / mag, mag});
      }
    }
  }
  if (lines.size() < 6) throw DegenerateData("fewer than 6 gradient pixels above threshold");

  detail::Normalisation nz;
  double wsum = 0.0;
  for (const auto& l : lines) {
    nz.x0 += l.w * l.x;
    nz.y0 += l.w * l.y;
    wsum += l.w;
  }
  nz.x0 /= wsum;
  nz.y0 /= wsum;
  double spread = 0.0;
  for (const auto& l : lines) {
    spread += l.w * ((l.x - nz.x0) * (l.x - nz.x0) + (l.y - nz.y0) * (l.y - nz.y0));
  }
  nz.scale = std::sqrt(spread / (2.0 * wsum));
  if (!(nz.scale > 0.0)) throw DegenerateData("gradient pixels coincide");

  // Dual conic K with l^T K l = 0, normalised so its l3^2 coefficient is 1.
  Eigen::MatrixXd design(static_cast<Eigen::Index>(lines.size()), 5);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(lines.size()));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    const double xs = (l.x - nz.x0) / nz.scale, ys = (l.y - nz.y0) / nz.scale;
    const double a = l.nx, b = l.ny, c = -(a * xs + b * ys);
    const double sw = std::sqrt(l.w);
    const auto r = static_cast<Eigen::Index>(i);
    design.row(r) << a * a, a * b, b * b, a * c, b * c;
    design.row(r) *= sw;
    rhs[r] = -c * c * sw;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 5) throw DegenerateData("tangent lines do not determine a dual conic");
  const Eigen::VectorXd k = qr.solve(rhs);
  Eigen::Matrix3d dual;
  dual << k[0], k[1] / 2, k[3] / 2, k[1] / 2, k[2], k[4] / 2, k[3] / 2, k[4] / 2, 1.0;
  const Eigen::Matrix3d point = detail::adjugate(dual);
  Vector6 theta{point(0, 0), 2 * point(0, 1), point(1, 1), 2 * point(0, 2), 2 * point(1, 2),
                point(2, 2)};
  if (!theta.allFinite() || theta.norm() == 0.0) throw NotAnEllipse("dual conic is degenerate");
  const AlgebraicEllipse out = AlgebraicEllipse::from_vector(detail::denormalise_conic(theta, nz));
  try {
    (void)alg_to_geo(out);
  } catch (const DegenerateConic& e) {
    throw NotAnEllipse(std::string("gradient fit is not an ellipse: ") + e.what());
  }
  return out;
}

/// |P_{theta*} theta_hat| for unit-normalised inputs: the component of the
/// estimate orthogonal to the truth. Sign and scale invariant, in [0, 1].
inline double algebraic_error(const Vector6& theta_hat, const Vector6& theta_true) {
  const double nh = theta_hat.norm(), nt = theta_true.norm();
  if (nh == 0.0 || nt == 0.0) throw ZeroVector("algebraic error of a zero conic");
  const Vector6 u = theta_hat / nh, t = theta_true / nt;
  const Vector6 r = u - u.dot(t) * t;
  return std::clamp(r.norm(), 0.0, 1.0);
}

inline double algebraic_error(const AlgebraicEllipse& theta_hat, const AlgebraicEllipse& theta_true) {
  return algebraic_error(theta_hat.to_vector(), theta_true.to_vector());
}

}  // namespace mlellipse
