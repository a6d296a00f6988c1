#pragma once

// Exact area of intersection between an axis-aligned rectangle and the
// standard ellipse (x/A)^2 + (y/B)^2 = 1 (Groves' construction). The
// rectangle is split along the coordinate axes and every piece is
// reflected into the first quadrant, where one of six vertex-inclusion
// cases applies.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace mlellipse::clip {

struct AlignedRect {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
};

/// First-quadrant rectangle [a, a + c] x [b, b + d].
struct QuadrantRect {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
};

/// Reflected parts of the rectangle lying in quadrants I, II, III, IV.
/// A part that does not reach its quadrant has c == 0 or d == 0.
inline std::array<QuadrantRect, 4> split_to_quadrants(const AlignedRect& r) {
  // Sign applied to the centre before reflecting into quadrant I.
  constexpr std::array<double, 4> sx{1.0, -1.0, -1.0, 1.0};
  constexpr std::array<double, 4> sy{1.0, 1.0, -1.0, -1.0};
  const double hw = 0.5 * r.w;
  const double hh = 0.5 * r.h;
  std::array<QuadrantRect, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = sx[i] * r.cx;
    const double y = sy[i] * r.cy;
    QuadrantRect& q = out[i];
    q.a = std::max(0.0, x - hw);
    q.b = std::max(0.0, y - hh);
    q.c = std::max(0.0, x + hw - q.a);
    q.d = std::max(0.0, y + hh - q.b);
  }
  return out;
}

/// Normalised area of {x >= U, y >= V} inside the unit circle, times 2:
/// arcsin(sqrt(1-U^2) sqrt(1-V^2) - UV) - U sqrt(1-U^2) - V sqrt(1-V^2) + 2UV.
inline double corner_area_F(double U, double V) {
  const double su = std::sqrt(std::max(0.0, 1.0 - U * U));
  const double sv = std::sqrt(std::max(0.0, 1.0 - V * V));
  const double arg = std::clamp(su * sv - U * V, -1.0, 1.0);
  return std::asin(arg) - U * su - V * sv + 2.0 * U * V;
}

enum class IntersectionCase { I, II, III, IV, V, VI };

namespace detail {

/// Strictly inside; a vertex on the boundary counts as outside.
inline bool inside(double x, double y, double A, double B) {
  const double u = x / A;
  const double v = y / B;
  return u * u + v * v < 1.0;
}

}  // namespace detail

/// Which of the six cases a first-quadrant rectangle falls into.
inline IntersectionCase classify(const QuadrantRect& q, double A, double B) {
  using detail::inside;
  const bool v1 = inside(q.a, q.b, A, B);
  if (!v1) return IntersectionCase::I;
  const double u3 = (q.a + q.c) / A;
  const double w3 = (q.b + q.d) / B;
  if (u3 * u3 + w3 * w3 <= 1.0) return IntersectionCase::VI;
  const bool v2 = inside(q.a, q.b + q.d, A, B);
  const bool v4 = inside(q.a + q.c, q.b, A, B);
  if (!v2 && !v4) return IntersectionCase::II;
  if (v4 && !v2) return IntersectionCase::III;
  if (v2 && !v4) return IntersectionCase::IV;
  return IntersectionCase::V;
}

/// Area of the first-quadrant rectangle q inside the standard ellipse.
inline double quadrant_intersection_area(const QuadrantRect& q, double A, double B) {
  if (q.c <= 0.0 || q.d <= 0.0) return 0.0;
  const double half_ab = 0.5 * A * B;
  const double U0 = q.a / A, U1 = (q.a + q.c) / A;
  const double V0 = q.b / B, V1 = (q.b + q.d) / B;
  double s = 0.0;
  switch (classify(q, A, B)) {
    case IntersectionCase::I:
      return 0.0;
    case IntersectionCase::II:
      s = half_ab * corner_area_F(U0, V0);
      break;
    case IntersectionCase::III:
      s = half_ab * (corner_area_F(U0, V0) - corner_area_F(U1, V0));
      break;
    case IntersectionCase::IV:
      s = half_ab * (corner_area_F(U0, V0) - corner_area_F(U0, V1));
      break;
    case IntersectionCase::V:
      s = half_ab *
          (corner_area_F(U0, V0) - corner_area_F(U1, V0) - corner_area_F(U0, V1));
      break;
    case IntersectionCase::VI:
      return q.c * q.d;
  }
  // Rounding in F can push results a hair outside the admissible range.
  const double cap = std::min(q.c * q.d, 0.25 * std::numbers::pi * A * B);
  return std::clamp(s, 0.0, cap);
}

/// Area of the rectangle inside the ellipse centred at the origin with
/// semi-axes A (along x) and B (along y).
inline double ellipse_rect_area(const AlignedRect& rect, double A, double B) {
  if (!(A > 0.0) || !(B > 0.0)) return 0.0;
  double s = 0.0;
  for (const auto& q : split_to_quadrants(rect)) {
    s += quadrant_intersection_area(q, A, B);
  }
  return s;
}

}  // namespace mlellipse::clip
