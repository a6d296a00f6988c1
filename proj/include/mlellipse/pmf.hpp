#pragma once

// Distribution of a quantised photon count N = X + U with X ~ Poisson(lambda)
// and U uniform on the integers of [-b, b].

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>

#include "mlellipse/error.hpp"

namespace mlellipse {

struct QuantisedPoissonModel {
  double lambda = 1.0;
  std::int64_t b = 0;
};

/// a + ln sum exp(z - a) with a = max z.
inline double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw EmptyInput("log_sum_exp of an empty array");
  const double a = *std::max_element(z.begin(), z.end());
  if (std::isinf(a)) return a;
  double s = 0.0;
  for (double v : z) s += std::exp(v - a);
  return a + std::log(s);
}

/// ln(k!) for k >= 0. Table below 256, Stirling series above (relative
/// error well under 1e-15 there). Unlike std::lgamma this touches no
/// global state.
inline double log_factorial(std::int64_t k) {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    long double acc = 0.0L;
    for (std::size_t i = 1; i < t.size(); ++i) {
      acc += std::log(static_cast<long double>(i));
      t[i] = static_cast<double>(acc);
    }
    return t;
  }();
  if (k < 0) return std::numeric_limits<double>::infinity();
  if (k < 256) return table[static_cast<std::size_t>(k)];
  const double x = static_cast<double>(k) + 1.0;  // ln Gamma(x)
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
  return (x - 0.5) * std::log(x) - x + 0.5 * std::log(2.0 * std::numbers::pi) + series;
}

/// Probability mass via the regularised upper incomplete gamma function,
/// Q(k + 1, lambda) = P(X <= k):
///   0                                      n < -b
///   Q(n+b+1, l) / (2b+1)                   -b <= n <= b
///   (Q(n+b+1, l) - Q(n-b, l)) / (2b+1)     n > b
/// The last branch is the window P(n-b <= X <= n+b); in the upper tail it
/// is evaluated through the lower function P to avoid cancellation.
inline double pmf(const QuantisedPoissonModel& model, std::int64_t n) {
  using boost::math::gamma_p;
  using boost::math::gamma_q;
  const std::int64_t b = model.b;
  if (n < -b) return 0.0;
  const long double lambda = model.lambda;
  const long double norm = 2.0L * b + 1.0L;
  if (!(model.lambda > 0.0)) {
    // Degenerate Poisson at zero.
    return (n - b <= 0 && 0 <= n + b) ? static_cast<double>(1.0L / norm) : 0.0;
  }
  const long double hi = static_cast<long double>(n + b + 1);
  if (n <= b) return static_cast<double>(gamma_q(hi, lambda) / norm);
  const long double lo = static_cast<long double>(n - b);
  long double window = 0.0L;
  if (lo - 1.0L < lambda) {
    window = gamma_q(hi, lambda) - gamma_q(lo, lambda);
  } else {
    window = gamma_p(lo, lambda) - gamma_p(hi, lambda);
  }
  return static_cast<double>(std::max(window, 0.0L) / norm);
}

/// ln pmf evaluated as -ln(2b+1) + LSE_w(-lambda + (n+w) ln lambda - ln (n+w)!)
/// over w in [-min(b, n), b]. Returns -inf for n < -b.
inline double log_pmf(const QuantisedPoissonModel& model, std::int64_t n) {
  const std::int64_t b = model.b;
  if (n < -b) return -std::numeric_limits<double>::infinity();
  const double lambda = model.lambda;
  const double log_lambda = std::log(lambda);
  const std::int64_t k_lo = n - std::min(b, n);  // = max(n - b, 0)
  const std::int64_t k_hi = n + b;
  // Running log-sum-exp over k = k_lo..k_hi keeps this allocation free.
  double a = -std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (std::int64_t k = k_lo; k <= k_hi; ++k) {
    const double z = -lambda + static_cast<double>(k) * log_lambda - log_factorial(k);
    if (z > a) {
      s = s * std::exp(a - z) + 1.0;
      a = z;
    } else {
      s += std::exp(z - a);
    }
  }
  return -std::log(2.0 * static_cast<double>(b) + 1.0) + a + std::log(s);
}

}  // namespace mlellipse
