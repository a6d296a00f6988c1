#pragma once

// Image formation: exact pixel averaging of the ellipse indicator, a
// discretised Gaussian PSF on a grey background, Poisson photon counts and
// uniform quantisation into G = C / (2b) grey levels.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

#include "mlellipse/clip.hpp"
#include "mlellipse/error.hpp"
#include "mlellipse/geometry.hpp"
#include "mlellipse/random.hpp"

namespace mlellipse {

/// M x N pixels whose centres span the unit box. Pixel (m, n), zero based,
/// has centre x_n = n / (N - 1), y_m = (M - 1 - m) / (M - 1): row 0 is the
/// top of the image.
struct PixelGrid {
  int M = 2;
  int N = 2;

  double x(int n) const { return static_cast<double>(n) / (N - 1); }
  double y(int m) const { return static_cast<double>(M - 1 - m) / (M - 1); }
  double pixel_width() const { return 1.0 / (N - 1); }
  double pixel_height() const { return 1.0 / (M - 1); }
  int size() const { return M * N; }

  void validate() const {
    if (M < 2 || N < 2) throw InvalidConfig("pixel grid needs M, N >= 2");
  }
  bool operator==(const PixelGrid&) const = default;
};

using RealMatrix = Eigen::MatrixXd;
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct RealImage {
  PixelGrid grid;
  RealMatrix values;  // M x N
};

struct PhotonImage {
  PixelGrid grid;
  CountMatrix counts;  // M x N
  std::int64_t C = 1;  // photons at full-scale intensity
  std::int64_t b = 0;  // quantisation half-width, 0 = unquantised

  /// Number of grey levels, or 0 when the image is not quantised.
  std::int64_t grey_levels() const { return b > 0 ? C / (2 * b) : 0; }
};

inline bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

/// Checks C and b: C > 0, b >= 0, and for b > 0 both powers of two with C >= 2b.
inline void validate_quantisation(std::int64_t C, std::int64_t b) {
  if (C <= 0) throw InvalidConfig("conversion factor C must be positive");
  if (b < 0) throw InvalidConfig("quantisation half-width b must be >= 0");
  if (b > 0) {
    if (!is_power_of_two(C) || !is_power_of_two(b)) {
      throw InvalidConfig("C and b must be powers of two when quantising");
    }
    if (C < 2 * b) throw InvalidConfig("need C >= 2b for at least one grey level");
  }
}

struct ForwardConfig {
  GeometricEllipse xi;
  PixelGrid grid;
  double sigma_psf = 0.05;
  double c_background = 0.0;
  std::int64_t C = 256;
  std::int64_t b = 0;
  std::uint64_t seed = 0;

  void validate() const {
    grid.validate();
    if (!xi.valid()) throw InvalidConfig("ellipse parameters invalid (need A >= B > 0)");
    if (!(sigma_psf >= 0.0) || !std::isfinite(sigma_psf)) {
      throw InvalidConfig("sigma_psf must be finite and >= 0");
    }
    if (!(c_background >= 0.0 && c_background < 1.0)) {
      throw InvalidConfig("background level c must lie in [0, 1)");
    }
    validate_quantisation(C, b);
  }
};

/// Fraction of each pixel covered by the ellipse. Pixel centres are rotated
/// into the ellipse frame and the pixel is treated as an axis-aligned
/// rectangle there. A or B <= 0 gives an empty image.
inline RealImage averaged_ideal_image(const GeometricEllipse& xi, const PixelGrid& grid) {
  RealImage img{grid, RealMatrix::Zero(grid.M, grid.N)};
  if (!(xi.A > 0.0) || !(xi.B > 0.0)) return img;
  const double ct = std::cos(xi.tau), st = std::sin(xi.tau);
  const double w = grid.pixel_width(), h = grid.pixel_height();
  const double inv_area = 1.0 / (w * h);
  // Pixels whose rotated centre is further than this from the ellipse
  // centre cannot touch it.
  const double reach = std::max(xi.A, xi.B) + 0.5 * std::hypot(w, h);
  for (int m = 0; m < grid.M; ++m) {
    const double dy = grid.y(m) - xi.K;
    for (int n = 0; n < grid.N; ++n) {
      const double dx = grid.x(n) - xi.H;
      if (dx * dx + dy * dy > reach * reach) continue;
      const clip::AlignedRect rect{dx * ct + dy * st, -dx * st + dy * ct, w, h};
      img.values(m, n) = std::min(1.0, clip::ellipse_rect_area(rect, xi.A, xi.B) * inv_area);
    }
  }
  return img;
}

namespace detail {

/// Row-normalised 1-D Gaussian weights between the pixel centres of one axis.
inline RealMatrix gaussian_weights(int count, double sigma) {
  RealMatrix g(count, count);
  const double step = 1.0 / (count - 1);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < count; ++j) {
      const double d = (i - j) * step;
      g(i, j) = std::exp(-d * d * inv);
    }
  }
  // The diagonal is exp(0) = 1, so every row sum is >= 1.
  for (int i = 0; i < count; ++i) g.row(i) /= g.row(i).sum();
  return g;
}

}  // namespace detail

/// Discretised PSF on a grey background:
/// out(m,n) = c + (1-c)/Z(m,n) sum_{s,t} f(s,t) exp(-|p_st - p_mn|^2 / (2 sigma^2)).
/// The Gaussian factorises over the two axes, so the full double sum is
/// evaluated as Gy * F * Gx^T with row-normalised 1-D weight matrices.
inline RealImage apply_psf(const RealImage& img, double sigma_psf, double c_background) {
  const PixelGrid& g = img.grid;
  RealImage out{g, RealMatrix()};
  if (!(sigma_psf > 0.0)) {
    out.values = (c_background + (1.0 - c_background) * img.values.array()).matrix();
    return out;
  }
  const RealMatrix gy = detail::gaussian_weights(g.M, sigma_psf);
  const RealMatrix gx = detail::gaussian_weights(g.N, sigma_psf);
  out.values = gy * img.values * gx.transpose();
  out.values = (c_background + (1.0 - c_background) * out.values.array()).matrix();
  return out;
}

/// Noiseless pixel response of the ellipse: averaged image blurred by the PSF.
inline RealImage pixel_response(const GeometricEllipse& xi, const PixelGrid& grid,
                                double sigma_psf, double c_background) {
  return apply_psf(averaged_ideal_image(xi, grid), sigma_psf, c_background);
}

/// Poisson variate by multiplying uniforms in log space (Knuth). O(lambda).
template <class Urbg>
std::int64_t sample_poisson(double lambda, Urbg& rng) {
  if (!(lambda > 0.0)) return 0;
  const double limit = -lambda;
  std::int64_t k = 0;
  double p = 0.0;
  do {
    ++k;
    p += std::log(uniform_open01(rng));
  } while (p >= limit);
  return k - 1;
}

/// Maps a photon count to the centre 2b q - b of its grey-level bin q in
/// 1..G. Counts at or above 2b (G - 1) saturate to the top bin. b = 0 is
/// the identity.
inline std::int64_t quantise(std::int64_t count, std::int64_t C, std::int64_t b) {
  if (b == 0) return count;
  const std::int64_t width = 2 * b;
  const std::int64_t levels = C / width;
  const std::int64_t q = count < width ? 1 : std::min(levels, count / width + 1);
  return width * q - b;
}

/// sqrt(C * max prf): photon SNR at the brightest pixel of the blurred image.
inline double snr(const RealImage& prf, std::int64_t C) {
  return std::sqrt(static_cast<double>(C) * prf.values.maxCoeff());
}

struct Synthesis {
  PhotonImage image;
  RealImage prf;
  double snr = 0.0;
};

/// Full pipeline. Pixel (m, n) draws from stream m * N + n of config.seed,
/// so the result does not depend on evaluation order.
inline Synthesis synthesize(const ForwardConfig& config) {
  config.validate();
  const PixelGrid& g = config.grid;
  Synthesis out;
  out.prf = pixel_response(config.xi, g, config.sigma_psf, config.c_background);
  out.image.grid = g;
  out.image.C = config.C;
  out.image.b = config.b;
  out.image.counts.resize(g.M, g.N);
  const double scale = static_cast<double>(config.C);
  for (int m = 0; m < g.M; ++m) {
    for (int n = 0; n < g.N; ++n) {
      auto rng = make_stream(config.seed, static_cast<std::uint64_t>(m) * g.N + n);
      const std::int64_t photons = sample_poisson(scale * out.prf.values(m, n), rng);
      out.image.counts(m, n) = quantise(photons, config.C, config.b);
    }
  }
  out.snr = snr(out.prf, config.C);
  return out;
}

}  // namespace mlellipse
