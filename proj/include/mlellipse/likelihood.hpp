#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "mlellipse/error.hpp"
#include "mlellipse/forward.hpp"
#include "mlellipse/geometry.hpp"
#include "mlellipse/pmf.hpp"

namespace mlellipse {

/// Floor on the Poisson rate so that ln(lambda) stays finite.
inline constexpr double kLambdaFloor = 1e-10;
/// Additive floor on sigma_psf = sqrtSigmaPsf^2 + eps.
inline constexpr double kSigmaFloor = 1e-4;

/// Negative log-likelihood of an observed image as a function of eta,
/// assuming independent pixels with N_P = X_P + U_P and
/// lambda_P = max(C prf_P(xi, sigma_psf, c), floor).
class NegativeLogLikelihood {
 public:
  NegativeLogLikelihood(PhotonImage observed, double c_background,
                        double eps_sigma = kSigmaFloor)
      : observed_(std::move(observed)), c_(c_background), eps_sigma_(eps_sigma) {
    observed_.grid.validate();
    if (observed_.C <= 0) throw InvalidConfig("conversion factor C must be positive");
    if (observed_.b < 0) throw InvalidConfig("quantisation half-width must be >= 0");
  }

  double operator()(const EtaVector& eta) const {
    if (!eta.finite()) throw NonFiniteParameters("eta contains non-finite entries");
    const RealImage prf = pixel_response(eta.xi(), observed_.grid,
                                         eta.sigma_psf(eps_sigma_), c_);
    return evaluate(prf);
  }

  double operator()(const Vector6& eta) const { return (*this)(EtaVector::from_vector(eta)); }

  /// -sum_P ln Pr(N_P = f_P) for a given noiseless response image.
  double evaluate(const RealImage& prf) const {
    const double scale = static_cast<double>(observed_.C);
    double nll = 0.0;
    for (int m = 0; m < observed_.grid.M; ++m) {
      for (int n = 0; n < observed_.grid.N; ++n) {
        const double lambda = std::max(scale * prf.values(m, n), kLambdaFloor);
        nll -= log_pmf({lambda, observed_.b}, observed_.counts(m, n));
      }
    }
    return nll;
  }

  const PhotonImage& observed() const { return observed_; }
  double background() const { return c_; }
  double eps_sigma() const { return eps_sigma_; }

 private:
  PhotonImage observed_;
  double c_;
  double eps_sigma_;
};

inline double negative_log_likelihood(const EtaVector& eta, const PhotonImage& observed,
                                      double c_background, double eps_sigma = kSigmaFloor) {
  return NegativeLogLikelihood(observed, c_background, eps_sigma)(eta);
}

}  // namespace mlellipse
