#pragma once

// Maximum-likelihood fitting: BFGS with a backtracking Armijo line search
// on central-difference gradients, plus the finite-difference Hessian used
// for the covariance of the estimate.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

#include "mlellipse/error.hpp"
#include "mlellipse/geometry.hpp"
#include "mlellipse/likelihood.hpp"
#include "mlellipse/random.hpp"

namespace mlellipse {

namespace detail {

inline double probe_step(double x, double step) { return step * std::max(1.0, std::abs(x)); }

template <class F>
double checked_eval(const F& f, const Eigen::VectorXd& x) {
  const double v = f(x);
  if (!std::isfinite(v)) throw NonFiniteProbe("objective is not finite at a probe point");
  return v;
}

}  // namespace detail

/// Central differences with per-coordinate step step * max(1, |x_i|).
template <class F>
Eigen::VectorXd numeric_gradient(const F& f, const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = detail::probe_step(x[i], step);
    probe[i] = x[i] + h;
    const double fp = detail::checked_eval(f, probe);
    probe[i] = x[i] - h;
    const double fm = detail::checked_eval(f, probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Second-order central differences, symmetrised as (H + H^T) / 2.
template <class F>
Eigen::MatrixXd numeric_hessian(const F& f, const Eigen::VectorXd& x, double step) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h[i] = detail::probe_step(x[i], step);
  const double f0 = detail::checked_eval(f, x);
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = x[i] + h[i];
    const double fp = detail::checked_eval(f, p);
    p[i] = x[i] - h[i];
    const double fm = detail::checked_eval(f, p);
    p[i] = x[i];
    hess(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      auto corner = [&](double si, double sj) {
        p[i] = x[i] + si * h[i];
        p[j] = x[j] + sj * h[j];
        const double v = detail::checked_eval(f, p);
        p[i] = x[i];
        p[j] = x[j];
        return v;
      };
      const double v = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) /
                       (4.0 * h[i] * h[j]);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return 0.5 * (hess + hess.transpose());
}

struct BfgsOptions {
  int max_iterations = 200;
  double gradient_step = 1e-5;
  /// Stop after two successive relative decreases below this.
  double convergence_tol = 1e-9;
  /// Also stop once |g|_inf <= gradient_tol * max(1, |f|). Zero disables.
  double gradient_tol = 0.0;
  /// Step for the diagonal curvature probe that scales the initial inverse
  /// Hessian. Zero starts from the identity.
  double curvature_step = 0.0;
  /// Cap on the infinity norm of a trial step.
  double max_step = 0.1;
  double armijo_c1 = 1e-4;
  int max_backtracks = 50;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Minimises f from x0. The objective may return +inf or NaN to reject a
/// trial point during the line search; it must be finite at x0.
template <class F>
BfgsResult minimize_bfgs(const F& f, const Eigen::VectorXd& x0, const BfgsOptions& opts) {
  const Eigen::Index n = x0.size();
  BfgsResult res;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    return f(x);
  };
  auto grad = [&](const Eigen::VectorXd& x) {
    evals += 2 * static_cast<int>(n);
    return numeric_gradient(f, x, opts.gradient_step);
  };

  Eigen::VectorXd x = x0;
  double fx = eval(x);
  if (!std::isfinite(fx)) throw NonFiniteProbe("objective is not finite at the start point");
  Eigen::VectorXd g = grad(x);
  Eigen::MatrixXd h0 = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  if (opts.curvature_step > 0.0) {
    Eigen::VectorXd d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = detail::probe_step(x[i], opts.curvature_step);
      Eigen::VectorXd p = x;
      p[i] += h;
      const double fp = eval(p);
      p[i] = x[i] - h;
      const double fm = eval(p);
      d[i] = (fp - 2.0 * fx + fm) / (h * h);
    }
    // Only trusted when every diagonal curvature is positive.
    if (d.allFinite() && d.minCoeff() > 0.0) {
      h0 = d.cwiseInverse().asDiagonal();
      scaled = true;
    }
  }
  Eigen::MatrixXd hinv = h0;
  bool hinv_is_initial = true;
  bool first_update = !scaled;
  int small_steps = 0;

  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    const double gmax = g.lpNorm<Eigen::Infinity>();
    if (gmax == 0.0 || gmax <= opts.gradient_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd p = -hinv * g;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      hinv = h0;
      hinv_is_initial = true;
      p = -hinv * g;
      slope = g.dot(p);
    }
    const double pmax = p.lpNorm<Eigen::Infinity>();
    if (pmax > opts.max_step) {
      p *= opts.max_step / pmax;
      slope *= opts.max_step / pmax;
    }

    double alpha = 1.0;
    double fnew = fx;
    Eigen::VectorXd xnew;
    bool accepted = false;
    for (int ls = 0; ls < opts.max_backtracks; ++ls) {
      xnew = x + alpha * p;
      fnew = eval(xnew);
      if (std::isfinite(fnew) && fnew <= fx + opts.armijo_c1 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!hinv_is_initial) {
        hinv = h0;
        hinv_is_initial = true;
        first_update = !scaled;
        continue;
      }
      // No decrease even with the initial metric: stationary to working precision.
      res.converged = true;
      break;
    }

    const Eigen::VectorXd gnew = grad(xnew);
    const Eigen::VectorXd s = xnew - x;
    const Eigen::VectorXd y = gnew - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (first_update) {
        hinv *= sy / y.squaredNorm();
        first_update = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
      hinv = (eye - rho * s * y.transpose()) * hinv * (eye - rho * y * s.transpose()) +
             rho * s * s.transpose();
      hinv_is_initial = false;
    }

    const double decrease = fx - fnew;
    x = xnew;
    fx = fnew;
    g = gnew;
    if (decrease <= opts.convergence_tol * std::max(1.0, std::abs(fx))) {
      if (++small_steps >= 2) {
        res.converged = true;
        ++it;
        break;
      }
    } else {
      small_steps = 0;
    }
  }
  res.x = x;
  res.value = fx;
  res.iterations = it;
  res.evaluations = evals;
  return res;
}

enum class SeedSource { DefPoints, User, Truth };

struct FitOptions {
  int max_iterations = 200;
  double gradient_step = 1e-5;
  double hessian_step = 1e-4;
  double convergence_tol = 1e-9;
  double epsilon_sigma = kSigmaFloor;
  double max_step = 0.1;
  SeedSource seed_source = SeedSource::DefPoints;
  /// Extra jittered starts (0 = single start). The best likelihood wins.
  int multistart = 0;
  double multistart_jitter = 0.02;
  std::uint64_t multistart_seed = 0;
  bool compute_hessian = true;
};

struct FitResult {
  EtaVector eta_hat;
  GeometricEllipse xi_hat;
  double sigma_psf_hat = 0.0;
  double nll = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  Matrix6 hessian = Matrix6::Zero();
};

/// Same ellipse and PSF with non-negative square roots, A >= B and tau in [0, pi).
inline EtaVector canonical_eta(const EtaVector& eta) {
  EtaVector out = eta;
  out.sqrtA = std::abs(out.sqrtA);
  out.sqrtB = std::abs(out.sqrtB);
  out.sqrtSigmaPsf = std::abs(out.sqrtSigmaPsf);
  if (out.sqrtA < out.sqrtB) {
    std::swap(out.sqrtA, out.sqrtB);
    out.tau += std::numbers::pi / 2.0;
  }
  out.tau = canonical_angle(out.tau);
  return out;
}

/// Maximum-likelihood estimate of (xi, sigma_psf) from an observed image.
/// A fit that runs out of iterations is returned with converged = false.
inline FitResult fit(const PhotonImage& observed, double c_background, const EtaVector& init,
                     const FitOptions& opts = {}) {
  if (!init.finite()) throw NonFiniteParameters("initial eta is not finite");
  const GeometricEllipse seed_xi = init.xi();
  if (!(seed_xi.A > 0.0) || !(seed_xi.B > 0.0)) {
    throw DegenerateSeed("initial ellipse has a zero semi-axis");
  }
  const NegativeLogLikelihood nll(observed, c_background, opts.epsilon_sigma);
  auto objective = [&nll](const Eigen::VectorXd& v) {
    return nll(EtaVector::from_vector(Vector6(v)));
  };

  BfgsOptions bo;
  bo.max_iterations = opts.max_iterations;
  bo.gradient_step = opts.gradient_step;
  bo.convergence_tol = opts.convergence_tol;
  bo.gradient_tol = 10.0 * opts.gradient_step;
  bo.curvature_step = opts.hessian_step;
  bo.max_step = opts.max_step;

  BfgsResult best = minimize_bfgs(objective, Eigen::VectorXd(init.to_vector()), bo);
  if (opts.multistart > 0) {
    std::mt19937_64 rng(opts.multistart_seed);
    std::normal_distribution<double> jitter(0.0, opts.multistart_jitter);
    for (int s = 0; s < opts.multistart; ++s) {
      Eigen::VectorXd start = init.to_vector();
      for (Eigen::Index i = 0; i < start.size(); ++i) start[i] += jitter(rng);
      BfgsResult r;
      try {
        r = minimize_bfgs(objective, start, bo);
      } catch (const NonFiniteProbe&) {
        continue;
      }
      if (r.value < best.value) best = r;
    }
  }

  FitResult out;
  out.eta_hat = canonical_eta(EtaVector::from_vector(Vector6(best.x)));
  out.xi_hat = out.eta_hat.xi();
  out.sigma_psf_hat = out.eta_hat.sigma_psf(opts.epsilon_sigma);
  out.nll = best.value;
  out.iterations = best.iterations;
  out.evaluations = best.evaluations;
  out.converged = best.converged;
  if (opts.compute_hessian) {
    out.hessian =
        numeric_hessian(objective, Eigen::VectorXd(out.eta_hat.to_vector()), opts.hessian_step);
  }
  return out;
}

}  // namespace mlellipse
