#pragma once

// Synthetic experiment protocol: for every condition and trial, simulate an
// image, run both direct fits, seed the ML fit from the point-based one,
// and score every method against the truth.
//
// Seeds: condition i uses derive_seed(master, i); trial t of that condition
// simulates with derive_seed(condition_seed, t). Any trial can therefore be
// replayed on its own.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "mlellipse/baseline.hpp"
#include "mlellipse/forward.hpp"
#include "mlellipse/geometry.hpp"
#include "mlellipse/io.hpp"
#include "mlellipse/optimize.hpp"
#include "mlellipse/random.hpp"
#include "mlellipse/uncertainty.hpp"

namespace mlellipse {

enum class ExperimentKind { SnrSweep, QuantisationSweep, EccentricitySweep, GridSweep, Custom };

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "snr_sweep" || s == "SNR_SWEEP") return ExperimentKind::SnrSweep;
  if (s == "quantisation_sweep" || s == "QUANTISATION_SWEEP") return ExperimentKind::QuantisationSweep;
  if (s == "eccentricity_sweep" || s == "ECCENTRICITY_SWEEP") return ExperimentKind::EccentricitySweep;
  if (s == "grid_sweep" || s == "GRID_SWEEP") return ExperimentKind::GridSweep;
  if (s == "custom" || s == "CUSTOM") return ExperimentKind::Custom;
  throw InvalidConfig("unknown experiment kind '" + s + "'");
}

struct TrialSettings {
  /// Starting PSF width for the ML fit.
  double initial_sigma_psf = 0.02;
  double edge_threshold = 0.3;
  double alpha = 0.05;
  FitOptions fit;
};

struct Condition {
  std::string label;
  ForwardConfig forward;  // seed is overwritten per trial
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Custom;
  std::vector<Condition> conditions;
  int trials = 100;
  std::uint64_t master_seed = 1;
  TrialSettings settings;
};

/// Ellipse with eccentricity e and area pi * A * B = pi * area_product.
inline GeometricEllipse ellipse_with_eccentricity(double e, double area_product, double H,
                                                  double K, double tau) {
  const double ratio = std::sqrt(1.0 - e * e);  // B / A
  const double A = std::sqrt(area_product / ratio);
  return {A, area_product / A, H, K, tau};
}

namespace detail {

inline std::string sweep_label(const char* key, double v) {
  return std::string(key) + "=" + io::format_double(v);
}

}  // namespace detail

/// Reads [truth] A, B, H, K, tau and [image] rows, cols, sigma_psf,
/// background, C, b, seed over the values already in `base`.
inline ForwardConfig apply_forward_overrides(const io::KeyValues& kv, ForwardConfig base) {
  using io::get_double;
  using io::get_int;
  base.xi.A = get_double(kv, "truth.A", base.xi.A);
  base.xi.B = get_double(kv, "truth.B", base.xi.B);
  base.xi.H = get_double(kv, "truth.H", base.xi.H);
  base.xi.K = get_double(kv, "truth.K", base.xi.K);
  base.xi.tau = get_double(kv, "truth.tau", base.xi.tau);
  base.grid.M = static_cast<int>(get_int(kv, "image.rows", base.grid.M));
  base.grid.N = static_cast<int>(get_int(kv, "image.cols", base.grid.N));
  base.sigma_psf = get_double(kv, "image.sigma_psf", base.sigma_psf);
  base.c_background = get_double(kv, "image.background", base.c_background);
  base.C = get_int(kv, "image.C", base.C);
  base.b = get_int(kv, "image.b", base.b);
  base.seed = static_cast<std::uint64_t>(get_int(kv, "image.seed", static_cast<std::int64_t>(base.seed)));
  return base;
}

/// Builds an experiment from a parsed config. Each kind has defaults for
/// truth, grid, PSF, C, b and the sweep list; any of them can be overridden:
///   [experiment] kind, trials, seed
///   [truth]      A, B, H, K, tau
///   [image]      rows, cols, sigma_psf, background, C, b
///   [sweep]      values = v1, v2, ...   (C, b, eccentricity or grid size)
///                area_product, semi_major   (eccentricity sweep only)
///   [fit]        initial_sigma, edge_threshold, alpha, max_iterations, multistart
inline ExperimentSpec make_experiment(const io::KeyValues& kv) {
  using io::get_double;
  using io::get_int;
  ExperimentSpec spec;
  spec.kind = parse_experiment_kind(io::get_string(kv, "experiment.kind", "custom"));
  spec.trials = static_cast<int>(get_int(kv, "experiment.trials", 100));
  spec.master_seed = static_cast<std::uint64_t>(get_int(kv, "experiment.seed", 1));
  if (spec.trials < 1) throw InvalidConfig("experiment.trials must be >= 1");

  ForwardConfig base;
  base.grid = {32, 32};
  std::vector<double> sweep;
  switch (spec.kind) {
    case ExperimentKind::SnrSweep:
      base.xi = {0.25, 0.05, 0.5, 0.5, 0.785};
      base.sigma_psf = 0.05;
      base.b = 1;
      sweep = {16, 32, 64, 128, 256};
      break;
    case ExperimentKind::QuantisationSweep:
      base.xi = {0.35, 0.15, 0.5, 0.5, 0.0};
      base.sigma_psf = 0.15;
      base.C = 128;
      sweep = {2, 4, 8, 16, 32};
      break;
    case ExperimentKind::EccentricitySweep:
      base.xi = {0.25, 0.07, 0.5, 0.5, 0.785};
      base.sigma_psf = 0.05;
      base.C = 32;
      base.b = 1;
      sweep = {0.78, 0.87, 0.93, 0.97, 0.99};
      break;
    case ExperimentKind::GridSweep:
      base.xi = {0.35, 0.15, 0.5, 0.5, 0.0};
      base.sigma_psf = 0.15;
      base.C = 32;
      base.b = 1;
      sweep = {8, 16, 32, 64, 128};
      break;
    case ExperimentKind::Custom:
      base.xi = {0.25, 0.05, 0.5, 0.5, 0.785};
      base.sigma_psf = 0.05;
      base.b = 1;
      break;
  }
  base = apply_forward_overrides(kv, base);
  if (kv.count("sweep.values")) sweep = io::get_list(kv, "sweep.values");

  auto& s = spec.settings;
  s.initial_sigma_psf = get_double(kv, "fit.initial_sigma", s.initial_sigma_psf);
  s.edge_threshold = get_double(kv, "fit.edge_threshold", s.edge_threshold);
  s.alpha = get_double(kv, "fit.alpha", s.alpha);
  s.fit.max_iterations = static_cast<int>(get_int(kv, "fit.max_iterations", s.fit.max_iterations));
  s.fit.multistart = static_cast<int>(get_int(kv, "fit.multistart", s.fit.multistart));

  // Eccentricity sweep: A * B held at area_product unless a fixed
  // semi-major axis is given.
  const double area_product = get_double(kv, "sweep.area_product", 0.0175);
  const double semi_major = get_double(kv, "sweep.semi_major", 0.0);
  if (spec.kind == ExperimentKind::Custom) {
    spec.conditions.push_back({"custom", base});
  }
  for (double v : sweep) {
    Condition c{"", base};
    switch (spec.kind) {
      case ExperimentKind::SnrSweep:
        c.label = detail::sweep_label("C", v);
        c.forward.C = static_cast<std::int64_t>(v);
        break;
      case ExperimentKind::QuantisationSweep:
        c.label = detail::sweep_label("b", v);
        c.forward.b = static_cast<std::int64_t>(v);
        break;
      case ExperimentKind::EccentricitySweep:
        c.label = detail::sweep_label("e", v);
        if (semi_major > 0.0) {
          c.forward.xi = {semi_major, semi_major * std::sqrt(1.0 - v * v), base.xi.H, base.xi.K,
                          base.xi.tau};
        } else {
          c.forward.xi =
              ellipse_with_eccentricity(v, area_product, base.xi.H, base.xi.K, base.xi.tau);
        }
        break;
      case ExperimentKind::GridSweep:
        c.label = detail::sweep_label("grid", v);
        c.forward.grid = {static_cast<int>(v), static_cast<int>(v)};
        break;
      case ExperimentKind::Custom:
        continue;
    }
    spec.conditions.push_back(c);
  }
  for (auto& c : spec.conditions) c.forward.validate();
  return spec;
}

/// Seed from second moments of the background-subtracted image, used when
/// the point-based direct fit fails. A uniform ellipse has variance A^2/4
/// along its major axis; the PSF adds sigma^2.
inline GeometricEllipse moment_seed(const PhotonImage& img, double c_background, double sigma_psf) {
  const PixelGrid& g = img.grid;
  const double floor = c_background * static_cast<double>(img.C);
  double w = 0, mx = 0, my = 0;
  for (int m = 0; m < g.M; ++m) {
    for (int n = 0; n < g.N; ++n) {
      const double v = std::max(0.0, static_cast<double>(img.counts(m, n)) - floor);
      w += v;
      mx += v * g.x(n);
      my += v * g.y(m);
    }
  }
  if (!(w > 0.0)) return {0.25, 0.25, 0.5, 0.5, 0.0};
  mx /= w;
  my /= w;
  double sxx = 0, syy = 0, sxy = 0;
  for (int m = 0; m < g.M; ++m) {
    for (int n = 0; n < g.N; ++n) {
      const double v = std::max(0.0, static_cast<double>(img.counts(m, n)) - floor);
      const double dx = g.x(n) - mx, dy = g.y(m) - my;
      sxx += v * dx * dx;
      syy += v * dy * dy;
      sxy += v * dx * dy;
    }
  }
  Eigen::Matrix2d cov;
  cov << sxx / w, sxy / w, sxy / w, syy / w;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const double pitch = std::max(g.pixel_width(), g.pixel_height());
  const double s2 = sigma_psf * sigma_psf;
  const double major = 2.0 * std::sqrt(std::max(eig.eigenvalues()[1] - s2, pitch * pitch));
  const double minor = 2.0 * std::sqrt(std::max(eig.eigenvalues()[0] - s2, pitch * pitch));
  const Eigen::Vector2d dir = eig.eigenvectors().col(1);
  return GeometricEllipse{major, minor, mx, my, std::atan2(dir[1], dir[0])}.canonical();
}

struct MethodOutcome {
  std::string method;
  GeometricEllipse xi{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN()};
  double algebraic_error = std::numeric_limits<double>::quiet_NaN();
  double centre_error = std::numeric_limits<double>::quiet_NaN();
  double nll = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int truth_covered = -1;  // -1 when no confidence region was computed
  std::string status = "ok";
  double runtime_ms = 0.0;
};

struct TrialOutcome {
  int condition = 0;
  int trial = 0;
  double snr = 0.0;
  MethodOutcome ml;
  MethodOutcome def_points;
  MethodOutcome def_gradient;
  std::optional<FitResult> fit;
  std::optional<CovarianceReport> covariance;
};

namespace detail {

inline void score(MethodOutcome& out, const AlgebraicEllipse& theta, const GeometricEllipse& truth) {
  out.algebraic_error = algebraic_error(theta, geo_to_alg(truth));
  try {
    out.xi = alg_to_geo(theta);
    out.centre_error = std::hypot(out.xi.H - truth.H, out.xi.K - truth.K);
  } catch (const DegenerateConic&) {
    out.status = "degenerate_conic";
  }
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// One trial: simulate, both direct fits, ML fit seeded from DEF points
/// (image moments when that fails), covariance and truth coverage.
inline TrialOutcome run_trial(const Condition& condition, std::uint64_t trial_seed,
                              const TrialSettings& settings) {
  using clock = std::chrono::steady_clock;
  TrialOutcome out;
  ForwardConfig cfg = condition.forward;
  cfg.seed = trial_seed;
  const Synthesis syn = synthesize(cfg);
  out.snr = syn.snr;
  const GeometricEllipse& truth = cfg.xi;

  out.def_points.method = "def_points";
  out.def_gradient.method = "def_gradient";
  out.ml.method = "ml";

  std::optional<GeometricEllipse> seed;
  auto t0 = clock::now();
  try {
    const AlgebraicEllipse theta = def_points(extract_edges(syn.image, settings.edge_threshold));
    detail::score(out.def_points, theta, truth);
    out.def_points.converged = out.def_points.status == "ok";
    if (out.def_points.converged) seed = out.def_points.xi;
  } catch (const Error& e) {
    out.def_points.status = "error";
  }
  out.def_points.runtime_ms = detail::elapsed_ms(t0);

  t0 = clock::now();
  try {
    const AlgebraicEllipse theta = def_gradient(syn.image, settings.edge_threshold);
    detail::score(out.def_gradient, theta, truth);
    out.def_gradient.converged = out.def_gradient.status == "ok";
  } catch (const Error& e) {
    out.def_gradient.status = "error";
  }
  out.def_gradient.runtime_ms = detail::elapsed_ms(t0);

  t0 = clock::now();
  try {
    if (!seed) {
      seed = moment_seed(syn.image, cfg.c_background, settings.initial_sigma_psf);
      out.ml.status = "moment_seed";
    }
    const EtaVector init =
        EtaVector::from(*seed, settings.initial_sigma_psf, settings.fit.epsilon_sigma);
    FitResult fr = fit(syn.image, cfg.c_background, init, settings.fit);
    out.ml.xi = fr.xi_hat;
    out.ml.nll = fr.nll;
    out.ml.converged = fr.converged;
    out.ml.centre_error = std::hypot(fr.xi_hat.H - truth.H, fr.xi_hat.K - truth.K);
    out.ml.algebraic_error = algebraic_error(geo_to_alg(fr.xi_hat), geo_to_alg(truth));
    try {
      CovarianceReport cov = covariance_report(fr);
      out.ml.truth_covered = locus_inside_region(truth, cov.theta_hat, cov.cov_theta,
                                                 chi2_quantile(5, settings.alpha))
                                 ? 1
                                 : 0;
      out.covariance = cov;
    } catch (const Error&) {
      out.ml.truth_covered = 0;
      out.ml.status = "singular_hessian";
    }
    out.fit = std::move(fr);
  } catch (const Error& e) {
    out.ml.status = "error";
  }
  out.ml.runtime_ms = detail::elapsed_ms(t0);
  return out;
}

inline std::uint64_t condition_seed(std::uint64_t master, int condition) {
  return derive_seed(master, static_cast<std::uint64_t>(condition));
}
inline std::uint64_t trial_seed(std::uint64_t master, int condition, int trial) {
  return derive_seed(condition_seed(master, condition), static_cast<std::uint64_t>(trial));
}

/// Runs every (condition, trial) on up to `jobs` threads. Results come back
/// ordered by (condition, trial) whatever the scheduling.
inline std::vector<TrialOutcome> run_experiment(const ExperimentSpec& spec, int jobs = 1) {
  const int per = spec.trials;
  const int total = static_cast<int>(spec.conditions.size()) * per;
  std::vector<TrialOutcome> results(static_cast<std::size_t>(total));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < total; i = next++) {
      const int c = i / per, t = i % per;
      TrialOutcome r = run_trial(spec.conditions[static_cast<std::size_t>(c)],
                                 trial_seed(spec.master_seed, c, t), spec.settings);
      r.condition = c;
      r.trial = t;
      results[static_cast<std::size_t>(i)] = std::move(r);
    }
  };
  jobs = std::max(1, std::min(jobs, total));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return results;
}

inline const char* kCsvHeader =
    "condition,trial,method,A,B,H,K,tau,algebraic_error,centre_error,nll,converged,"
    "truth_covered,snr,status,runtime_ms";

/// One row per (condition, trial, method). runtime_ms is the last column
/// and the only one that varies between identical runs.
inline void write_experiment_csv(std::ostream& out, const ExperimentSpec& spec,
                                 const std::vector<TrialOutcome>& results) {
  out << kCsvHeader << '\n';
  auto num = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string("nan"); };
  for (const auto& r : results) {
    for (const MethodOutcome* m : {&r.ml, &r.def_points, &r.def_gradient}) {
      out << spec.conditions[static_cast<std::size_t>(r.condition)].label << ',' << r.trial << ','
          << m->method << ',' << num(m->xi.A) << ',' << num(m->xi.B) << ',' << num(m->xi.H) << ','
          << num(m->xi.K) << ',' << num(m->xi.tau) << ',' << num(m->algebraic_error) << ','
          << num(m->centre_error) << ',' << num(m->nll) << ',' << (m->converged ? 1 : 0) << ','
          << m->truth_covered << ',' << num(r.snr) << ',' << m->status << ','
          << io::format_double(std::round(m->runtime_ms * 1000.0) / 1000.0) << '\n';
    }
  }
}

}  // namespace mlellipse
