// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mlellipse/mlellipse.hpp"
#include "test_support.hpp"

using namespace mlellipse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// 1 -----------------------------------------------------------------------------
Outcome pmf_correctness() {
  const auto t0 = Clock::now();
  double worst_mass = 1.0, worst_rel = 0.0, worst_poisson = 0.0;
  for (double lambda : {0.5, 5.0, 50.0, 500.0}) {
    for (std::int64_t b : {0, 1, 4, 16}) {
      const auto nmax = static_cast<std::int64_t>(std::ceil(lambda + 20 * std::sqrt(lambda))) + b;
      double total = 0.0;
      for (std::int64_t n = -b; n <= nmax; ++n) {
        const double p = pmf({lambda, b}, n);
        total += p;
        // Direct window sum in long double.
        long double direct = 0.0L;
        for (std::int64_t k = std::max<std::int64_t>(n - b, 0); k <= n + b; ++k) {
          direct += std::exp(-static_cast<long double>(lambda) + k * std::log(static_cast<long double>(lambda)) -
                             std::lgamma(static_cast<long double>(k) + 1.0L));
        }
        direct /= (2.0L * b + 1.0L);
        if (direct > 1e-300L) {
          worst_rel = std::max(worst_rel, static_cast<double>(std::abs(p - direct) / direct));
        }
        if (b == 0 && n >= 0) {
          const double poisson = static_cast<double>(direct);
          if (poisson > 1e-300) worst_poisson = std::max(worst_poisson, std::abs(p - poisson) / poisson);
        }
      }
      worst_mass = std::min(worst_mass, total);
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = worst_mass >= 1 - 1e-9 && worst_rel < 1e-12 && worst_poisson < 1e-12 && elapsed < 1.0;
  return {pass, "min mass " + fmt(worst_mass) + ", max rel diff " + fmt(worst_rel) + ", b=0 vs Poisson " +
                    fmt(worst_poisson) + ", " + fmt(elapsed) + " s"};
}

// 2 -----------------------------------------------------------------------------
Outcome intersection_area() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> centre(-1.5, 1.5), size(0.05, 2.0), axis(0.1, 1.5);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const clip::AlignedRect r{centre(rng), centre(rng), size(rng), size(rng)};
    const double A = axis(rng), B = axis(rng);
    const double s = clip::ellipse_rect_area(r, A, B);
    const double mc = test::mc_rect_area(r.cx, r.cy, r.w, r.h, A, B, 1000000, rng);
    worst = std::max(worst, std::abs(s - mc));
  }
  double worst_exact = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double A = axis(rng), B = axis(rng), u = centre(rng) / 1.5, v = centre(rng) / 1.5;
    // Shifted by less than a semi-axis: the 4A x 4B rectangle still covers the ellipse.
    worst_exact = std::max(worst_exact, std::abs(clip::ellipse_rect_area({0.9 * u * A, 0.9 * v * B, 4 * A, 4 * B}, A, B) -
                                                 std::numbers::pi * A * B));
    // Small rectangle near the centre, well inside.
    const double w = 0.2 * A, h = 0.2 * B;
    worst_exact = std::max(worst_exact, std::abs(clip::ellipse_rect_area({0.1 * u * A, 0.1 * v * B, w, h}, A, B) - w * h));
  }
  return {worst < 3e-3 && worst_exact < 1e-12,
          "max |area - MC| " + fmt(worst) + " over 1000 configs, containment error " + fmt(worst_exact)};
}

// 3 -----------------------------------------------------------------------------
template <class M>
double rel(const M& a, const M& f) {
  return (a - f).cwiseAbs().maxCoeff() / std::max(1e-300, f.cwiseAbs().maxCoeff());
}

Outcome jacobians() {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> nrm(0, 1);
  double w_eta = 0, w_kappa = 0, w_pi = 0;
  for (int i = 0; i < 100; ++i) {
    Vector6 v;
    for (int k = 0; k < 6; ++k) v[k] = u(rng);
    const auto f_eta = [](const Vector6& x) { return EtaVector::from_vector(x).xi().to_vector(); };
    w_eta = std::max(w_eta, rel(Matrix56(jacobian_xi_of_eta(EtaVector::from_vector(v))),
                                Matrix56(test::fd_jacobian<5, 6>(f_eta, v, 1e-5))));

    const GeometricEllipse xi = test::random_ellipse(rng);
    const auto f_kappa = [](const Vector5& x) { return geo_to_alg(GeometricEllipse::from_vector(x)).to_vector(); };
    w_kappa = std::max(w_kappa, rel(Matrix65(jacobian_kappa(xi)),
                                    Matrix65(test::fd_jacobian<6, 5>(f_kappa, xi.to_vector(), 1e-6))));

    Vector6 t;
    for (int k = 0; k < 6; ++k) t[k] = nrm(rng);
    const auto f_pi = [](const Vector6& x) -> Vector6 { return x / x.norm(); };
    w_pi = std::max(w_pi, rel(Matrix6(jacobian_pi(t)), Matrix6(test::fd_jacobian<6, 6>(f_pi, t, 1e-6))));
  }
  return {std::max({w_eta, w_kappa, w_pi}) < 1e-5,
          "max rel err xi(eta) " + fmt(w_eta) + ", kappa " + fmt(w_kappa) + ", pi " + fmt(w_pi)};
}

// 4 -----------------------------------------------------------------------------
Outcome round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(44);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const GeometricEllipse xi = test::random_ellipse(rng);
    const GeometricEllipse g = alg_to_geo(geo_to_alg(xi));
    const double dt = std::fmod(std::abs(g.tau - xi.tau), std::numbers::pi);
    worst = std::max({worst, std::abs(g.A - xi.A), std::abs(g.B - xi.B), std::abs(g.H - xi.H),
                      std::abs(g.K - xi.K), std::min(dt, std::numbers::pi - dt)});
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-9 && elapsed < 1.0, "max componentwise error " + fmt(worst) + ", " + fmt(elapsed) + " s"};
}

// 5 -----------------------------------------------------------------------------
Outcome chi2_threshold() {
  const double q = chi2_quantile(5, 0.05);
  return {std::abs(q - 11.07) <= 0.01, "chi2_quantile(5, 0.05) = " + std::to_string(q)};
}

// 6 -----------------------------------------------------------------------------
Outcome snr_reproduction() {
  const std::int64_t C[] = {16, 32, 64, 128, 256};
  const double expected[] = {3.2, 4.6, 6.5, 9.1, 12.9};
  bool pass = true;
  std::string d;
  for (int i = 0; i < 5; ++i) {
    ForwardConfig cfg;
    cfg.xi = {0.25, 0.05, 0.5, 0.5, 0.785};
    cfg.grid = {32, 32};
    cfg.sigma_psf = 0.05;
    cfg.b = 1;
    cfg.C = C[i];
    const double s = synthesize(cfg).snr;
    pass = pass && std::abs(s - expected[i]) <= 0.2;
    d += (i ? ", " : "") + std::string("C=") + std::to_string(C[i]) + ": " + fmt(s);
  }
  return {pass, d};
}

// 7 and 9 share one run ---------------------------------------------------------
std::vector<TrialOutcome> reference_trials(int jobs, double& elapsed) {
  const ExperimentSpec spec = make_experiment({{"experiment.kind", "snr_sweep"},
                                               {"experiment.trials", "100"},
                                               {"experiment.seed", "7"},
                                               {"sweep.values", "256"}});
  const auto t0 = Clock::now();
  auto r = run_experiment(spec, jobs);
  elapsed = seconds_since(t0);
  return r;
}

std::vector<TrialOutcome> c7_results;
double c7_seconds = 0.0;

Outcome recovery() {
  c7_results = reference_trials(1, c7_seconds);
  double four_seconds = 0.0;
  reference_trials(4, four_seconds);
  std::vector<double> ml, dp, centre;
  for (const auto& t : c7_results) {
    ml.push_back(std::isnan(t.ml.algebraic_error) ? 1.0 : t.ml.algebraic_error);
    dp.push_back(std::isnan(t.def_points.algebraic_error) ? 1.0 : t.def_points.algebraic_error);
    centre.push_back(std::isnan(t.ml.centre_error) ? 1.0 : t.ml.centre_error);
  }
  const double m_ml = median(ml), m_dp = median(dp), m_c = median(centre);
  const bool pass = m_ml < m_dp && m_c < 0.01 && c7_seconds < 900 && four_seconds < 240;
  return {pass, "median algebraic error ML " + fmt(m_ml) + " vs DEF-points " + fmt(m_dp) +
                    ", median ML centre error " + fmt(m_c) + ", runtime " + fmt(c7_seconds) +
                    " s (1 worker), " + fmt(four_seconds) + " s (4 workers)"};
}

// 8 -----------------------------------------------------------------------------
Outcome quantisation() {
  const ExperimentSpec spec = make_experiment({{"experiment.kind", "quantisation_sweep"},
                                               {"experiment.trials", "100"},
                                               {"experiment.seed", "8"},
                                               {"sweep.values", "32"}});
  const auto results = run_experiment(spec, 1);
  std::vector<double> centre;
  int converged = 0;
  for (const auto& t : results) {
    centre.push_back(std::isnan(t.ml.centre_error) ? 1.0 : t.ml.centre_error);
    converged += t.ml.converged;
  }
  const double m = median(centre);
  return {m < 0.03, "b=32 (G=" + std::to_string(spec.conditions[0].forward.C / 64) + ") median ML centre error " +
                        fmt(m) + ", " + std::to_string(converged) + "/100 converged"};
}

// 9 -----------------------------------------------------------------------------
Outcome coverage() {
  if (c7_results.empty()) c7_results = reference_trials(1, c7_seconds);
  int covered = 0;
  for (const auto& t : c7_results) covered += t.ml.truth_covered == 1;
  return {covered >= 85, std::to_string(covered) + "/100 true loci inside the alpha=0.05 region"};
}

// 10 ----------------------------------------------------------------------------
int run_cli(const std::string& args) {
  const std::string cmd = std::string(MLELLIPSE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string csv_without_runtime(const fs::path& p) {
  std::ifstream in(p);
  std::string out;
  for (std::string l; std::getline(in, l);) out += l.substr(0, l.rfind(',')) + '\n';
  return out;
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "mlellipse_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = std::string(MLELLIPSE_CONFIGS) + "/snr_sweep.cfg";
  const std::string common = cfg + " --trials 10 --seed 11 -o ";
  if (run_cli("experiment " + common + (dir / "a.csv").string() + " -j 1") != 0 ||
      run_cli("experiment " + common + (dir / "b.csv").string() + " -j 1") != 0 ||
      run_cli("experiment " + common + (dir / "c.csv").string() + " -j 4") != 0) {
    return {false, "experiment subcommand failed"};
  }
  const std::string a = csv_without_runtime(dir / "a.csv");
  const bool same_runs = a == csv_without_runtime(dir / "b.csv");
  const bool same_jobs = a == csv_without_runtime(dir / "c.csv");
  const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
  return {same_runs && same_jobs && rows == 150,
          std::to_string(rows) + " rows; rerun identical: " + (same_runs ? "yes" : "no") +
              ", 1 vs 4 workers identical: " + (same_jobs ? "yes" : "no")};
}

}  // namespace

int main() {
  report(1, "pmf correctness", pmf_correctness);
  report(2, "intersection-area oracle", intersection_area);
  report(3, "Jacobian suite", jacobians);
  report(4, "round-trip conversions", round_trip);
  report(5, "chi-squared threshold", chi2_threshold);
  report(6, "SNR reproduction", snr_reproduction);
  report(7, "recovery at desk scale", recovery);
  report(8, "quantisation robustness", quantisation);
  report(9, "confidence-region coverage", coverage);
  report(10, "determinism", determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
