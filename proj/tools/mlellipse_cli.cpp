// mlellipse: simulate, fit, experiment, region and baseline subcommands.
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 non-convergence, 4 I/O error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mlellipse/mlellipse.hpp"

namespace ml = mlellipse;
namespace io = mlellipse::io;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitIo = 4;

std::string fmt(double v) { return io::format_double(v); }

template <class Derived>
std::string join(const Eigen::MatrixBase<Derived>& m) {
  std::string s;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!s.empty()) s += ',';
      s += fmt(m(i, j));
    }
  }
  return s;
}

Eigen::MatrixXd parse_matrix(const io::KeyValues& kv, const std::string& key, int rows, int cols) {
  const std::vector<double> v = io::get_list(kv, key);
  if (static_cast<int>(v.size()) != rows * cols) {
    throw ml::InvalidConfig("key '" + key + "' needs " + std::to_string(rows * cols) + " values");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  return m;
}

io::KeyValues metadata_for(const ml::ForwardConfig& cfg, double snr) {
  io::KeyValues kv;
  kv["truth.A"] = fmt(cfg.xi.A);
  kv["truth.B"] = fmt(cfg.xi.B);
  kv["truth.H"] = fmt(cfg.xi.H);
  kv["truth.K"] = fmt(cfg.xi.K);
  kv["truth.tau"] = fmt(cfg.xi.tau);
  kv["image.rows"] = std::to_string(cfg.grid.M);
  kv["image.cols"] = std::to_string(cfg.grid.N);
  kv["image.sigma_psf"] = fmt(cfg.sigma_psf);
  kv["image.background"] = fmt(cfg.c_background);
  kv["image.C"] = std::to_string(cfg.C);
  kv["image.b"] = std::to_string(cfg.b);
  kv["image.seed"] = std::to_string(cfg.seed);
  kv["image.snr"] = fmt(snr);
  if (cfg.b > 0) kv["image.grey_levels"] = std::to_string(cfg.C / (2 * cfg.b));
  return kv;
}

// Image plus metadata: the sidecar wins over PGM comments, command-line
// overrides win over both.
struct LoadedImage {
  ml::PhotonImage image;
  io::KeyValues meta;
  double background = 0.0;
};

LoadedImage load_image(const std::string& path, const std::string& meta_path,
                       std::optional<std::int64_t> C_override,
                       std::optional<double> background_override) {
  io::PgmImage pgm = io::read_pgm(path);
  LoadedImage out;
  out.meta = pgm.comments;
  const std::string sidecar = meta_path.empty() ? path + ".meta" : meta_path;
  if (std::ifstream(sidecar).good()) {
    for (auto& [k, v] : io::read_key_values(sidecar)) out.meta[k] = v;
  } else if (!meta_path.empty()) {
    throw ml::IoError("cannot open " + meta_path);
  }
  if (C_override) out.meta["image.C"] = std::to_string(*C_override);
  if (background_override) out.meta["image.background"] = fmt(*background_override);

  out.image.grid = {static_cast<int>(pgm.counts.rows()), static_cast<int>(pgm.counts.cols())};
  out.image.grid.validate();
  out.image.counts = std::move(pgm.counts);
  out.image.C = io::get_int(out.meta, "image.C");
  out.image.b = io::get_int(out.meta, "image.b", 0);
  ml::validate_quantisation(out.image.C, out.image.b);
  out.background = io::get_double(out.meta, "image.background", 0.0);
  return out;
}

std::optional<ml::GeometricEllipse> truth_from(const io::KeyValues& meta) {
  if (!meta.count("truth.A")) return std::nullopt;
  return ml::GeometricEllipse{io::get_double(meta, "truth.A"), io::get_double(meta, "truth.B"),
                              io::get_double(meta, "truth.H"), io::get_double(meta, "truth.K"),
                              io::get_double(meta, "truth.tau")};
}

ml::GeometricEllipse parse_ellipse(const std::string& text) {
  io::KeyValues kv{{"init", text}};
  const auto v = io::get_list(kv, "init");
  if (v.size() != 5) throw ml::InvalidConfig("--init needs A,B,H,K,tau");
  return {v[0], v[1], v[2], v[3], v[4]};
}

void emit(const io::KeyValues& record, const std::string& out_path) {
  if (out_path.empty()) {
    for (const auto& [k, v] : record) std::cout << k << " = " << v << '\n';
  } else {
    io::write_key_values(out_path, record);
  }
}

void write_mask(const std::string& path, const ml::ConfidenceRegionRaster& r) {
  ml::CountMatrix m = r.mask.cast<std::int64_t>() * 255;
  io::write_pgm(path, m, {{"alpha", fmt(r.alpha)}, {"threshold", fmt(r.threshold)}});
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string config, out, meta;
  bool ascii = false;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& a) {
  const io::KeyValues kv = io::read_key_values(a.config);
  ml::ForwardConfig cfg;
  cfg.grid = {32, 32};
  cfg.xi = {0.25, 0.05, 0.5, 0.5, 0.785};
  cfg.b = 1;
  cfg = ml::apply_forward_overrides(kv, cfg);
  if (a.seed) cfg.seed = *a.seed;
  const ml::Synthesis syn = ml::synthesize(cfg);
  const io::KeyValues meta = metadata_for(cfg, syn.snr);
  io::write_pgm(a.out, syn.image.counts, meta,
                a.ascii ? io::PgmEncoding::Ascii : io::PgmEncoding::Binary);
  io::write_key_values(a.meta.empty() ? a.out + ".meta" : a.meta, meta);
  std::cerr << "snr = " << fmt(syn.snr) << '\n';
  return kExitOk;
}

// ---- fit ----------------------------------------------------------------------

struct FitArgs {
  std::string image, meta, seed_from = "def-points", init, baseline, out, region;
  std::optional<std::int64_t> C;
  std::optional<double> background;
  double initial_sigma = 0.02;
  double alpha = 0.05;
  double edge_threshold = 0.3;
  int resolution = 512;
  int max_iterations = 200;
  int multistart = 0;
  bool allow_nonconverged = false;
};

io::KeyValues baseline_record(const std::string& method, const ml::AlgebraicEllipse& theta,
                              const std::optional<ml::GeometricEllipse>& truth) {
  io::KeyValues r;
  const std::string p = "baseline.";
  r[p + "method"] = method;
  r[p + "theta"] = join(theta.normalized().to_vector().transpose());
  try {
    const ml::GeometricEllipse g = ml::alg_to_geo(theta);
    r[p + "A"] = fmt(g.A);
    r[p + "B"] = fmt(g.B);
    r[p + "H"] = fmt(g.H);
    r[p + "K"] = fmt(g.K);
    r[p + "tau"] = fmt(g.tau);
  } catch (const ml::DegenerateConic&) {
    r[p + "status"] = "degenerate_conic";
  }
  if (truth) r[p + "algebraic_error"] = fmt(ml::algebraic_error(theta, ml::geo_to_alg(*truth)));
  return r;
}

ml::AlgebraicEllipse run_baseline(const std::string& method, const ml::PhotonImage& img,
                                  double threshold) {
  if (method == "def-points") return ml::def_points(ml::extract_edges(img, threshold));
  if (method == "def-gradient") return ml::def_gradient(img, threshold);
  throw ml::InvalidConfig("unknown baseline '" + method + "' (def-points | def-gradient)");
}

int cmd_fit(const FitArgs& a) {
  const LoadedImage li = load_image(a.image, a.meta, a.C, a.background);
  const auto truth = truth_from(li.meta);

  if (!a.baseline.empty()) {
    emit(baseline_record(a.baseline, run_baseline(a.baseline, li.image, a.edge_threshold), truth),
         a.out);
    return kExitOk;
  }

  ml::GeometricEllipse seed;
  if (a.seed_from == "truth") {
    if (!truth) throw ml::InvalidConfig("missing key 'truth.A' needed by --seed-from truth");
    seed = *truth;
  } else if (a.seed_from == "user") {
    if (a.init.empty()) throw ml::InvalidConfig("--seed-from user needs --init A,B,H,K,tau");
    seed = parse_ellipse(a.init);
  } else if (a.seed_from == "def-points") {
    try {
      seed = ml::alg_to_geo(ml::def_points(ml::extract_edges(li.image, a.edge_threshold)));
    } catch (const ml::Error& e) {
      std::cerr << "def-points seed failed (" << e.what() << "), using image moments\n";
      seed = ml::moment_seed(li.image, li.background, a.initial_sigma);
    }
  } else {
    throw ml::InvalidConfig("unknown --seed-from '" + a.seed_from + "'");
  }

  ml::FitOptions opts;
  opts.max_iterations = a.max_iterations;
  opts.multistart = a.multistart;
  opts.seed_source = a.seed_from == "truth"  ? ml::SeedSource::Truth
                     : a.seed_from == "user" ? ml::SeedSource::User
                                             : ml::SeedSource::DefPoints;
  const ml::EtaVector init = ml::EtaVector::from(seed, a.initial_sigma, opts.epsilon_sigma);
  const ml::FitResult fr = ml::fit(li.image, li.background, init, opts);

  io::KeyValues r;
  r["fit.converged"] = fr.converged ? "true" : "false";
  r["fit.iterations"] = std::to_string(fr.iterations);
  r["fit.evaluations"] = std::to_string(fr.evaluations);
  r["fit.nll"] = fmt(fr.nll);
  r["fit.A"] = fmt(fr.xi_hat.A);
  r["fit.B"] = fmt(fr.xi_hat.B);
  r["fit.H"] = fmt(fr.xi_hat.H);
  r["fit.K"] = fmt(fr.xi_hat.K);
  r["fit.tau"] = fmt(fr.xi_hat.tau);
  r["fit.sigma_psf"] = fmt(fr.sigma_psf_hat);
  r["fit.eta"] = join(fr.eta_hat.to_vector().transpose());
  r["fit.seed_from"] = a.seed_from;
  if (truth) {
    r["fit.algebraic_error"] = fmt(ml::algebraic_error(ml::geo_to_alg(fr.xi_hat), ml::geo_to_alg(*truth)));
    r["fit.centre_error"] = fmt(std::hypot(fr.xi_hat.H - truth->H, fr.xi_hat.K - truth->K));
  }
  std::optional<ml::CovarianceReport> cov;
  try {
    cov = ml::covariance_report(fr);
    r["covariance.pseudo_inverse"] = cov->pseudo_inverse ? "true" : "false";
    r["covariance.condition"] = fmt(cov->condition);
    r["covariance.eta"] = join(cov->cov_eta);
    r["covariance.xi"] = join(cov->cov_xi);
    r["covariance.theta"] = join(cov->cov_theta);
    r["covariance.theta_hat"] = join(cov->theta_hat.to_vector().transpose());
    if (truth) {
      r["covariance.truth_covered"] =
          ml::locus_inside_region(*truth, cov->theta_hat, cov->cov_theta, ml::chi2_quantile(5, a.alpha))
              ? "true"
              : "false";
    }
  } catch (const ml::SingularHessian& e) {
    r["covariance.status"] = std::string("singular: ") + e.what();
  }
  emit(r, a.out);
  if (!a.region.empty()) {
    if (!cov) throw ml::SingularHessian("no covariance available for the region");
    write_mask(a.region, ml::confidence_region(cov->theta_hat, cov->cov_theta, a.alpha, a.resolution));
  }
  if (!fr.converged && !a.allow_nonconverged) {
    std::cerr << "fit did not converge in " << fr.iterations << " iterations\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

// ---- region -------------------------------------------------------------------

struct RegionArgs {
  std::string record, mask, zbar;
  double alpha = 0.05;
  int resolution = 512;
};

int cmd_region(const RegionArgs& a) {
  const io::KeyValues kv = io::read_key_values(a.record);
  const Eigen::MatrixXd theta = parse_matrix(kv, "covariance.theta_hat", 1, 6);
  const ml::Matrix6 cov = parse_matrix(kv, "covariance.theta", 6, 6);
  const ml::AlgebraicEllipse t{theta(0, 0), theta(0, 1), theta(0, 2), theta(0, 3), theta(0, 4), theta(0, 5)};
  const ml::ConfidenceRegionRaster r = ml::confidence_region(t, cov, a.alpha, a.resolution);
  write_mask(a.mask, r);
  if (!a.zbar.empty()) io::write_csv(a.zbar, r.zbar);
  std::cerr << "region samples = " << r.area_samples() << " of " << r.resolution * r.resolution << '\n';
  return kExitOk;
}

// ---- baseline -----------------------------------------------------------------

struct BaselineArgs {
  std::string image, meta, method = "def-points", edges, out;
  double edge_threshold = 0.3;
};

int cmd_baseline(const BaselineArgs& a) {
  const LoadedImage li = load_image(a.image, a.meta, std::nullopt, std::nullopt);
  if (!a.edges.empty()) {
    const ml::EdgePointSet set = ml::extract_edges(li.image, a.edge_threshold);
    std::ofstream out(a.edges);
    if (!out) throw ml::IoError("cannot write " + a.edges);
    out << "x,y,weight\n";
    for (const auto& p : set.points) out << fmt(p.x) << ',' << fmt(p.y) << ',' << fmt(p.weight) << '\n';
  }
  emit(baseline_record(a.method, run_baseline(a.method, li.image, a.edge_threshold), truth_from(li.meta)),
       a.out);
  return kExitOk;
}

// ---- experiment ---------------------------------------------------------------

struct ExperimentArgs {
  std::string config, out;
  int jobs = 1;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
};

int cmd_experiment(const ExperimentArgs& a) {
  io::KeyValues kv = io::read_key_values(a.config);
  if (a.trials) kv["experiment.trials"] = std::to_string(*a.trials);
  if (a.seed) kv["experiment.seed"] = std::to_string(*a.seed);
  const ml::ExperimentSpec spec = ml::make_experiment(kv);
  const auto results = ml::run_experiment(spec, a.jobs);

  std::ofstream out(a.out);
  if (!out) throw ml::IoError("cannot write " + a.out);
  ml::write_experiment_csv(out, spec, results);
  if (!out) throw ml::IoError("write failed: " + a.out);

  // Per-condition truth, so derived ellipses (eccentricity sweep) are on record.
  io::KeyValues meta;
  meta["experiment.trials"] = std::to_string(spec.trials);
  meta["experiment.seed"] = std::to_string(spec.master_seed);
  for (std::size_t i = 0; i < spec.conditions.size(); ++i) {
    const auto& c = spec.conditions[i];
    const std::string p = "condition" + std::to_string(i) + ".";
    meta[p + "label"] = c.label;
    meta[p + "truth"] = join(c.forward.xi.to_vector().transpose());
    meta[p + "grid"] = std::to_string(c.forward.grid.M) + "x" + std::to_string(c.forward.grid.N);
    meta[p + "sigma_psf"] = fmt(c.forward.sigma_psf);
    meta[p + "C"] = std::to_string(c.forward.C);
    meta[p + "b"] = std::to_string(c.forward.b);
    meta[p + "seed"] = std::to_string(ml::condition_seed(spec.master_seed, static_cast<int>(i)));
  }
  io::write_key_values(a.out + ".meta", meta);

  int failures = 0;
  for (const auto& r : results) failures += r.ml.status == "error";
  std::cerr << results.size() << " trials, " << failures << " ML failures\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum-likelihood ellipse fitting with confidence regions"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Render a noisy, quantised ellipse image");
  s->add_option("config", sim.config, "Key-value config ([truth], [image])")->required();
  s->add_option("-o,--out", sim.out, "Output PGM")->required();
  s->add_option("--meta", sim.meta, "Metadata sidecar (default: <out>.meta)");
  s->add_option("--seed", sim.seed, "Override image.seed");
  s->add_flag("--ascii", sim.ascii, "Write P2 instead of P5");

  FitArgs fa;
  auto* f = app.add_subcommand("fit", "Maximum-likelihood fit of one image");
  f->add_option("image", fa.image, "Input PGM")->required();
  f->add_option("--meta", fa.meta, "Metadata sidecar (default: <image>.meta if present)");
  f->add_option("--seed-from", fa.seed_from, "truth | def-points | user")
      ->check(CLI::IsMember({"truth", "def-points", "user"}));
  f->add_option("--init", fa.init, "Initial A,B,H,K,tau for --seed-from user");
  f->add_option("--initial-sigma", fa.initial_sigma, "Initial PSF width");
  f->add_option("--C", fa.C, "Override conversion factor C");
  f->add_option("--background", fa.background, "Override background level c");
  f->add_option("--baseline", fa.baseline, "Run a direct fit instead: def-points | def-gradient");
  f->add_option("--edge-threshold", fa.edge_threshold, "Edge threshold fraction");
  f->add_option("--alpha", fa.alpha, "Confidence level parameter");
  f->add_option("--region", fa.region, "Write the confidence-region mask PGM here");
  f->add_option("--resolution", fa.resolution, "Region raster size");
  f->add_option("--max-iterations", fa.max_iterations, "BFGS iteration cap");
  f->add_option("--multistart", fa.multistart, "Extra jittered starts");
  f->add_option("-o,--out", fa.out, "Result record (default: stdout)");
  f->add_flag("--allow-nonconverged", fa.allow_nonconverged, "Exit 0 even without convergence");

  ExperimentArgs ea;
  auto* e = app.add_subcommand("experiment", "Run a synthetic sweep and write a CSV");
  e->add_option("config", ea.config, "Experiment config")->required();
  e->add_option("-o,--out", ea.out, "Output CSV")->required();
  e->add_option("-j,--jobs", ea.jobs, "Worker threads")->check(CLI::PositiveNumber);
  e->add_option("--trials", ea.trials, "Override experiment.trials");
  e->add_option("--seed", ea.seed, "Override experiment.seed");

  RegionArgs ra;
  auto* r = app.add_subcommand("region", "Rasterise a confidence region from a fit record");
  r->add_option("record", ra.record, "Record written by 'fit -o'")->required();
  r->add_option("--mask", ra.mask, "Output mask PGM (0/255)")->required();
  r->add_option("--zbar", ra.zbar, "Output CSV of the zbar field");
  r->add_option("--alpha", ra.alpha, "Confidence level parameter");
  r->add_option("--resolution", ra.resolution, "Raster size");

  BaselineArgs ba;
  auto* bl = app.add_subcommand("baseline", "Direct ellipse fit of one image");
  bl->add_option("image", ba.image, "Input PGM")->required();
  bl->add_option("--meta", ba.meta, "Metadata sidecar");
  bl->add_option("--method", ba.method, "def-points | def-gradient");
  bl->add_option("--edges", ba.edges, "Write edge points as CSV (x,y,weight)");
  bl->add_option("--edge-threshold", ba.edge_threshold, "Edge threshold fraction");
  bl->add_option("-o,--out", ba.out, "Result record (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*f) return cmd_fit(fa);
    if (*e) return cmd_experiment(ea);
    if (*r) return cmd_region(ra);
    if (*bl) return cmd_baseline(ba);
  } catch (const ml::InvalidConfig& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const ml::IoError& err) {
    std::cerr << "I/O error: " << err.what() << '\n';
    return kExitIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
