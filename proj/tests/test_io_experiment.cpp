#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>

#include "mlellipse/experiment.hpp"
#include "mlellipse/io.hpp"

using namespace mlellipse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mlellipse_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string strip_runtime(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

std::string run_csv(const ExperimentSpec& spec, int jobs) {
  std::ostringstream os;
  write_experiment_csv(os, spec, run_experiment(spec, jobs));
  return os.str();
}

}  // namespace

TEST(KeyValues, ParsesSectionsAndComments) {
  std::istringstream in("top = 1\n# comment\n; another\n\n[image]\n  C = 256 \nb=1\n[truth]\nA = 0.25\n");
  const io::KeyValues kv = io::parse_key_values(in);
  EXPECT_EQ(kv.at("top"), "1");
  EXPECT_EQ(io::get_int(kv, "image.C"), 256);
  EXPECT_EQ(io::get_int(kv, "image.b"), 1);
  EXPECT_DOUBLE_EQ(io::get_double(kv, "truth.A"), 0.25);
  EXPECT_DOUBLE_EQ(io::get_double(kv, "truth.B", 0.5), 0.5);
}

TEST(KeyValues, Errors) {
  std::istringstream bad_header("[image\n");
  EXPECT_THROW(io::parse_key_values(bad_header), InvalidConfig);
  std::istringstream no_eq("just words\n");
  EXPECT_THROW(io::parse_key_values(no_eq), InvalidConfig);
  const io::KeyValues kv{{"x", "abc"}, {"y", "1.5"}};
  EXPECT_THROW(io::get_double(kv, "x"), InvalidConfig);
  EXPECT_THROW(io::get_int(kv, "y"), InvalidConfig);
  try {
    io::get_int(kv, "image.C");
    FAIL();
  } catch (const InvalidConfig& e) {
    EXPECT_NE(std::string(e.what()).find("image.C"), std::string::npos);
  }
  EXPECT_THROW(io::read_key_values("/nonexistent/file.cfg"), IoError);
}

TEST(FormatDouble, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 12.928, 1e-300, 123456789.0}) {
    EXPECT_EQ(std::stod(io::format_double(v)), v);
  }
  EXPECT_EQ(io::format_double(0.785), "0.785");
}

TEST(Pgm, RoundTripBinaryAsciiAndWide) {
  const fs::path dir = temp_dir("pgm");
  CountMatrix small(3, 4);
  small << 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 255;
  CountMatrix wide = small * 200;
  for (auto enc : {io::PgmEncoding::Binary, io::PgmEncoding::Ascii}) {
    for (const CountMatrix* m : {&small, &wide}) {
      const std::string path = (dir / "img.pgm").string();
      io::write_pgm(path, *m, {{"image.C", "256"}, {"image.snr", "12.9"}}, enc);
      const io::PgmImage back = io::read_pgm(path);
      EXPECT_EQ(back.counts, *m);
      EXPECT_EQ(back.comments.at("image.C"), "256");
      EXPECT_EQ(back.maxval, m->maxCoeff());
    }
  }
  CountMatrix neg = small;
  neg(0, 0) = -1;
  EXPECT_THROW(io::write_pgm((dir / "neg.pgm").string(), neg), IoError);
  EXPECT_THROW(io::read_pgm((dir / "missing.pgm").string()), IoError);
}

TEST(Seeds, SplittingIsStableAndDistinct) {
  EXPECT_EQ(trial_seed(1, 2, 3), derive_seed(derive_seed(1, 2), 3));
  EXPECT_NE(trial_seed(1, 0, 0), trial_seed(1, 0, 1));
  EXPECT_NE(trial_seed(1, 0, 1), trial_seed(1, 1, 0));
  EXPECT_NE(trial_seed(1, 0, 0), trial_seed(2, 0, 0));
}

TEST(MakeExperiment, DefaultSweeps) {
  const ExperimentSpec snr = make_experiment({{"experiment.kind", "SNR_SWEEP"}});
  ASSERT_EQ(snr.conditions.size(), 5u);
  EXPECT_EQ(snr.conditions[0].forward.C, 16);
  EXPECT_EQ(snr.conditions[4].forward.C, 256);
  EXPECT_EQ(snr.trials, 100);

  const ExperimentSpec q = make_experiment({{"experiment.kind", "quantisation_sweep"}});
  ASSERT_EQ(q.conditions.size(), 5u);
  EXPECT_EQ(q.conditions[4].forward.b, 32);
  EXPECT_DOUBLE_EQ(q.conditions[0].forward.xi.A, 0.35);
  EXPECT_DOUBLE_EQ(q.conditions[0].forward.xi.tau, 0.0);

  const ExperimentSpec g = make_experiment({{"experiment.kind", "grid_sweep"}});
  EXPECT_EQ(g.conditions[0].forward.grid.M, 8);
  EXPECT_EQ(g.conditions[4].forward.grid.N, 128);
  EXPECT_DOUBLE_EQ(g.conditions[0].forward.sigma_psf, 0.15);

  const ExperimentSpec e = make_experiment({{"experiment.kind", "eccentricity_sweep"}});
  for (const auto& c : e.conditions) {
    EXPECT_NEAR(c.forward.xi.A * c.forward.xi.B, 0.0175, 1e-12);
  }
  const double e0 = std::sqrt(1 - std::pow(e.conditions[0].forward.xi.B / e.conditions[0].forward.xi.A, 2));
  EXPECT_NEAR(e0, 0.78, 1e-12);

  const ExperimentSpec fixed =
      make_experiment({{"experiment.kind", "eccentricity_sweep"}, {"sweep.semi_major", "0.35"}});
  EXPECT_DOUBLE_EQ(fixed.conditions[3].forward.xi.A, 0.35);

  EXPECT_THROW(make_experiment({{"experiment.kind", "nope"}}), InvalidConfig);
  EXPECT_THROW(make_experiment({{"experiment.trials", "0"}}), InvalidConfig);
  EXPECT_THROW(make_experiment({{"experiment.kind", "snr_sweep"}, {"sweep.values", ""}}), InvalidConfig);
}

TEST(MomentSeed, CloseToTruth) {
  ForwardConfig cfg;
  cfg.xi = {0.3, 0.12, 0.45, 0.55, 0.5};
  cfg.grid = {32, 32};
  cfg.sigma_psf = 0.03;
  cfg.C = 1024;
  cfg.seed = 2;
  const GeometricEllipse g = moment_seed(synthesize(cfg).image, 0.0, 0.03);
  EXPECT_NEAR(g.H, 0.45, 0.02);
  EXPECT_NEAR(g.K, 0.55, 0.02);
  EXPECT_NEAR(g.A, 0.3, 0.05);
  EXPECT_NEAR(g.B, 0.12, 0.05);
  EXPECT_NEAR(g.tau, 0.5, 0.1);
}

TEST(RunExperiment, RowsAndDeterminism) {
  ExperimentSpec spec = make_experiment(
      {{"experiment.kind", "snr_sweep"}, {"experiment.trials", "3"}, {"sweep.values", "64, 256"}});
  const std::string one = run_csv(spec, 1);
  const std::string four = run_csv(spec, 4);
  EXPECT_EQ(strip_runtime(one), strip_runtime(four));
  EXPECT_EQ(strip_runtime(one), strip_runtime(run_csv(spec, 1)));
  std::istringstream in(one);
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2 * 3 * 3);
  EXPECT_EQ(one.substr(0, one.find('\n')), kCsvHeader);
}

TEST(RunTrial, ReplaysInIsolation) {
  const ExperimentSpec spec = make_experiment(
      {{"experiment.kind", "snr_sweep"}, {"experiment.trials", "2"}, {"sweep.values", "128"}});
  const auto all = run_experiment(spec, 1);
  const TrialOutcome again = run_trial(spec.conditions[0], trial_seed(spec.master_seed, 0, 1), spec.settings);
  EXPECT_EQ(again.ml.nll, all[1].ml.nll);
  EXPECT_EQ(again.ml.xi.A, all[1].ml.xi.A);
}

TEST(RunTrial, FailuresAreFlaggedNotThrown) {
  // Expected total count about 0.007: an empty image, so no edges.
  Condition c{"dark", {}};
  c.forward.xi = {0.005, 0.002, 0.5, 0.5, 0.0};
  c.forward.grid = {16, 16};
  c.forward.C = 1;
  c.forward.b = 0;
  const TrialOutcome r = run_trial(c, 1, TrialSettings{});
  EXPECT_NE(r.def_points.status, "ok");
  EXPECT_TRUE(std::isnan(r.def_points.algebraic_error));
  EXPECT_EQ(r.def_gradient.status, "error");
}
