#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mlellipse/io.hpp"

namespace fs = std::filesystem;
namespace io = mlellipse::io;

namespace {

const std::string kCli = MLELLIPSE_CLI;
const std::string kConfigs = MLELLIPSE_CONFIGS;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mlellipse_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string simulate(const std::string& name = "img.pgm") {
    EXPECT_EQ(run("simulate " + kConfigs + "/simulate_snr12.cfg -o " + path(name)), 0);
    return path(name);
  }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateWritesPgmAndMetadata) {
  const std::string img = simulate();
  const io::KeyValues meta = io::read_key_values(img + ".meta");
  EXPECT_NEAR(io::get_double(meta, "image.snr"), 12.9, 0.05);
  EXPECT_EQ(io::get_int(meta, "image.grey_levels"), 128);
  const io::PgmImage pgm = io::read_pgm(img);
  EXPECT_EQ(pgm.counts.rows(), 32);
  EXPECT_EQ(pgm.comments.at("image.C"), "256");
}

TEST_F(Cli, SimulateIsByteDeterministic) {
  const std::string a = simulate("a.pgm");
  const std::string b = simulate("b.pgm");
  EXPECT_EQ(slurp(a), slurp(b));
  ASSERT_EQ(run("simulate " + kConfigs + "/simulate_snr12.cfg --seed 8 -o " + path("c.pgm")), 0);
  EXPECT_NE(slurp(a), slurp(path("c.pgm")));
}

TEST_F(Cli, SimulateUnquantisedHasNoGreyLevels) {
  std::ofstream(path("b0.cfg")) << "[image]\nb = 0\nC = 64\n";
  ASSERT_EQ(run("simulate " + path("b0.cfg") + " -o " + path("img.pgm")), 0);
  const io::KeyValues meta = io::read_key_values(path("img.pgm") + ".meta");
  EXPECT_EQ(meta.count("image.grey_levels"), 0u);
  EXPECT_EQ(meta.at("image.b"), "0");
}

TEST_F(Cli, SimulateConfigErrors) {
  std::ofstream(path("bad.cfg")) << "[image]\nC = lots\n";
  EXPECT_EQ(run("simulate " + path("bad.cfg") + " -o " + path("x.pgm")), 2);
  std::ofstream(path("bad2.cfg")) << "[image]\nC = 100\nb = 2\n";
  EXPECT_EQ(run("simulate " + path("bad2.cfg") + " -o " + path("x.pgm")), 2);
  EXPECT_EQ(run("simulate " + path("missing.cfg") + " -o " + path("x.pgm")), 4);
  EXPECT_EQ(run("simulate"), 2);
}

TEST_F(Cli, FitFromTruthConverges) {
  const std::string img = simulate();
  ASSERT_EQ(run("fit " + img + " --seed-from truth -o " + path("fit.txt") + " --region " +
                path("region.pgm") + " --resolution 64"),
            0);
  const io::KeyValues r = io::read_key_values(path("fit.txt"));
  EXPECT_EQ(r.at("fit.converged"), "true");
  EXPECT_LT(io::get_double(r, "fit.centre_error"), 0.01);
  EXPECT_EQ(io::get_list(r, "covariance.theta").size(), 36u);
  const io::PgmImage mask = io::read_pgm(path("region.pgm"));
  EXPECT_EQ(mask.counts.rows(), 64);
  EXPECT_EQ(mask.maxval, 255);
}

TEST_F(Cli, FitDefaultSeedAndRegionSubcommand) {
  const std::string img = simulate();
  ASSERT_EQ(run("fit " + img + " -o " + path("fit.txt")), 0);
  ASSERT_EQ(run("region " + path("fit.txt") + " --mask " + path("mask.pgm") + " --zbar " +
                path("zbar.csv") + " --resolution 32"),
            0);
  const io::PgmImage mask = io::read_pgm(path("mask.pgm"));
  EXPECT_GT(mask.counts.sum(), 0);
  std::ifstream z(path("zbar.csv"));
  int lines = 0;
  for (std::string l; std::getline(z, l);) ++lines;
  EXPECT_EQ(lines, 32);
}

TEST_F(Cli, FitBaselineRecord) {
  const std::string img = simulate();
  ASSERT_EQ(run("fit " + img + " --baseline def-points -o " + path("b.txt")), 0);
  const io::KeyValues r = io::read_key_values(path("b.txt"));
  EXPECT_EQ(r.at("baseline.method"), "def-points");
  EXPECT_GE(io::get_double(r, "baseline.algebraic_error"), 0.0);
  ASSERT_EQ(run("baseline " + img + " --method def-gradient --edges " + path("edges.csv") + " -o " +
                path("g.txt")),
            0);
  EXPECT_EQ(slurp(path("edges.csv")).substr(0, 11), "x,y,weight\n");
}

TEST_F(Cli, FitMissingConversionFactor) {
  const std::string img = simulate();
  std::ofstream(path("meta.txt")) << "image.b = 1\n";
  // Counts only, no header comments.
  io::write_pgm(path("bare.pgm"), io::read_pgm(img).counts);
  const std::string cmd = kCli + " fit " + path("bare.pgm") + " --meta " + path("meta.txt") + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  std::string out;
  char buf[256];
  while (fgets(buf, sizeof buf, p)) out += buf;
  const int status = pclose(p);
  EXPECT_EQ(WEXITSTATUS(status), 2);
  EXPECT_NE(out.find("image.C"), std::string::npos);
}

TEST_F(Cli, FitNonConvergenceExitCode) {
  const std::string img = simulate();
  EXPECT_EQ(run("fit " + img + " --max-iterations 1 -o " + path("f.txt")), 3);
  EXPECT_EQ(run("fit " + img + " --max-iterations 1 --allow-nonconverged -o " + path("f.txt")), 0);
}

TEST_F(Cli, FitIoAndUsageErrors) {
  EXPECT_EQ(run("fit " + path("nothing.pgm")), 4);
  const std::string img = simulate();
  EXPECT_EQ(run("fit " + img + " --seed-from user"), 2);
  EXPECT_EQ(run("fit " + img + " --seed-from psychic"), 2);
}

TEST_F(Cli, ExperimentDeterministicAcrossJobs) {
  std::ofstream(path("exp.cfg")) << "[experiment]\nkind = snr_sweep\ntrials = 2\nseed = 5\n"
                                    "[sweep]\nvalues = 32, 256\n";
  ASSERT_EQ(run("experiment " + path("exp.cfg") + " -o " + path("a.csv") + " -j 1"), 0);
  ASSERT_EQ(run("experiment " + path("exp.cfg") + " -o " + path("b.csv") + " -j 3"), 0);
  auto strip = [](const std::string& s) {
    std::istringstream in(s);
    std::string out;
    for (std::string l; std::getline(in, l);) out += l.substr(0, l.rfind(',')) + '\n';
    return out;
  };
  const std::string a = slurp(path("a.csv"));
  EXPECT_EQ(strip(a), strip(slurp(path("b.csv"))));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 2 * 2 * 3);
  const io::KeyValues meta = io::read_key_values(path("a.csv") + ".meta");
  EXPECT_EQ(meta.at("condition1.label"), "C=256");
}
