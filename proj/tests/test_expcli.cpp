#include <ergodiff/suites.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace ergodiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
  const auto dir = fs::temp_directory_path() / ("ergodiff_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& file)
{
  std::ifstream in(file);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args)
{
  const std::string cmd = std::string(ERGODIFF_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, SectionsCommentsAndLists)
{
  const auto cfg = Config::parse_string("# header\n[sim]\nT = 25, 50 # two runs\nseed=3\n\n[field]\nd = 2\n");
  EXPECT_EQ(cfg.get_list("sim.T", {}), (std::vector<double>{25.0, 50.0}));
  EXPECT_EQ(cfg.get_int("sim.seed", 0), 3);
  EXPECT_EQ(cfg.get_int("field.d", 0), 2);
  EXPECT_EQ(cfg.line_of("field.d"), 7);
  EXPECT_EQ(cfg.get_string("missing", "x"), "x");
}

TEST(Config, ErrorsCarryLineNumbers)
{
  try {
    Config::parse_string("[sim]\nT = 1\nT = 2\n");
    FAIL() << "duplicate accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(Config::parse_string("[sim\n"), ConfigError);
  EXPECT_THROW(Config::parse_string("novalue\n"), ConfigError);
  const auto cfg = Config::parse_string("x = abc\ny = maybe\n");
  EXPECT_THROW(cfg.get_double("x", 0), ConfigError);
  EXPECT_THROW(cfg.get_int("x", 0), ConfigError);
  EXPECT_THROW(cfg.get_bool("y", false), ConfigError);
  EXPECT_THROW(Config::load("/nonexistent.cfg"), ConfigError);
}

TEST(Experiment, MalformedDesignNamesTheField)
{
  try {
    experiment_from(Config::parse_string("[design]\na = 1\nh = 0.3\n"));
    FAIL() << "a/h = 3.33 accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("design.h"), std::string::npos) << e.what();
  }
  try {
    experiment_from(Config::parse_string("[sim]\nT = 50\n\n[sim2]\nfoo = 1\n"));
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 5);
  }
  EXPECT_THROW(experiment_from(Config::parse_string("[sim]\nn_reps = 1\n")), ConfigError);
  EXPECT_THROW(experiment_from(Config::parse_string("[design]\nbandwidth = silverman\n")), ConfigError);
}

TEST(Experiment, DefaultsAndOverrides)
{
  const auto e = experiment_from(Config::parse_string("[sim]\nT = 25, 50\nseed = 9\n[pclass]\nbeta = 2\n"));
  EXPECT_EQ(e.T_list.size(), 2u);
  EXPECT_EQ(e.seed, 9u);
  EXPECT_EQ(e.design(e.T()).K(), 6);
  EXPECT_EQ(e.design(e.T()).cells(), 16);
  EXPECT_EQ(e.field().family(), e.center_field().family());
}

TEST(Bandwidth, RuleValues)
{
  // T^{-1/6} at T = 100 and (eps^4/T)^{1/8} at eps = 0.1, T = 100.
  EXPECT_NEAR(bandwidth_rule(BandwidthRule::estimator, 100.0, 2.0, 2), std::pow(100.0, -1.0 / 6.0), 1e-15);
  EXPECT_NEAR(bandwidth_rule(BandwidthRule::estimator, 100.0, 2.0, 2), 0.4642, 1e-4);
  EXPECT_NEAR(bandwidth_rule(BandwidthRule::coupling, 100.0, 2.0, 2, 0.1), 0.1778, 1e-4);
  EXPECT_NEAR(bandwidth_rule(BandwidthRule::estimator, 100.0, 2.0, 2, 0.1, 0.0, 1.0), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(bandwidth_rule(BandwidthRule::explicit_h, 100.0, 2.0, 2, 0.1, 0.25), 0.25);
  EXPECT_DOUBLE_EQ(snap_bandwidth(0.5, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(snap_bandwidth(0.49, 1.0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(snap_bandwidth(5.0, 1.0), 1.0);
  EXPECT_THROW(bandwidth_rule(BandwidthRule::explicit_h, 100.0, 2.0, 2), std::invalid_argument);
  EXPECT_THROW(bandwidth_rule(BandwidthRule::estimator, 0.0, 2.0, 2), std::invalid_argument);
  EXPECT_THROW(parse_bandwidth_rule("plugin"), ConfigError);
}

TEST(Gates, ThresholdsAtTwoAndFourDimensions)
{
  EXPECT_TRUE(regularity_gates(1.01, 2).local_gate);
  EXPECT_TRUE(regularity_gates(1.01, 2).global_gate);
  EXPECT_FALSE(regularity_gates(0.99, 2).local_gate);
  EXPECT_FALSE(regularity_gates(0.99, 2).global_gate);
  EXPECT_NEAR(regularity_gates(2.0, 2).local_threshold, 1.0, 1e-15);
  EXPECT_NEAR(regularity_gates(2.0, 2).global_threshold, 1.0, 1e-15);
  for (int d : {4, 5, 6}) {
    const double t = d * d / 4.0 - 1.0;
    EXPECT_NEAR(regularity_gates(2.0, d).global_threshold, t, 1e-12);
    EXPECT_TRUE(regularity_gates(t + 0.01, d).global_gate) << d;
    EXPECT_FALSE(regularity_gates(t - 0.01, d).global_gate) << d;
  }
  // d = 4 at beta = 3 sits exactly on the window boundary.
  EXPECT_FALSE(regularity_gates(3.0, 4).global_gate);
  EXPECT_NEAR(regularity_gates(3.0, 4).window_lower, regularity_gates(3.0, 4).window_upper, 1e-15);
  const auto g = regularity_gates(2.0, 2);
  EXPECT_LT(g.alpha_lo, g.alpha_hi);
  EXPECT_THROW(regularity_gates(0.0, 2), std::invalid_argument);
}

TEST(Suites, DesignSuiteWritesCsvAndPasses)
{
  auto e = experiment_from(Config::parse_string("[design]\na = 1\nh = 0.5\n"));
  e.out_dir = scratch("design").string();
  const auto res = run_design_suite(e, DesignSuiteOptions{{0.2, 0.1}});
  EXPECT_FALSE(res.lines.empty());
  const std::string summary = slurp(fs::path(e.out_dir) / "summary_design.csv");
  EXPECT_EQ(summary.rfind("id,statistic,threshold,pass\n", 0), 0u);
  EXPECT_TRUE(fs::exists(fs::path(e.out_dir) / "design.csv"));
  for (const auto& l : res.lines) {
    if (l.id == "1" || l.id == "2" || l.id == "11") {
      EXPECT_TRUE(l.pass) << l.id << " " << l.detail;
    }
  }
}

TEST(Suites, VarianceSuiteIsReproducible)
{
  auto e = experiment_from(Config::parse_string("[sim]\nT = 2\nn_reps = 8\nseed = 4\n"));
  e.out_dir = scratch("variance_a").string();
  run_variance_suite(e);
  const std::string first = slurp(fs::path(e.out_dir) / "variance.csv");
  e.out_dir = scratch("variance_b").string();
  e.workers = 2;
  run_variance_suite(e);
  EXPECT_EQ(first, slurp(fs::path(e.out_dir) / "variance.csv"));
  EXPECT_EQ(first.substr(0, first.find('\n')), "side,volume,mass,mean,variance,variance_se,bound,ratio");
}

TEST(Suites, EvaluationPoints)
{
  const auto pts = evaluation_points(2, 3, 0.5);
  ASSERT_EQ(pts.size(), 9u);
  EXPECT_DOUBLE_EQ(pts.front()(0), -0.5);
  EXPECT_DOUBLE_EQ(pts.back()(1), 0.5);
  EXPECT_EQ(format_point(pts[4]), "0:0");
  EXPECT_THROW(run_suite(ExperimentConfig{}, "nope"), std::invalid_argument);
}

TEST(Cli, ExitCodes)
{
  const auto dir = scratch("cli");
  const auto bad = dir / "bad.cfg";
  std::ofstream(bad) << "[design]\na = 1\nh = 0.3\n";
  EXPECT_EQ(run_cli("design --config " + bad.string() + " --out " + (dir / "o").string()), 2);
  const auto unknown = dir / "unknown.cfg";
  std::ofstream(unknown) << "[design]\nwidth = 1\n";
  EXPECT_EQ(run_cli("design --config " + unknown.string()), 2);
  EXPECT_EQ(run_cli("design --config /nonexistent.cfg"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  const auto good = dir / "good.cfg";
  std::ofstream(good) << "[sim]\nT = 1\n";
  EXPECT_EQ(run_cli("simulate --config " + good.string() + " --path " + (dir / "p.bin").string()), 0);
  const auto path = read_path((dir / "p.bin").string());
  EXPECT_EQ(path.steps(), 1000u);
}
