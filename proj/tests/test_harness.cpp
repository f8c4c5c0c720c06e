#include "seqmc/harness.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace seqmc;
namespace fs = std::filesystem;

namespace {

const std::string kSource = SEQMC_SOURCE_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("seqmc-harness-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string(SEQMC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

}  // namespace

TEST(Config, RoundTripPreservesContentAndHash) {
  const auto cfg = load_config(kSource + "/configs/moving-gauss.json");
  const auto again = config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(again), to_json(cfg));
  EXPECT_EQ(content_hash(again), content_hash(cfg));
  auto other = cfg;
  other.seed += 1;
  EXPECT_NE(content_hash(other), content_hash(cfg));
}

TEST(Config, EveryShippedConfigParses) {
  for (const auto& entry : fs::directory_iterator(kSource + "/configs"))
    EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
}

TEST(Config, UnknownFieldReportsLineAndField) {
  const std::string text = "{\n  \"name\": \"x\",\n  \"model\": \"h-zero\",\n  \"particels\": 10\n}\n";
  try {
    parse_config(text);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "particels");
    EXPECT_EQ(e.line(), 4);
    EXPECT_EQ(e.kind(), ErrorKind::Configuration);
  }
}

TEST(Config, BadModelParameterReportsItsLine) {
  const std::string text =
      "{\n  \"model\": \"moving-gauss\",\n  \"model_params\": {\n    \"delta\": -3\n  }\n}\n";
  try {
    parse_config(text);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_GT(e.line(), 0);
  }
}

TEST(TestFunctions, LinearAndIndicator) {
  ExperimentConfig cfg;
  cfg.model = "h-zero";
  cfg.model_params = {{"states", 5}};
  const auto m = build_model(cfg);
  const Vector lin = test_function({"lin", "linear", 0, {}}, m.family);
  EXPECT_EQ(lin[0], 0.0);
  EXPECT_EQ(lin[4], 1.0);
  EXPECT_NEAR(lin[2], 0.5, 1e-15);
  const Vector ind = test_function({"i", "indicator", 3, {}}, m.family);
  EXPECT_EQ(ind.sum(), 1.0);
  EXPECT_EQ(ind[3], 1.0);
  EXPECT_THROW(test_function({"i", "indicator", 9, {}}, m.family), Error);
}

TEST(LambdaFromConditions, ZeroOscillationNeedsNoIntensity) {
  ExperimentConfig cfg;
  cfg.model = "h-zero";
  cfg.model_params = {{"states", 6}};
  const auto m = build_model(cfg);
  const auto grid = constants_grid(m, 1.0, 3, 1);
  const auto lam = lambda_from_conditions(cfg, m.family, grid);
  for (double v : lam.intensity.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(lam.intensity.times.size(), 3u);
}

TEST(LambdaFromConditions, EntropyBranchWithoutWeightedConstants) {
  // A = B = C_Poi = 0 leaves (17/4) log(7) omega gamma as the requirement.
  ExperimentConfig cfg;
  cfg.p = 6.0;
  cfg.q = 12.0;
  cfg.t0 = 1.0;
  cfg.lambda.safety = 1.0;
  const auto fam = exponential_tilt(StateSpace::indexed(2), Vector::Constant(2, 0.5),
                                    (Vector(2) << 0.0, 1.0).finished(), 1.0);
  const double omega = osc_and_omega(fam, 1.0).omega;
  ConstantsReport c;
  c.gamma_upper = 2.0;
  c.gamma_lower = 1.0;
  std::vector<ConstantsReport> grid{c, c};
  grid[1].t = 1.0;
  const auto lam = lambda_from_conditions(cfg, fam, grid);
  const double expect = 17.0 / 4.0 * std::log(7.0) * omega * 2.0;
  for (double v : lam.intensity.values) EXPECT_NEAR(v, expect, 1e-12);
  EXPECT_TRUE(lam.certified);
}

TEST(Appendix, AllCertificationChainsHold) {
  AppendixSpec spec;
  spec.sigmas = {1.0, 2.0};
  spec.deltas = {6, 12};
  const auto rows = appendix_checks(spec);
  EXPECT_EQ(rows.size(), 24u);
  for (const auto& r : rows) EXPECT_TRUE(r.pass) << r.id;
}

TEST(Cli, ConfigErrorExitsWithTwo) {
  const auto dir = scratch("bad");
  std::ofstream(dir / "bad.json") << "{\n  \"name\": \"bad\",\n  \"partcles\": 3\n}\n";
  const auto res = cli("variance --config " + (dir / "bad.json").string() + " --out " + dir.string(), dir);
  EXPECT_EQ(res.code, 2);
  EXPECT_NE(res.output.find("line 3"), std::string::npos) << res.output;
  EXPECT_NE(res.output.find("partcles"), std::string::npos) << res.output;
}

TEST(Cli, NoPotentialRunHasNoSelections) {
  const auto dir = scratch("hzero");
  const auto res = cli("simulate --assert --config " + kSource + "/configs/h-zero.json --out " + dir.string(), dir);
  ASSERT_EQ(res.code, 0) << res.output;
  const auto bundle = nlohmann::json::parse(slurp(dir / "bundle.json"));
  EXPECT_EQ(bundle["command"], "simulate");
  std::ifstream traj(dir / "trajectory.jsonl");
  std::string line, last;
  while (std::getline(traj, line)) last = line;
  const auto rec = nlohmann::json::parse(last);
  EXPECT_EQ(rec["events"]["sel"], 0);
  EXPECT_EQ(rec["logW"], 0.0);
}

TEST(Cli, BundleIsIndependentOfWorkerCount) {
  const auto a = scratch("w1"), b = scratch("w3");
  const std::string cfg = " --config " + kSource + "/configs/h-zero.json --out ";
  ASSERT_EQ(cli("variance --workers 1" + cfg + a.string(), a).code, 0);
  ASSERT_EQ(cli("variance --workers 3" + cfg + b.string(), b).code, 0);
  EXPECT_EQ(slurp(a / "bundle.json"), slurp(b / "bundle.json"));
  EXPECT_EQ(slurp(a / "variance.csv"), slurp(b / "variance.csv"));
}
