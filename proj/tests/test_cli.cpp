#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "bsg/cli.hpp"

using namespace bsg;
namespace fs = std::filesystem;

namespace {

std::string scenario(const std::string& name) { return std::string(BSG_SCENARIO_DIR) + "/" + name; }

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bsg_cli_" + name);
  fs::remove_all(p);
  return p;
}

fs::path write_text(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("bsg_cli_" + name + ".json");
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

struct Outcome {
  int code;
  std::string err;
  fs::path out;
  Json summary() const { return parse_json_text(read_file((out / "summary.json").string()), "summary"); }
};

Outcome run_cli(const std::string& name, RunConfig cfg) {
  cfg.out = fresh_dir(name).string();
  std::ostringstream err;
  const int code = run(cfg, err);
  return {code, err.str(), cfg.out};
}

RunConfig config(const std::string& file, const std::string& command) {
  RunConfig c;
  c.scenario = file;
  c.command = command;
  return c;
}

Json parse(const std::string& text) { return Json::parse(text); }

}  // namespace

TEST(Scenario, NumberArrayConstantAndNodes) {
  auto sc = parse_scenario(parse(R"({"horizon": 2, "steps": 4, "dims": {"n": 2, "k": 1},
      "coefficients": {"A": [1, 2, 3, 4], "B1": {"constant": [1, 0]},
                       "Q1": {"nodes": [[0, [0, 0, 0, 0]], [2, [2, 0, 0, 4]]]}},
      "weights": {"G1": [1, 0, 0, 1]}, "terminal": {"a": [1, -1], "b": [0, 0.5]}})"));
  const LQGameSpec& s = sc.spec;
  EXPECT_EQ(s.grid.steps(), 4);
  EXPECT_DOUBLE_EQ(s.grid.horizon(), 2.0);
  EXPECT_EQ(s.A[3](1, 0), 3.0);
  EXPECT_EQ(s.B1[0](0, 0), 1.0);
  EXPECT_EQ(s.B1[0](1, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.Q1[2](0, 0), 1.0);  // t = 1, halfway
  EXPECT_DOUBLE_EQ(s.Q1[1](1, 1), 1.0);  // t = 0.5
  EXPECT_EQ(s.R1[0], Matrix::Identity(1, 1));
  EXPECT_TRUE(s.c_is_zero());
  EXPECT_EQ(s.xi.b(1, 0), 0.5);
  EXPECT_EQ(s.mode, ValidationMode::Strict);
}

TEST(Scenario, StepsOverrideAndDefaults) {
  const Json j = parse(R"({"coefficients": {}})");
  EXPECT_EQ(parse_scenario(j).spec.grid.steps(), 1000);
  EXPECT_EQ(parse_scenario(j, 64).spec.grid.steps(), 64);
  EXPECT_DOUBLE_EQ(parse_scenario(j).spec.grid.horizon(), 1.0);
}

TEST(Scenario, Rejections) {
  EXPECT_THROW(parse_scenario(parse(R"({"coefficients": {"Z": 1}})")), InputError);
  EXPECT_THROW(parse_scenario(parse(R"({"dims": {"n": 2}, "coefficients": {"A": [1, 2, 3]}})")), InputError);
  EXPECT_THROW(parse_scenario(parse(R"({"dims": {"d": 2}, "coefficients": {}})")), InputError);
  EXPECT_THROW(parse_scenario(parse(R"({"coefficients": {"A": {"nodes": [[0.5, 1], [1, 2]]}}})")), InputError);
  EXPECT_THROW(parse_scenario(parse(R"({"coefficients": {}, "mode": "lenient"})")), InputError);
  EXPECT_THROW(parse_scenario(parse(R"({"steps": 10})")), InputError);
  EXPECT_THROW(parse_json_text("{\"steps\": ", "x"), InputError);
  EXPECT_THROW(read_file("/nonexistent/bsg.json"), IoError);
}

TEST(Scenario, MarketBuildsThePermissiveFinanceGame) {
  auto sc = parse_scenario(parse(R"({"steps": 10, "market": {"r": 0.05, "mu": 0.1, "sigma": 0.2,
      "G1": -0.5, "xi": {"a": 1, "b": 0.2}}})"));
  ASSERT_TRUE(sc.market);
  EXPECT_EQ(sc.spec.mode, ValidationMode::Permissive);
  EXPECT_DOUBLE_EQ(sc.spec.A[0](0, 0), -0.05);
  EXPECT_DOUBLE_EQ(sc.spec.C[0](0, 0), -0.25);
  EXPECT_DOUBLE_EQ(sc.spec.G1(0, 0), -0.5);
  EXPECT_EQ(sc.market->R1[0](0, 0), 1.0);
  EXPECT_THROW(parse_scenario(parse(R"({"market": {"r": 0.05, "mu": 0.1, "sigma": -0.2}})")), InputError);
}

TEST(Scenario, OptionsAndLeaderControl) {
  auto sc = parse_scenario(parse(R"({"steps": 8, "coefficients": {},
      "options": {"hat_c1": "display", "gamma": "display", "symmetrize": false},
      "u2": {"const": 2, "lin": 0.5}})"));
  EXPECT_EQ(sc.riccati.hat_c1, HatC1Source::Display);
  EXPECT_EQ(sc.leader.gamma, GammaForm::Display);
  EXPECT_FALSE(sc.riccati.symmetrize);
  ASSERT_TRUE(sc.u2);
  EXPECT_EQ(sc.u2->value(3, 2.0)(0), 3.0);
}

TEST(Output, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) EXPECT_EQ(std::stod(fmt_double(v)), v);
  EXPECT_EQ(fmt_double(0.1), "0.10000000000000001");
}

TEST(Output, GitBlobHash) {
  // values printed by `git hash-object`
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Cli, ValidateAcceptsS2) {
  auto o = run_cli("validate_s2", config(scenario("s2.json"), "validate"));
  EXPECT_EQ(o.code, 0) << o.err;
  const Json s = o.summary();
  EXPECT_EQ(s["command"], "validate");
  EXPECT_EQ(s["scenario_hash"], git_blob_hash(read_file(scenario("s2.json"))));
  EXPECT_EQ(s["tolerance_profile"], "strict");
  EXPECT_EQ(s["steps"], 1000);
  EXPECT_EQ(s["paths"], 10000);
  EXPECT_EQ(s["seed"], 0);
  EXPECT_TRUE(s["validation"]["ok"].get<bool>());
}

TEST(Cli, ZeroR1FailsValidationNamingL2) {
  auto o = run_cli("r1_zero", config(scenario("r1_zero.json"), "validate"));
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("(L2)"), std::string::npos) << o.err;
  const Json s = o.summary();
  EXPECT_EQ(s["status"], "invalid");
  bool named = false;
  for (const auto& e : s["validation"]["entries"]) named = named || e["assumption"] == "(L2)";
  EXPECT_TRUE(named);
}

TEST(Cli, AllZeroEquilibriumHasZeroCosts) {
  auto c = config(scenario("zero.json"), "equilibrium");
  c.paths = 50;
  c.perturbation_paths = 50;
  auto o = run_cli("zero", c);
  ASSERT_EQ(o.code, 0) << o.err;
  const Json s = o.summary()["equilibrium"];
  EXPECT_EQ(s["J1"]["mean"].get<double>(), 0.0);
  EXPECT_EQ(s["J2"]["mean"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(o.out / "paths_leader.csv"));
}

TEST(Cli, S2VerifyMeetsTheOracle) {
  auto c = config(scenario("s2.json"), "verify");
  c.steps = 256;
  c.perturbation_paths = 2000;
  auto o = run_cli("verify_s2", c);
  ASSERT_EQ(o.code, 0) << o.err;
  const Json r = parse_json_text(read_file((o.out / "oracle.json").string()), "oracle");
  ASSERT_EQ(r["comparisons"].size(), 2u);
  for (const auto& cmp : r["comparisons"]) EXPECT_LE(cmp["rel_gap"].get<double>(), 1e-2);
  EXPECT_EQ(r["perturbation"].size(), 6u);
}

TEST(Cli, RiccatiWritesFourCurvesAndSolvability) {
  auto c = config(scenario("s2.json"), "riccati");
  c.steps = 200;
  auto o = run_cli("riccati_s2", c);
  ASSERT_EQ(o.code, 0) << o.err;
  for (const char* f : {"riccati_p1.csv", "riccati_p2.csv", "riccati_pi1.csv", "riccati_pi2.csv"}) {
    const std::string text = read_file((o.out / f).string());
    EXPECT_EQ(text.substr(0, 6), "t,m_11") << f;
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 202) << f;
  }
  const Json solv = parse_json_text(read_file((o.out / "solvability.json").string()), "solv");
  EXPECT_TRUE(solv["applicable"].get<bool>());
  EXPECT_LE(solv["Pi1"]["max_gap"].get<double>(), 1e-6);
  EXPECT_LE(solv["Pi2"]["max_gap"].get<double>(), 1e-6);
  EXPECT_TRUE(solv["Pi1"]["scan"]["satisfied"].get<bool>());
}

TEST(Cli, FollowerCsvColumns) {
  auto c = config(scenario("two_dim.json"), "follower");
  c.steps = 50;
  c.paths = 20;
  c.keep = 2;
  auto o = run_cli("follower_2d", c);
  ASSERT_EQ(o.code, 0) << o.err;
  std::ifstream in(o.out / "paths_follower.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "path,t,y_1,y_2,z_11,z_21,u1_1,x_1,x_2,varphi_1,varphi_2,u2_1");
  const std::string text = read_file((o.out / "paths_follower.csv").string());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 2 * 51);
}

TEST(Cli, FinanceSummary) {
  auto c = config(scenario("finance.json"), "finance");
  c.paths = 20000;
  auto o = run_cli("finance", c);
  ASSERT_EQ(o.code, 0) << o.err;
  const Json f = o.summary()["finance"];
  for (const char* k : {"initial_reserve", "Y0", "J1", "J2", "gaps"}) EXPECT_TRUE(f.contains(k)) << k;
  EXPECT_EQ(f["initial_reserve"].get<double>(), f["Y0"][1].get<double>());
  EXPECT_LE(f["gaps"]["display_matrices"].get<double>(), 1e-12);
  std::ifstream in(o.out / "paths_finance.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "path,t,y,pi,c1,c2");
}

TEST(Cli, FinanceNeedsAMarket) {
  auto c = config(scenario("s2.json"), "finance");
  c.steps = 10;
  EXPECT_EQ(run_cli("finance_s2", c).code, 1);
}

TEST(Cli, OutputsAreByteIdentical) {
  auto c = config(scenario("stochastic.json"), "equilibrium");
  c.steps = 32;
  c.paths = 500;
  c.perturbation_paths = 200;
  c.tolerance = "desk";
  auto a = run_cli("det_a", c), b = run_cli("det_b", c);
  for (const char* f : {"summary.json", "paths_leader.csv"})
    EXPECT_EQ(read_file((a.out / f).string()), read_file((b.out / f).string())) << f;
  c.seed = 1;
  auto d = run_cli("det_c", c);
  EXPECT_NE(read_file((a.out / "paths_leader.csv").string()), read_file((d.out / "paths_leader.csv").string()));
}

TEST(Cli, ExitCodes) {
  auto diverging = write_text("diverging", R"({"steps": 200, "mode": "permissive",
      "coefficients": {"B1": 1, "B2": 1}, "weights": {"G1": -2, "G2": 1}, "terminal": {"a": 1}})");
  auto o = run_cli("diverge", config(diverging.string(), "riccati"));
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("P2 at t="), std::string::npos) << o.err;

  EXPECT_EQ(run_cli("missing", config("/nonexistent/bsg.json", "validate")).code, 3);

  auto blocked = config(scenario("s2.json"), "validate");
  blocked.out = write_text("blocker", "{}").string();  // a file where the directory should go
  std::ostringstream err;
  EXPECT_EQ(run(blocked, err), 3);

  auto malformed = write_text("malformed", "{\"steps\": ");
  EXPECT_EQ(run_cli("malformed", config(malformed.string(), "validate")).code, 1);

  auto profile = config(scenario("s2.json"), "validate");
  profile.tolerance = "lax";
  EXPECT_EQ(run_cli("profile", profile).code, 1);

  // four steps leave Riccati residuals far above the strict limit
  auto coarse = config(scenario("s2.json"), "riccati");
  coarse.steps = 4;
  auto c = run_cli("coarse", coarse);
  EXPECT_EQ(c.code, 4);
  EXPECT_EQ(c.summary()["status"], "tolerance_exceeded");
}
