#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "voltctl/config.hpp"
#include "voltctl/report.hpp"

using namespace voltctl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("voltctl_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string read(const fs::path& p) { return voltctl::test::slurp(p.string()); }

}  // namespace

TEST(Config, Defaults) {
  const auto cfg = parse_config("case = data/case14.m\n");
  EXPECT_EQ(cfg.case_path, "data/case14.m");
  EXPECT_EQ(cfg.v_lo, 0.95);
  EXPECT_EQ(cfg.v_hi, 1.05);
  EXPECT_EQ(cfg.q_lo, -0.2);
  EXPECT_EQ(cfg.q_hi, 0.2);
  EXPECT_EQ(cfg.scenario_kind, ScenarioKind::Static);
  EXPECT_EQ(cfg.plant_mode, PlantMode::NonlinearPF);
  EXPECT_EQ(cfg.gains.k_q, 1.0);
  EXPECT_EQ(cfg.window, 3600.0);
  EXPECT_FALSE(cfg.trip);
}

TEST(Config, ReactiveLimitInPerUnit) {
  const auto cfg = parse_config("case = x.m\nq_hi = 0.1\n");
  EXPECT_EQ(cfg.q_hi, 0.1);
  const auto c = voltctl::test::load_case("case14");
  const auto lim = cfg.limits(c);
  EXPECT_EQ(lim.q_hi.size(), 9);
  // 10 MVar on the case base
  EXPECT_DOUBLE_EQ(lim.q_hi(0) * c.base_mva, 10.0);
}

TEST(Config, MisspelledKeyNamed) {
  try {
    parse_config("case = x.m\nvmaks = 1.05\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("vmaks"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  }
}

TEST(Config, AliasesAndFullScenario) {
  const auto cfg = parse_config(R"(# heavy fault run
case = ../data/case14.m
scenario = fault
plant = linear
vmin = 0.94
vmax = 1.06   # trailing comment
qmin = -0.3
qmax = 0.3
k_q = 2
load_scale = 3.1
trip = 4:5@20000
out = results/fault
reset_multipliers = true
)");
  EXPECT_EQ(cfg.scenario_kind, ScenarioKind::Fault);
  EXPECT_EQ(cfg.plant_mode, PlantMode::Linear);
  EXPECT_EQ(cfg.v_lo, 0.94);
  EXPECT_EQ(cfg.v_hi, 1.06);
  EXPECT_EQ(cfg.q_lo, -0.3);
  EXPECT_EQ(cfg.gains.k_q, 2.0);
  EXPECT_EQ(cfg.load_scale, 3.1);
  ASSERT_TRUE(cfg.trip);
  EXPECT_EQ(cfg.trip->from_bus, 4);
  EXPECT_EQ(cfg.trip->to_bus, 5);
  EXPECT_EQ(cfg.trip->time, 20000.0);
  EXPECT_EQ(cfg.output_dir, "results/fault");
  EXPECT_TRUE(cfg.reset_multipliers);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("case = x.m\nv_lo = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("case = x.m\nv_lo = 1.1\n"), ConfigError);
  EXPECT_THROW(parse_config("case = x.m\nq_lo = 0.5\n"), ConfigError);
  EXPECT_THROW(parse_config("case = x.m\nvmin = 0.9\nv_lo = 0.9\n"), ConfigError);
  EXPECT_THROW(parse_config("case = x.m\nscenario = weekly\n"), ConfigError);
  EXPECT_THROW(parse_config("case = x.m\nscenario = fault\n"), ConfigError);
  EXPECT_THROW(parse_config("case = x.m\ntrip = 4-5@10\n"), ConfigError);
  EXPECT_THROW(parse_config("case = x.m\nprofile = 1 2 3\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_THROW(parse_config("k_lam = 0\n"), ConfigError);
}

TEST(Config, InlineProfile) {
  std::string line = "profile =";
  for (int h = 0; h < 24; ++h) line += " " + std::to_string(0.5 + 0.01 * h) + (h % 2 ? "," : "");
  const auto cfg = parse_config(line + "\n");
  ASSERT_EQ(cfg.profile.size(), 24u);
  EXPECT_DOUBLE_EQ(cfg.profile[23], 0.73);
}

TEST(Config, BundledProfilesParse) {
  for (const char* name : {"profile_14bus.txt", "profile_30bus.txt"}) {
    const auto p = parse_profile(read(fs::path(VOLTCTL_DATA_DIR) / ".." / "configs" / name));
    EXPECT_EQ(p.size(), 24u) << name;
  }
}

class ReportTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto c = scale_loads(voltctl::test::load_case("case14"), 3.1);
    lim_ = default_limits(c);
    result_ = run_static(c, lim_, Gains{});
  }
  static SimulationResult result_;
  static Limits lim_;
};
SimulationResult ReportTest::result_;
Limits ReportTest::lim_;

TEST_F(ReportTest, FilesWritten) {
  const auto dir = scratch_dir("files");
  emit_report(result_, lim_, dir);
  for (const char* f : {"trajectory.csv", "voltages_before_after.txt", "summary.txt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir / "hourly.csv"));
}

TEST_F(ReportTest, CsvRoundTrip) {
  const auto dir = scratch_dir("csv");
  emit_report(result_, lim_, dir);
  std::ifstream f(dir / "trajectory.csv");
  const auto t = read_csv(f);
  ASSERT_EQ(t.columns.size(), 1u + 9 + 9 + 4 + 1);
  EXPECT_EQ(t.columns[1], "q_4");
  EXPECT_EQ(t.columns[10], "v_4");
  EXPECT_EQ(t.columns.back(), "cost");
  const auto& s = result_.trajectory.samples;
  ASSERT_EQ(t.rows.size(), s.size());
  const double tol_t = 0.5e-6, tol = 0.5e-9 + 1e-15;
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_NEAR(t.rows[k][0], s[k].t, tol_t * (1 + std::abs(s[k].t) * 1e-10));
    for (Eigen::Index i = 0; i < 9; ++i) {
      EXPECT_NEAR(t.rows[k][1 + i], s[k].state.q(i), tol);
      EXPECT_NEAR(t.rows[k][10 + i], s[k].v(i), tol);
    }
    EXPECT_NEAR(t.rows[k][20], s[k].state.lam_lo.norm(), tol * 10);
    EXPECT_NEAR(t.rows[k].back(), s[k].cost, tol);
  }
}

TEST_F(ReportTest, SummaryCostMatchesLastRow) {
  const auto dir = scratch_dir("summary");
  emit_report(result_, lim_, dir);
  std::ifstream f(dir / "trajectory.csv");
  const auto t = read_csv(f);
  double sum_sq = 0.0;
  for (int i = 1; i <= 9; ++i) sum_sq += t.rows.back()[i] * t.rows.back()[i];
  const std::string summary = read(dir / "summary.txt");
  const auto pos = summary.find("cost: ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_NEAR(std::stod(summary.substr(pos + 6)), sum_sq, 1e-8);
  EXPECT_NE(summary.find("converged: yes"), std::string::npos);
  EXPECT_NE(summary.find("binding_v_lo: 4 14"), std::string::npos) << summary;
}

TEST_F(ReportTest, VoltageTableLayout) {
  const std::string table = voltage_table(result_);
  std::istringstream in(table);
  std::string header, before, after;
  std::getline(in, header);
  std::getline(in, before);
  std::getline(in, after);
  EXPECT_EQ(header.rfind("bus", 0), 0u);
  EXPECT_EQ(before.rfind("before", 0), 0u);
  EXPECT_EQ(after.rfind("after", 0), 0u);
  // four decimals, fixed rows for the slack and bus 14
  EXPECT_NE(before.find("1.0600"), std::string::npos);
  EXPECT_EQ(after.substr(after.size() - 6), "0.9500");
}

TEST_F(ReportTest, ByteIdenticalAcrossRuns) {
  const auto c = scale_loads(voltctl::test::load_case("case14"), 3.1);
  const auto again = run_static(c, lim_, Gains{});
  EXPECT_EQ(trajectory_csv(again), trajectory_csv(result_));
  EXPECT_EQ(summary_text(again, lim_), summary_text(result_, lim_));
}

TEST(Report, FaultSummaryHasRatio) {
  const auto c = parse_case(voltctl::test::toy_case());
  FaultReport rep;
  rep.result = run_static(c, default_limits(c, 0.95, 1.05, -0.5, 0.5), Gains{});
  rep.pre_cost = 0.05;
  rep.post_cost = 0.0635;
  const std::string s = summary_text(rep.result, default_limits(c, 0.95, 1.05, -0.5, 0.5), {&rep, nullptr});
  EXPECT_NE(s.find("pre_trip_cost: 0.050000000"), std::string::npos) << s;
  EXPECT_NE(s.find("post_trip_cost: 0.063500000"), std::string::npos);
  EXPECT_NE(s.find("cost_ratio: 1.270000"), std::string::npos);
}

TEST(Report, UnwritableDirectory) {
  const auto c = parse_case(voltctl::test::toy_case());
  const auto lim = default_limits(c, 0.95, 1.05, -0.5, 0.5);
  const auto r = run_static(c, lim, Gains{});
  const auto file = scratch_dir("blocker");
  std::ofstream(file) << "x";
  EXPECT_THROW(emit_report(r, lim, file / "sub"), ReportError);
}
