#include <gtest/gtest.h>

#include "test_util.hpp"
#include "voltctl/powerflow.hpp"
#include "voltctl/sensitivity.hpp"

using namespace voltctl;
using voltctl::test::kTwoBus;
using voltctl::test::load_case;

namespace {

SensitivityMatrix sensitivity_of(const NetworkCase& c) {
  return voltage_sensitivity(build_admittance(c), partition_buses(c));
}

std::vector<int> ids(const NetworkCase& c, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  for (auto i : idx) out.push_back(c.buses[i].id);
  return out;
}

}  // namespace

TEST(Partition, Ieee14) {
  const auto c = load_case("case14");
  const auto p = partition_buses(c);
  EXPECT_EQ(ids(c, p.pq), (std::vector<int>{4, 5, 7, 9, 10, 11, 12, 13, 14}));
  EXPECT_EQ(p.controlled, p.pq);
  EXPECT_EQ(ids(c, p.pv), (std::vector<int>{2, 3, 6, 8}));
  EXPECT_EQ(c.buses[p.slack].id, 1);
}

TEST(Partition, Ieee30) {
  const auto p = partition_buses(load_case("case30"));
  EXPECT_EQ(p.load_count(), 24u);
  EXPECT_EQ(p.controller_count(), 24u);
}

TEST(Partition, SubsetOfControllers) {
  auto c = load_case("case14");
  c.buses[c.index_of(7)].has_controller = false;
  const auto p = partition_buses(c);
  EXPECT_EQ(p.load_count(), 9u);
  EXPECT_EQ(p.controller_count(), 8u);
  EXPECT_EQ(p.controlled_pos, (std::vector<std::size_t>{0, 1, 3, 4, 5, 6, 7, 8}));
  const auto s = voltage_sensitivity(build_admittance(c), p);
  const auto xc = s.controlled_columns();
  EXPECT_EQ(xc.cols(), 8);
  EXPECT_EQ(xc.col(2), s.x.col(3));
}

TEST(Sensitivity, TwoBus) {
  const auto c = parse_case(kTwoBus);
  const auto p = partition_buses(c);
  EXPECT_EQ(p.load_count(), 1u);
  const auto s = voltage_sensitivity(build_admittance(c), p);
  ASSERT_EQ(s.x.rows(), 1);
  EXPECT_NEAR(s.x(0, 0), 0.1, 1e-12);
}

TEST(Sensitivity, SymmetricPositiveDefinite) {
  for (const char* name : {"case14", "case30"}) {
    const auto s = sensitivity_of(load_case(name));
    EXPECT_LT((s.x - s.x.transpose()).cwiseAbs().maxCoeff(), 1e-9) << name;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s.x + s.x.transpose()));
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0) << name;
  }
}

TEST(Sensitivity, EntriesNonnegative14) {
  const auto s = sensitivity_of(load_case("case14"));
  EXPECT_GT(s.x.diagonal().minCoeff(), 0.0);
  EXPECT_GE(s.x.minCoeff(), 0.0);
}

// With every r = 0, G vanishes (no tapped-branch conductance either), so the
// reduction collapses to X = -B_LL^-1.
TEST(Sensitivity, LosslessIsInverseSusceptance) {
  auto c = load_case("case14");
  for (auto& br : c.branches) br.r = 0.0;
  for (auto& b : c.buses) b.g_shunt = 0.0;
  const auto adm = build_admittance(c);
  const auto p = partition_buses(c);
  EXPECT_EQ(adm.g.cwiseAbs().maxCoeff(), 0.0);
  const auto s = voltage_sensitivity(adm, p);
  Eigen::MatrixXd b_ll(9, 9);
  for (std::size_t r = 0; r < 9; ++r) {
    for (std::size_t k = 0; k < 9; ++k) b_ll(r, k) = adm.b(p.pq[r], p.pq[k]);
  }
  const Eigen::MatrixXd expect = -b_ll.inverse();
  EXPECT_LT((s.x - expect).cwiseAbs().maxCoeff(), 1e-12);
}

// Columns of X against finite differences of the nonlinear power flow.
TEST(Sensitivity, FiniteDifferenceWithinTenPercent) {
  for (const char* name : {"case14", "case30"}) {
    const auto c = load_case(name);
    const auto s = sensitivity_of(c);
    const auto& p = s.partition;
    const auto inj = base_injections(c);
    PowerFlowOptions opt;
    opt.tol = 1e-12;
    const auto base = solve_power_flow(c, inj, opt);
    constexpr double dq = 0.01;
    for (std::size_t k = 0; k < p.controlled.size(); ++k) {
      auto bumped = inj;
      bumped.q_injection(static_cast<Eigen::Index>(p.controlled_pos[k])) += dq;
      const auto sol = solve_power_flow(c, bumped, opt, &base);
      Eigen::VectorXd fd(static_cast<Eigen::Index>(p.pq.size()));
      for (std::size_t j = 0; j < p.pq.size(); ++j) fd(j) = (sol.v(p.pq[j]) - base.v(p.pq[j])) / dq;
      const Eigen::VectorXd col = s.x.col(static_cast<Eigen::Index>(p.controlled_pos[k]));
      const double rel = (col - fd).lpNorm<Eigen::Infinity>() / fd.lpNorm<Eigen::Infinity>();
      EXPECT_LT(rel, 0.10) << name << " column " << c.buses[p.controlled[k]].id;
    }
  }
}

TEST(PredictVoltage, Examples) {
  auto s = voltage_sensitivity(build_admittance(parse_case(kTwoBus)), partition_buses(parse_case(kTwoBus)));
  s.base_v(0) = 0.92;
  EXPECT_NEAR(predict_voltage(s, Eigen::VectorXd::Constant(1, 0.3))(0), 0.95, 1e-12);
  EXPECT_NEAR(predict_voltage(s, s.base_q)(0), 0.92, 1e-15);
  EXPECT_THROW(predict_voltage(s, Eigen::VectorXd::Zero(2)), DimensionError);
}

TEST(PredictVoltage, Superposition) {
  auto s = sensitivity_of(load_case("case14"));
  s.base_v = Eigen::VectorXd::LinSpaced(9, 0.95, 1.02);
  s.base_q = Eigen::VectorXd::Constant(9, 0.01);
  const Eigen::VectorXd q1 = Eigen::VectorXd::LinSpaced(9, -0.1, 0.1);
  const Eigen::VectorXd q2 = Eigen::VectorXd::LinSpaced(9, 0.2, -0.05);
  const Eigen::VectorXd lhs = predict_voltage(s, q1 + q2 - s.base_q);
  const Eigen::VectorXd rhs = predict_voltage(s, q1) + predict_voltage(s, q2) - s.base_v;
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sensitivity, TripChangesRowsOfEndpoints) {
  const auto c = load_case("case14");
  const auto before = sensitivity_of(c);
  const auto after = sensitivity_of(trip_branch(c, 4, 5));
  // buses 4 and 5 sit at positions 0 and 1 of the load-bus list
  for (Eigen::Index r : {0, 1}) EXPECT_GT((after.x.row(r) - before.x.row(r)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Sensitivity, NeighborMaskKeepsDiagonal) {
  const auto c = load_case("case14");
  const auto s = sensitivity_of(c);
  const auto mask = neighbor_mask(c, s.partition);
  const auto t = truncate_to_neighbors(s, mask);
  EXPECT_EQ(t.x.diagonal(), s.x.diagonal());
  // 4-9 is a branch, 4-14 is not
  EXPECT_NE(t.x(0, 3), 0.0);
  EXPECT_EQ(t.x(0, 8), 0.0);
}
