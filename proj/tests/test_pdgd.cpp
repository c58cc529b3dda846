#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "voltctl/pdgd.hpp"

using namespace voltctl;

namespace {

// 2-bus toy: X = [0.1], base_v = 0.92.
struct Toy {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1, 0.1);
  Limits lim = Limits::uniform(1, 1, 0.95, 1.05, -0.5, 0.5);
  Eigen::VectorXd voltage(const Eigen::VectorXd& q) const { return Eigen::VectorXd::Constant(1, 0.92) + x * q; }
};

ControllerState toy_kkt() {
  ControllerState s = ControllerState::zeros(1, 1);
  s.q(0) = 0.3;
  s.lam_lo(0) = 6.0;
  return s;
}

}  // namespace

TEST(Objective, Examples) {
  EXPECT_EQ(objective(Eigen::VectorXd::Zero(3)), 0.0);
  EXPECT_EQ(objective_gradient(Eigen::VectorXd::Zero(3)), Eigen::VectorXd::Zero(3));
  Eigen::VectorXd q(2);
  q << 0.1, -0.2;
  EXPECT_NEAR(objective(q), 0.05, 1e-15);
  EXPECT_NEAR(objective_gradient(q)(0), 0.2, 1e-15);
  EXPECT_NEAR(objective_gradient(q)(1), -0.4, 1e-15);
}

TEST(Objective, GradientByFiniteDifference) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd q(5);
    for (auto& x : q) x = u(rng);
    const Eigen::VectorXd g = objective_gradient(q);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      constexpr double h = 1e-6;
      Eigen::VectorXd qp = q, qm = q;
      qp(i) += h;
      qm(i) -= h;
      EXPECT_NEAR((objective(qp) - objective(qm)) / (2 * h), g(i), 1e-8);
    }
  }
}

TEST(Lagrangian, Examples) {
  const Limits lim = Limits::uniform(1, 1, 0.95, 1.05, -0.5, 0.5);
  ControllerState s = ControllerState::zeros(1, 1);
  s.q(0) = 0.2;
  EXPECT_DOUBLE_EQ(lagrangian(s, Eigen::VectorXd::Constant(1, 0.99), lim), 0.04);

  s = ControllerState::zeros(1, 1);
  s.lam_lo(0) = 123.0;
  EXPECT_DOUBLE_EQ(lagrangian(s, Eigen::VectorXd::Constant(1, 0.95), lim), 0.0);

  s.lam_lo(0) = 2.0;
  EXPECT_NEAR(lagrangian(s, Eigen::VectorXd::Constant(1, 0.92), lim), 0.06, 1e-15);
}

TEST(Projection, Cases) {
  EXPECT_EQ(positive_projection(-3.0, 0.0), 0.0);
  EXPECT_EQ(positive_projection(-3.0, 0.5), -3.0);
  EXPECT_EQ(positive_projection(3.0, 0.0), 3.0);
  EXPECT_THROW(positive_projection(1.0, -1e-3), std::domain_error);
}

TEST(Dynamics, ZeroStateFeasibleIsEquilibrium) {
  const Limits lim = Limits::uniform(3, 3, 0.95, 1.05, -0.2, 0.2);
  const auto s = ControllerState::zeros(3, 3);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Identity(3, 3) * 0.05;
  const auto d = dynamics_rhs(s, Eigen::VectorXd::Constant(3, 1.0), x, lim, Gains{});
  EXPECT_EQ(d.pack().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Dynamics, ToyKktIsEquilibrium) {
  const Toy toy;
  const auto s = toy_kkt();
  const auto v = toy.voltage(s.q);
  EXPECT_NEAR(v(0), 0.95, 1e-15);
  const auto d = dynamics_rhs(s, v, toy.x, toy.lim, Gains{});
  EXPECT_LT(d.pack().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(equilibrium_residual(s, v, toy.x, toy.lim, Gains{}), 1e-10);
}

TEST(Dynamics, ViolationDrivesMultiplier) {
  const Toy toy;
  const auto s = ControllerState::zeros(1, 1);
  const auto v = toy.voltage(s.q);
  const Gains g{1.0, 2.0, 1.0};
  const auto d = dynamics_rhs(s, v, toy.x, toy.lim, g);
  EXPECT_NEAR(d.lam_lo(0), 2.0 * 0.03, 1e-15);
  EXPECT_EQ(d.lam_hi(0), 0.0);
  EXPECT_GE(equilibrium_residual(s, v, toy.x, toy.lim, g), 2.0 * 0.03 - 1e-15);
}

TEST(Dynamics, InputChecks) {
  const Toy toy;
  auto s = ControllerState::zeros(1, 1);
  EXPECT_THROW(dynamics_rhs(s, Eigen::VectorXd::Zero(2), toy.x, toy.lim, Gains{}), DimensionError);
  s.q(0) = std::nan("");
  EXPECT_THROW(dynamics_rhs(s, Eigen::VectorXd::Ones(1), toy.x, toy.lim, Gains{}), std::invalid_argument);
}

// Bracketed term of the q dynamics equals dL/dq with v(q) = base_v + X q.
TEST(Dynamics, GradientMatchesLagrangianFiniteDifference) {
  const auto c = voltctl::test::load_case("case14");
  const auto part = partition_buses(c);
  const auto sens = voltage_sensitivity(build_admittance(c), part);
  const Eigen::MatrixXd xc = sens.controlled_columns();
  const Limits lim = Limits::uniform(9, 9, 0.95, 1.05, -0.2, 0.2);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> uq(-0.19, 0.19), um(0.0, 5.0), uv(0.9, 1.1);
  for (int trial = 0; trial < 100; ++trial) {
    ControllerState s = ControllerState::zeros(9, 9);
    for (auto* v : {&s.lam_hi, &s.lam_lo, &s.mu_hi, &s.mu_lo}) {
      for (auto& x : *v) x = um(rng);
    }
    for (auto& x : s.q) x = uq(rng);
    Eigen::VectorXd base_v(9);
    for (auto& x : base_v) x = uv(rng);
    auto l_of = [&](const Eigen::VectorXd& q) {
      ControllerState t = s;
      t.q = q;
      return lagrangian(t, base_v + xc * q, lim);
    };
    const Gains unit{};
    const Eigen::VectorXd bracket = -dynamics_rhs(s, base_v + xc * s.q, xc, lim, unit).q;
    for (Eigen::Index i = 0; i < 9; ++i) {
      constexpr double h = 1e-5;
      Eigen::VectorXd qp = s.q, qm = s.q;
      qp(i) += h;
      qm(i) -= h;
      EXPECT_NEAR((l_of(qp) - l_of(qm)) / (2 * h), bracket(i), 1e-8) << "trial " << trial << " i " << i;
    }
  }
}

TEST(Dynamics, JacobianMatchesFiniteDifference) {
  const Toy toy;
  const Eigen::MatrixXd x = (Eigen::MatrixXd(2, 2) << 0.1, 0.03, 0.03, 0.08).finished();
  const Limits lim = Limits::uniform(2, 2, 0.95, 1.05, -0.5, 0.5);
  ControllerState s = ControllerState::zeros(2, 2);
  s.q << 0.1, -0.2;
  s.lam_lo << 1.0, 0.0;
  s.mu_hi << 0.5, 0.2;
  const Eigen::VectorXd base = (Eigen::VectorXd(2) << 0.92, 1.07).finished();
  const Gains g{1.5, 2.0, 0.7};
  auto f = [&](const Eigen::VectorXd& y) {
    const auto st = ControllerState::unpack(y, 2, 2);
    return dynamics_rhs(st, base + x * st.q, x, lim, g).pack();
  };
  const Eigen::VectorXd y = s.pack();
  const Eigen::MatrixXd j = dynamics_jacobian(s, base + x * s.q, x, lim, g);
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    constexpr double h = 1e-7;
    Eigen::VectorXd yp = y, ym = y;
    yp(k) += h;
    ym(k) -= h;
    if (ym(k) < 0.0 && k >= 2) continue;  // one-sided at a zero multiplier
    const Eigen::VectorXd col = (f(yp) - f(ym)) / (2 * h);
    EXPECT_LT((col - j.col(k)).cwiseAbs().maxCoeff(), 1e-6) << k;
  }
}

TEST(Dynamics, ResidualPermutationInvariant) {
  const auto c = voltctl::test::load_case("case14");
  const auto sens = voltage_sensitivity(build_admittance(c), partition_buses(c));
  const Eigen::MatrixXd xc = sens.controlled_columns();
  Limits lim = Limits::uniform(9, 9, 0.95, 1.05, -0.2, 0.2);
  lim.v_lo(3) = 0.96;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ControllerState s = ControllerState::zeros(9, 9);
  for (auto* v : {&s.q, &s.lam_hi, &s.lam_lo, &s.mu_hi, &s.mu_lo}) {
    for (auto& x : *v) x = 0.3 * u(rng);
  }
  Eigen::VectorXd v(9);
  for (auto& x : v) x = 0.9 + 0.2 * u(rng);

  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(9);
  for (int i = 0; i < 9; ++i) p.indices()(i) = perm[i];

  ControllerState sp{p * s.q, p * s.lam_hi, p * s.lam_lo, p * s.mu_hi, p * s.mu_lo};
  const Limits lp{p * lim.v_lo, p * lim.v_hi, p * lim.q_lo, p * lim.q_hi};
  const Eigen::MatrixXd xp = p * xc * p.transpose();
  EXPECT_NEAR(equilibrium_residual(s, v, xc, lim, Gains{}), equilibrium_residual(sp, p * v, xp, lp, Gains{}),
              1e-14);
}

TEST(State, PackRoundTrip) {
  ControllerState s = ControllerState::zeros(3, 2);
  s.q << 1, 2;
  s.lam_hi << 3, 4, 5;
  s.mu_lo << 6, 7;
  const auto back = ControllerState::unpack(s.pack(), 3, 2);
  EXPECT_EQ(back.pack(), s.pack());
  EXPECT_EQ(s.flat_size(), 12);
  EXPECT_THROW(ControllerState::unpack(Eigen::VectorXd::Zero(5), 3, 2), DimensionError);
}

TEST(Limits, Validation) {
  EXPECT_THROW(Limits::uniform(2, 2, 1.05, 0.95, -0.2, 0.2), std::invalid_argument);
  EXPECT_THROW(Limits::uniform(2, 2, 0.95, 1.05, 0.2, -0.2), std::invalid_argument);
  EXPECT_THROW((Gains{0.0, 1.0, 1.0}.validate()), std::invalid_argument);
}
