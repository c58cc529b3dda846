#pragma once

// Centralized solve of the reactive dispatch problem on the linear model, used
// to certify equilibria of the distributed dynamics.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "voltctl/pdgd.hpp"
#include "voltctl/qp.hpp"
#include "voltctl/sensitivity.hpp"

namespace voltctl {

struct ActiveSets {
  std::vector<bool> v_hi, v_lo;  // M
  std::vector<bool> q_hi, q_lo;  // C
};

struct QPSolution {
  Eigen::VectorXd q_star;
  ControllerState multipliers;  // multipliers.q == q_star
  ActiveSets active_sets;
  double objective_value = 0.0;
  double kkt_residual = 0.0;
};

enum class QpMethod { ActiveSet, Enumeration };

/// Max over stationarity, primal feasibility, dual sign and complementarity.
inline double kkt_residual(const Eigen::VectorXd& q, const ControllerState& mult,
                           const SensitivityMatrix& sens, const Limits& lim) {
  const Eigen::VectorXd v = predict_voltage(sens, q);
  const Eigen::MatrixXd xc = sens.controlled_columns();
  const Eigen::VectorXd stationarity =
      objective_gradient(q) + xc.transpose() * (mult.lam_hi - mult.lam_lo) + mult.mu_hi - mult.mu_lo;
  double r = stationarity.size() ? stationarity.lpNorm<Eigen::Infinity>() : 0.0;
  auto take = [&r](const Eigen::VectorXd& e) {
    if (e.size()) r = std::max(r, e.lpNorm<Eigen::Infinity>());
  };
  take((v - lim.v_hi).cwiseMax(0.0));
  take((lim.v_lo - v).cwiseMax(0.0));
  take((q - lim.q_hi).cwiseMax(0.0));
  take((lim.q_lo - q).cwiseMax(0.0));
  for (const auto* m : {&mult.lam_hi, &mult.lam_lo, &mult.mu_hi, &mult.mu_lo}) take((-*m).cwiseMax(0.0));
  take(mult.lam_hi.cwiseProduct(v - lim.v_hi));
  take(mult.lam_lo.cwiseProduct(lim.v_lo - v));
  take(mult.mu_hi.cwiseProduct(q - lim.q_hi));
  take(mult.mu_lo.cwiseProduct(lim.q_lo - q));
  return r;
}

/// Builds min q'q s.t. v_lo <= base_v + X_C (q - base_q) <= v_hi, q_lo <= q <= q_hi
/// as a QpProblem. Row blocks: [v_hi | v_lo | q_hi | q_lo].
inline QpProblem centralized_problem(const SensitivityMatrix& sens, const Limits& lim) {
  const Eigen::MatrixXd xc = sens.controlled_columns();
  const Eigen::Index m = xc.rows();
  const Eigen::Index c = xc.cols();
  if (lim.v_lo.size() != m || lim.q_lo.size() != c) throw DimensionError("limits do not match model");
  const Eigen::VectorXd offset = sens.base_v - xc * sens.base_q;

  QpProblem p;
  p.h = 2.0 * Eigen::MatrixXd::Identity(c, c);
  p.g = Eigen::VectorXd::Zero(c);
  p.a.resize(2 * m + 2 * c, c);
  p.b.resize(2 * m + 2 * c);
  p.a.middleRows(0, m) = -xc;
  p.b.segment(0, m) = -(lim.v_hi - offset);
  p.a.middleRows(m, m) = xc;
  p.b.segment(m, m) = lim.v_lo - offset;
  p.a.middleRows(2 * m, c) = -Eigen::MatrixXd::Identity(c, c);
  p.b.segment(2 * m, c) = -lim.q_hi;
  p.a.middleRows(2 * m + c, c) = Eigen::MatrixXd::Identity(c, c);
  p.b.segment(2 * m + c, c) = lim.q_lo;
  return p;
}

/// Exact solution of the centralized problem. Closed inequalities; throws
/// InfeasibleError when the box and voltage band cannot both be met.
inline QPSolution solve_centralized(const SensitivityMatrix& sens, const Limits& lim,
                                    QpMethod method = QpMethod::ActiveSet, double tol = 1e-10) {
  lim.validate();
  const QpProblem p = centralized_problem(sens, lim);
  const QpResult r =
      method == QpMethod::ActiveSet ? solve_qp_dual_active_set(p, tol) : solve_qp_enumeration(p, tol);
  const Eigen::Index m = lim.v_lo.size();
  const Eigen::Index c = lim.q_lo.size();

  QPSolution s;
  s.q_star = r.x;
  s.multipliers = {r.x, r.u.segment(0, m), r.u.segment(m, m), r.u.segment(2 * m, c),
                   r.u.segment(2 * m + c, c)};
  const Eigen::VectorXd slack = p.a * r.x - p.b;
  auto binding = [&](Eigen::Index start, Eigen::Index len) {
    std::vector<bool> out(static_cast<std::size_t>(len));
    for (Eigen::Index i = 0; i < len; ++i) {
      out[i] = std::abs(slack(start + i)) <= 1e-9 * (1.0 + std::abs(p.b(start + i)));
    }
    return out;
  };
  s.active_sets = {binding(0, m), binding(m, m), binding(2 * m, c), binding(2 * m + c, c)};
  s.objective_value = objective(r.x);
  s.kkt_residual = kkt_residual(r.x, s.multipliers, sens, lim);
  return s;
}

}  // namespace voltctl
