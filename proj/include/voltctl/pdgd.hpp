#pragma once

// Primal-dual gradient dynamics for
//
//   min  sum_i q_i^2
//   s.t. v_lo <= v(q) <= v_hi   (M load buses)
//        q_lo <= q    <= q_hi   (C controllers)
//
// The primal variable descends the Lagrangian; the four multiplier vectors
// ascend it under a positive projection that keeps them nonnegative.

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "voltctl/error.hpp"
#include "voltctl/sensitivity.hpp"

namespace voltctl {

struct Limits {
  Eigen::VectorXd v_lo, v_hi;  // M
  Eigen::VectorXd q_lo, q_hi;  // C

  static Limits uniform(Eigen::Index m, Eigen::Index c, double v_lo, double v_hi, double q_lo,
                        double q_hi) {
    Limits l{Eigen::VectorXd::Constant(m, v_lo), Eigen::VectorXd::Constant(m, v_hi),
             Eigen::VectorXd::Constant(c, q_lo), Eigen::VectorXd::Constant(c, q_hi)};
    l.validate();
    return l;
  }

  void validate() const {
    if (v_lo.size() != v_hi.size() || q_lo.size() != q_hi.size()) {
      throw DimensionError("limit vectors have inconsistent sizes");
    }
    if (!(v_lo.array() < v_hi.array()).all()) throw std::invalid_argument("need v_lo < v_hi");
    if (!(q_lo.array() < q_hi.array()).all()) throw std::invalid_argument("need q_lo < q_hi");
  }
};

struct Gains {
  double k_q = 1.0;
  double k_lam = 1.0;
  double k_mu = 1.0;

  void validate() const {
    if (!(k_q > 0.0 && k_lam > 0.0 && k_mu > 0.0)) throw std::invalid_argument("gains must be > 0");
  }
};

struct ControllerState {
  Eigen::VectorXd q;       // C
  Eigen::VectorXd lam_hi;  // M, upper voltage limits
  Eigen::VectorXd lam_lo;  // M, lower voltage limits
  Eigen::VectorXd mu_hi;   // C, upper reactive limits
  Eigen::VectorXd mu_lo;   // C, lower reactive limits

  static ControllerState zeros(Eigen::Index m, Eigen::Index c) {
    return {Eigen::VectorXd::Zero(c), Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m),
            Eigen::VectorXd::Zero(c), Eigen::VectorXd::Zero(c)};
  }

  Eigen::Index loads() const noexcept { return lam_hi.size(); }
  Eigen::Index controllers() const noexcept { return q.size(); }
  Eigen::Index flat_size() const noexcept { return 3 * q.size() + 2 * lam_hi.size(); }

  /// Layout [q | lam_hi | lam_lo | mu_hi | mu_lo].
  Eigen::VectorXd pack() const {
    Eigen::VectorXd y(flat_size());
    y << q, lam_hi, lam_lo, mu_hi, mu_lo;
    return y;
  }

  static ControllerState unpack(const Eigen::VectorXd& y, Eigen::Index m, Eigen::Index c) {
    if (y.size() != 3 * c + 2 * m) throw DimensionError("flat controller state has wrong size");
    return {y.segment(0, c), y.segment(c, m), y.segment(c + m, m), y.segment(c + 2 * m, c),
            y.segment(2 * c + 2 * m, c)};
  }

  double min_multiplier() const {
    double lo = HUGE_VAL;
    for (const auto* v : {&lam_hi, &lam_lo, &mu_hi, &mu_lo}) {
      if (v->size()) lo = std::min(lo, v->minCoeff());
    }
    return lo;
  }
};

inline double objective(const Eigen::VectorXd& q) { return q.squaredNorm(); }

inline Eigen::VectorXd objective_gradient(const Eigen::VectorXd& q) { return 2.0 * q; }

inline double lagrangian(const ControllerState& s, const Eigen::VectorXd& v, const Limits& lim) {
  if (v.size() != lim.v_lo.size() || s.lam_hi.size() != v.size() || s.q.size() != lim.q_lo.size()) {
    throw DimensionError("lagrangian: dimensions do not agree");
  }
  return objective(s.q) + s.lam_lo.dot(lim.v_lo - v) + s.lam_hi.dot(v - lim.v_hi) +
         s.mu_lo.dot(lim.q_lo - s.q) + s.mu_hi.dot(s.q - lim.q_hi);
}

/// [rate]^+ with respect to a multiplier: inward motion is blocked at zero.
inline double positive_projection(double rate, double multiplier) {
  if (multiplier < 0.0) {
    throw std::domain_error(fmt::format("negative multiplier {} passed to projection", multiplier));
  }
  return multiplier > 0.0 ? rate : std::max(rate, 0.0);
}

namespace detail {

inline void check_rhs_inputs(const ControllerState& s, const Eigen::VectorXd& v,
                             const Eigen::MatrixXd& dv_dq, const Limits& lim) {
  const Eigen::Index m = v.size();
  const Eigen::Index c = s.q.size();
  if (s.lam_hi.size() != m || s.lam_lo.size() != m || s.mu_hi.size() != c || s.mu_lo.size() != c ||
      dv_dq.rows() != m || dv_dq.cols() != c || lim.v_lo.size() != m || lim.v_hi.size() != m ||
      lim.q_lo.size() != c || lim.q_hi.size() != c) {
    throw DimensionError("dynamics: state, voltage, sensitivity and limits disagree in size");
  }
  if (!s.pack().allFinite() || !v.allFinite()) {
    throw std::invalid_argument("dynamics: non-finite input");
  }
}

}  // namespace detail

/// Time derivative of the controller state, given the measured load-bus
/// voltages and dv/dq (the controlled columns of X, M x C).
inline ControllerState dynamics_rhs(const ControllerState& s, const Eigen::VectorXd& v_measured,
                                    const Eigen::MatrixXd& dv_dq, const Limits& lim,
                                    const Gains& gains) {
  detail::check_rhs_inputs(s, v_measured, dv_dq, lim);
  ControllerState d;
  d.q = -gains.k_q * (objective_gradient(s.q) + dv_dq.transpose() * (s.lam_hi - s.lam_lo) +
                      s.mu_hi - s.mu_lo);
  const Eigen::Index m = v_measured.size();
  const Eigen::Index c = s.q.size();
  d.lam_hi.resize(m);
  d.lam_lo.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    d.lam_hi(j) = gains.k_lam * positive_projection(v_measured(j) - lim.v_hi(j), s.lam_hi(j));
    d.lam_lo(j) = gains.k_lam * positive_projection(lim.v_lo(j) - v_measured(j), s.lam_lo(j));
  }
  d.mu_hi.resize(c);
  d.mu_lo.resize(c);
  for (Eigen::Index i = 0; i < c; ++i) {
    d.mu_hi(i) = gains.k_mu * positive_projection(s.q(i) - lim.q_hi(i), s.mu_hi(i));
    d.mu_lo(i) = gains.k_mu * positive_projection(lim.q_lo(i) - s.q(i), s.mu_lo(i));
  }
  return d;
}

inline ControllerState dynamics_rhs(const ControllerState& s, const Eigen::VectorXd& v_measured,
                                    const SensitivityMatrix& sens, const Limits& lim,
                                    const Gains& gains) {
  return dynamics_rhs(s, v_measured, sens.controlled_columns(), lim, gains);
}

/// Jacobian of the flat right-hand side, taking dv/dq from the linear model.
/// Each projected component contributes either its rate derivative or zero,
/// depending on which branch of the projection is active.
inline Eigen::MatrixXd dynamics_jacobian(const ControllerState& s, const Eigen::VectorXd& v,
                                         const Eigen::MatrixXd& dv_dq, const Limits& lim,
                                         const Gains& gains) {
  const Eigen::Index m = v.size();
  const Eigen::Index c = s.q.size();
  const Eigen::Index q0 = 0, lh0 = c, ll0 = c + m, mh0 = c + 2 * m, ml0 = 2 * c + 2 * m;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3 * c + 2 * m, 3 * c + 2 * m);

  j.block(q0, q0, c, c).diagonal().setConstant(-2.0 * gains.k_q);
  j.block(q0, lh0, c, m) = -gains.k_q * dv_dq.transpose();
  j.block(q0, ll0, c, m) = gains.k_q * dv_dq.transpose();
  j.block(q0, mh0, c, c).diagonal().setConstant(-gains.k_q);
  j.block(q0, ml0, c, c).diagonal().setConstant(gains.k_q);

  for (Eigen::Index r = 0; r < m; ++r) {
    if (s.lam_hi(r) > 0.0 || v(r) - lim.v_hi(r) > 0.0) {
      j.block(lh0 + r, q0, 1, c) = gains.k_lam * dv_dq.row(r);
    }
    if (s.lam_lo(r) > 0.0 || lim.v_lo(r) - v(r) > 0.0) {
      j.block(ll0 + r, q0, 1, c) = -gains.k_lam * dv_dq.row(r);
    }
  }
  for (Eigen::Index i = 0; i < c; ++i) {
    if (s.mu_hi(i) > 0.0 || s.q(i) - lim.q_hi(i) > 0.0) j(mh0 + i, q0 + i) = gains.k_mu;
    if (s.mu_lo(i) > 0.0 || lim.q_lo(i) - s.q(i) > 0.0) j(ml0 + i, q0 + i) = -gains.k_mu;
  }
  return j;
}

/// Infinity norm of the projected derivative; zero exactly at a saddle point.
inline double equilibrium_residual(const ControllerState& s, const Eigen::VectorXd& v,
                                   const Eigen::MatrixXd& dv_dq, const Limits& lim,
                                   const Gains& gains) {
  return dynamics_rhs(s, v, dv_dq, lim, gains).pack().lpNorm<Eigen::Infinity>();
}

inline double equilibrium_residual(const ControllerState& s, const Eigen::VectorXd& v,
                                   const SensitivityMatrix& sens, const Limits& lim,
                                   const Gains& gains) {
  return equilibrium_residual(s, v, sens.controlled_columns(), lim, gains);
}

}  // namespace voltctl
