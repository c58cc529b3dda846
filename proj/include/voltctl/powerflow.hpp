#pragma once

// Newton-Raphson AC power flow in polar coordinates. This is the plant model:
// the controller only ever sees its voltage solution.

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "voltctl/error.hpp"
#include "voltctl/netcase.hpp"

namespace voltctl {

/// Specified injections. p_injection covers every bus (generation minus load);
/// q_injection covers the PQ buses in case order.
struct InjectionSet {
  Eigen::VectorXd p_injection;
  Eigen::VectorXd q_injection;
};

struct PowerFlowSolution {
  Eigen::VectorXd v;      // pu
  Eigen::VectorXd delta;  // rad
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
};

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 20;
};

struct Mismatch {
  Eigen::VectorXd dp;  // zero at the slack
  Eigen::VectorXd dq;  // zero at slack and PV buses
};

inline std::vector<std::size_t> pq_bus_indices(const NetworkCase& c) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    if (c.buses[i].kind == BusKind::PQ) out.push_back(i);
  }
  return out;
}

/// Injections implied by the case data alone (no controller output).
inline InjectionSet base_injections(const NetworkCase& c) {
  const auto n = static_cast<Eigen::Index>(c.size());
  InjectionSet inj;
  inj.p_injection = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) inj.p_injection(i) = -c.buses[i].p_load;
  for (const auto& g : c.generators) inj.p_injection(c.index_of(g.bus)) += g.p_gen;
  const auto pq = pq_bus_indices(c);
  inj.q_injection.resize(static_cast<Eigen::Index>(pq.size()));
  for (std::size_t k = 0; k < pq.size(); ++k) inj.q_injection(k) = -c.buses[pq[k]].q_load;
  return inj;
}

/// P_k, Q_k from the polar form with |Y_kn| and angle theta_kn.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> bus_power_polar(const AdmittanceMatrices& adm,
                                                                   const Eigen::VectorXd& v,
                                                                   const Eigen::VectorXd& delta) {
  const Eigen::Index n = v.size();
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index m = 0; m < n; ++m) {
      const double g = adm.g(k, m);
      const double b = adm.b(k, m);
      if (g == 0.0 && b == 0.0) continue;
      const double mag = std::hypot(g, b);
      const double theta = std::atan2(b, g);
      const double arg = delta(k) - delta(m) - theta;
      p(k) += v(k) * mag * v(m) * std::cos(arg);
      q(k) += v(k) * mag * v(m) * std::sin(arg);
    }
  }
  return {p, q};
}

/// Reusable solver state for one topology: Y-bus and bus classification.
class PowerFlowModel {
 public:
  explicit PowerFlowModel(const NetworkCase& c) : y_(build_admittance(c).complex()) {
    setpoint_ = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(c.size()));
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
      switch (c.buses[i].kind) {
        case BusKind::Slack:
          slack_ = i;
          setpoint_(i) = c.buses[i].v_setpoint;
          break;
        case BusKind::PV:
          pv_.push_back(i);
          setpoint_(i) = c.buses[i].v_setpoint;
          break;
        case BusKind::PQ:
          pq_.push_back(i);
          break;
      }
    }
    angle_vars_ = pv_;
    angle_vars_.insert(angle_vars_.end(), pq_.begin(), pq_.end());
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(y_.rows()); }
  const std::vector<std::size_t>& pq() const noexcept { return pq_; }

  PowerFlowSolution flat_start() const {
    PowerFlowSolution s;
    s.v = setpoint_;
    s.delta = Eigen::VectorXd::Zero(setpoint_.size());
    return s;
  }

  PowerFlowSolution solve(const InjectionSet& inj, const PowerFlowOptions& opt,
                          const PowerFlowSolution* warm_start = nullptr) const {
    const auto n = static_cast<Eigen::Index>(size());
    if (inj.p_injection.size() != n || inj.q_injection.size() != static_cast<Eigen::Index>(pq_.size())) {
      throw DimensionError("injection set does not match the case");
    }
    PowerFlowSolution sol = flat_start();
    if (warm_start != nullptr && warm_start->v.size() == n) {
      sol.delta = warm_start->delta;
      for (std::size_t i : pq_) sol.v(i) = warm_start->v(i);
      sol.delta(slack_) = 0.0;
    }

    const auto npv = static_cast<Eigen::Index>(pv_.size());
    const auto npq = static_cast<Eigen::Index>(pq_.size());
    const Eigen::Index na = npv + npq;
    Eigen::VectorXd f(na + npq);

    auto residual = [&] {
      const Eigen::VectorXcd vc = polar(sol);
      const Eigen::VectorXcd s = vc.cwiseProduct((y_ * vc).conjugate());
      for (Eigen::Index k = 0; k < na; ++k) {
        const auto bus = angle_vars_[k];
        f(k) = s(bus).real() - inj.p_injection(bus);
      }
      for (Eigen::Index k = 0; k < npq; ++k) {
        f(na + k) = s(pq_[k]).imag() - inj.q_injection(k);
      }
      return f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    };

    sol.max_mismatch = residual();
    for (sol.iterations = 0; sol.iterations < opt.max_iter; ++sol.iterations) {
      if (!std::isfinite(sol.max_mismatch)) break;
      if (sol.max_mismatch < opt.tol) {
        sol.converged = true;
        return sol;
      }
      const Eigen::MatrixXd jac = jacobian(sol);
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
      if (!(lu.rcond() > 1e-14)) throw SingularError("power flow Jacobian is singular");
      const Eigen::VectorXd dx = lu.solve(-f);
      for (Eigen::Index k = 0; k < na; ++k) sol.delta(angle_vars_[k]) += dx(k);
      for (Eigen::Index k = 0; k < npq; ++k) sol.v(pq_[k]) += dx(na + k);
      sol.max_mismatch = residual();
    }
    sol.converged = std::isfinite(sol.max_mismatch) && sol.max_mismatch < opt.tol;
    return sol;
  }

 private:
  static Eigen::VectorXcd polar(const PowerFlowSolution& s) {
    Eigen::VectorXcd vc(s.v.size());
    for (Eigen::Index i = 0; i < s.v.size(); ++i) vc(i) = std::polar(s.v(i), s.delta(i));
    return vc;
  }

  // Exact Jacobian of S = diag(V) conj(Y V) w.r.t. angles and magnitudes.
  Eigen::MatrixXd jacobian(const PowerFlowSolution& s) const {
    const Eigen::VectorXcd vc = polar(s);
    const Eigen::VectorXcd ibus = y_ * vc;
    Eigen::VectorXcd vnorm(vc.size());
    for (Eigen::Index i = 0; i < vc.size(); ++i) vnorm(i) = vc(i) / std::abs(vc(i));
    const Eigen::MatrixXcd ds_dvm = vc.asDiagonal() * (y_ * vnorm.asDiagonal()).conjugate() +
                                    Eigen::MatrixXcd(ibus.conjugate().asDiagonal()) * vnorm.asDiagonal();
    const Eigen::MatrixXcd ds_dva =
        std::complex<double>(0.0, 1.0) * vc.asDiagonal() *
        (Eigen::MatrixXcd(ibus.asDiagonal()) - y_ * vc.asDiagonal()).conjugate();

    const auto na = static_cast<Eigen::Index>(angle_vars_.size());
    const auto npq = static_cast<Eigen::Index>(pq_.size());
    Eigen::MatrixXd j(na + npq, na + npq);
    for (Eigen::Index r = 0; r < na; ++r) {
      const auto br = angle_vars_[r];
      for (Eigen::Index c = 0; c < na; ++c) j(r, c) = ds_dva(br, angle_vars_[c]).real();
      for (Eigen::Index c = 0; c < npq; ++c) j(r, na + c) = ds_dvm(br, pq_[c]).real();
    }
    for (Eigen::Index r = 0; r < npq; ++r) {
      const auto br = pq_[r];
      for (Eigen::Index c = 0; c < na; ++c) j(na + r, c) = ds_dva(br, angle_vars_[c]).imag();
      for (Eigen::Index c = 0; c < npq; ++c) j(na + r, na + c) = ds_dvm(br, pq_[c]).imag();
    }
    return j;
  }

  Eigen::MatrixXcd y_;
  Eigen::VectorXd setpoint_;
  std::size_t slack_ = 0;
  std::vector<std::size_t> pv_;
  std::vector<std::size_t> pq_;
  std::vector<std::size_t> angle_vars_;
};

/// Full Newton solve. Non-convergence is reported through `converged`, a
/// singular Jacobian throws SingularError.
inline PowerFlowSolution solve_power_flow(const NetworkCase& c, const InjectionSet& inj,
                                          const PowerFlowOptions& opt = {},
                                          const PowerFlowSolution* warm_start = nullptr) {
  if (!(opt.tol > 0.0) || opt.max_iter < 1) throw std::invalid_argument("bad power flow options");
  return PowerFlowModel(c).solve(inj, opt, warm_start);
}

inline PowerFlowSolution solve_power_flow(const NetworkCase& c, const PowerFlowOptions& opt = {}) {
  return solve_power_flow(c, base_injections(c), opt);
}

/// Specified minus computed injections, evaluated independently of the solver.
inline Mismatch mismatch(const NetworkCase& c, const InjectionSet& inj, const PowerFlowSolution& sol) {
  const auto n = static_cast<Eigen::Index>(c.size());
  if (sol.v.size() != n || sol.delta.size() != n || inj.p_injection.size() != n) {
    throw DimensionError("mismatch: dimensions do not agree with the case");
  }
  const auto [p, q] = bus_power_polar(build_admittance(c), sol.v, sol.delta);
  Mismatch mm{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto kind = c.buses[i].kind;
    if (kind != BusKind::Slack) mm.dp(i) = inj.p_injection(i) - p(i);
    if (kind == BusKind::PQ) mm.dq(i) = inj.q_injection(k++) - q(i);
  }
  return mm;
}

/// Real power lost in branch series impedances and bus shunts.
inline double total_losses(const NetworkCase& c, const PowerFlowSolution& sol) {
  auto phasor = [&](std::size_t i) { return std::polar(sol.v(i), sol.delta(i)); };
  double loss = 0.0;
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    loss += c.buses[i].g_shunt * sol.v(i) * sol.v(i);
  }
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    const auto f = c.index_of(br.from_bus);
    const auto t = c.index_of(br.to_bus);
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> vf = phasor(f) / br.tap_ratio;  // ideal transformer on from side
    const std::complex<double> vt = phasor(t);
    const std::complex<double> i_series = ys * (vf - vt);
    loss += std::norm(i_series) * br.r;
  }
  return loss;
}

}  // namespace voltctl
