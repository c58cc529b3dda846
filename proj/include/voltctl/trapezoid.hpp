#pragma once

// Adaptive implicit trapezoidal rule for y' = f(t, y).
//
// Each step solves y1 = y0 + h/2 (f(y0) + f(y1)) by Newton iteration using the
// system's Jacobian. The local error is estimated by step doubling: one step
// of size h against two of size h/2, err ~ (y_half - y_full) / 3 for a second
// order method. The two-half-step result is kept.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "voltctl/error.hpp"

namespace voltctl {

struct TrapezoidOptions {
  double rtol = 1e-6;
  double atol = 1e-8;
  double h_init = 1e-3;
  double h_min = 1e-10;
  double h_max = std::numeric_limits<double>::infinity();
  int max_newton = 12;
  double newton_tol = 1e-3;  // on the error-weighted norm of the Newton update
  long max_steps = 2'000'000;
};

/// rhs/jacobian are the vector field; project() maps a state back onto the
/// admissible set after each accepted substep (may be a no-op).
template <class S>
concept OdeSystem = requires(S& s, double t, const Eigen::VectorXd& y, Eigen::VectorXd& ym) {
  { s.rhs(t, y) } -> std::convertible_to<Eigen::VectorXd>;
  { s.jacobian(t, y) } -> std::convertible_to<Eigen::MatrixXd>;
  s.project(ym);
};

struct IntegrationStats {
  double t = 0.0;
  long accepted = 0;
  long rejected = 0;
  long rhs_evals = 0;
  bool stopped_by_observer = false;
};

template <OdeSystem System>
class TrapezoidIntegrator {
 public:
  TrapezoidIntegrator(System& sys, TrapezoidOptions opt) : sys_(sys), opt_(opt) {
    if (!(opt_.rtol > 0.0) || !(opt_.atol > 0.0)) throw std::invalid_argument("tolerances must be > 0");
  }

  /// Advances y from t0 to t_end. observer(t, y) runs after every accepted
  /// step; returning false stops the integration there.
  template <class Observer>
  IntegrationStats integrate(double t0, Eigen::VectorXd& y, double t_end, Observer&& observer) {
    IntegrationStats stats;
    double t = t0;
    double h = std::min(h_next_ > 0.0 ? h_next_ : opt_.h_init, opt_.h_max);
    Eigen::VectorXd f0 = eval(t, y, stats);
    while (t < t_end) {
      if (stats.accepted + stats.rejected >= opt_.max_steps) {
        throw SimulationError(fmt::format("step budget exhausted at t = {}", t));
      }
      const bool last = h >= t_end - t;
      const double hs = last ? t_end - t : h;

      double err = std::numeric_limits<double>::infinity();
      std::optional<Eigen::VectorXd> y_new;
      if (auto full = solve_step(t, y, f0, hs, stats)) {
        if (auto half1 = solve_step(t, y, f0, hs / 2, stats)) {
          const Eigen::VectorXd f_half = eval(t + hs / 2, *half1, stats);
          if (auto half2 = solve_step(t + hs / 2, *half1, f_half, hs / 2, stats)) {
            err = weighted_norm(*half2 - *full, y, *half2) / 3.0;
            y_new = std::move(half2);
          }
        }
      }

      if (y_new && err <= 1.0) {
        t = last ? t_end : t + hs;
        y = std::move(*y_new);
        f0 = eval(t, y, stats);
        ++stats.accepted;
        const double grow = err == 0.0 ? 5.0 : std::clamp(0.9 * std::cbrt(1.0 / err), 0.2, 5.0);
        // a truncated final step says little about the next step size
        if (!last) h = std::min(hs * grow, opt_.h_max);
        if (!observer(t, static_cast<const Eigen::VectorXd&>(y))) {
          stats.stopped_by_observer = true;
          break;
        }
      } else {
        ++stats.rejected;
        const double shrink = std::isfinite(err) ? std::clamp(0.9 * std::cbrt(1.0 / err), 0.1, 0.5) : 0.25;
        h = hs * shrink;
        if (h < opt_.h_min) {
          throw SimulationError(fmt::format("step size underflow (h = {:.3g}) at t = {}", h, t));
        }
      }
    }
    h_next_ = h;
    stats.t = t;
    return stats;
  }

  IntegrationStats integrate(double t0, Eigen::VectorXd& y, double t_end) {
    return integrate(t0, y, t_end, [](double, const Eigen::VectorXd&) { return true; });
  }

  /// Forget the step-size history (call after a discontinuity in the system).
  void reset_step() noexcept { h_next_ = 0.0; }

 private:
  Eigen::VectorXd eval(double t, const Eigen::VectorXd& y, IntegrationStats& stats) {
    ++stats.rhs_evals;
    return sys_.rhs(t, y);
  }

  double weighted_norm(const Eigen::VectorXd& e, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    double n = 0.0;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      const double scale = opt_.atol + opt_.rtol * std::max(std::abs(a(i)), std::abs(b(i)));
      n = std::max(n, std::abs(e(i)) / scale);
    }
    return n;
  }

  std::optional<Eigen::VectorXd> solve_step(double t, const Eigen::VectorXd& y0,
                                            const Eigen::VectorXd& f0, double h,
                                            IntegrationStats& stats) {
    const double t1 = t + h;
    Eigen::VectorXd y1 = y0;
    const auto n = y0.size();
    for (int it = 0; it < opt_.max_newton; ++it) {
      const Eigen::VectorXd f1 = eval(t1, y1, stats);
      const Eigen::VectorXd g = y1 - y0 - 0.5 * h * (f0 + f1);
      const Eigen::MatrixXd jg = Eigen::MatrixXd::Identity(n, n) - 0.5 * h * sys_.jacobian(t1, y1);
      const Eigen::VectorXd dy = jg.partialPivLu().solve(-g);
      if (!dy.allFinite()) return std::nullopt;
      y1 += dy;
      if (weighted_norm(dy, y0, y1) < opt_.newton_tol) {
        sys_.project(y1);
        return y1;
      }
    }
    return std::nullopt;
  }

  System& sys_;
  TrapezoidOptions opt_;
  double h_next_ = 0.0;
};

}  // namespace voltctl
