#pragma once

// Search for the uniform load factor whose uncontrolled power flow best
// matches a target voltage profile.

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "voltctl/netcase.hpp"
#include "voltctl/powerflow.hpp"

namespace voltctl {

struct CalibrationResult {
  double factor = 1.0;
  double max_error = std::numeric_limits<double>::infinity();
  bool success = false;  // max_error below the requested threshold
};

/// Max |v - target| over all buses at load factor f; infinity if the power
/// flow does not converge.
inline double profile_error(const NetworkCase& c, const Eigen::VectorXd& target, double f) {
  if (target.size() != static_cast<Eigen::Index>(c.size())) {
    throw DimensionError("target profile must list every bus");
  }
  const auto sol = solve_power_flow(scale_loads(c, f));
  if (!sol.converged) return std::numeric_limits<double>::infinity();
  return (sol.v - target).lpNorm<Eigen::Infinity>();
}

/// Coarse grid over [lo, hi] followed by golden-section refinement around the
/// best grid point.
inline CalibrationResult calibrate_load_scale(const NetworkCase& c, const Eigen::VectorXd& target,
                                              double threshold = 0.02, double lo = 1.0,
                                              double hi = 4.0, int grid = 60) {
  if (!(hi > lo) || grid < 2) throw std::invalid_argument("bad calibration bracket");
  CalibrationResult best;
  const double step = (hi - lo) / grid;
  for (int k = 0; k <= grid; ++k) {
    const double f = lo + k * step;
    const double e = profile_error(c, target, f);
    if (e < best.max_error) best = {f, e, false};
  }
  double a = std::max(lo, best.factor - step);
  double b = std::min(hi, best.factor + step);
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - r * (b - a), x2 = a + r * (b - a);
  double e1 = profile_error(c, target, x1), e2 = profile_error(c, target, x2);
  while (b - a > 1e-6) {
    if (e1 < e2) {
      b = x2;
      x2 = x1;
      e2 = e1;
      x1 = b - r * (b - a);
      e1 = profile_error(c, target, x1);
    } else {
      a = x1;
      x1 = x2;
      e1 = e2;
      x2 = a + r * (b - a);
      e2 = profile_error(c, target, x2);
    }
  }
  const double f = 0.5 * (a + b);
  const double e = profile_error(c, target, f);
  if (e < best.max_error) best = {f, e, false};
  best.success = best.max_error < threshold;
  return best;
}

}  // namespace voltctl
