#pragma once

// Dense strictly convex QP
//
//   min 1/2 x'Hx + g'x   s.t.  A x >= b
//
// solved by the Goldfarb-Idnani dual active-set method, plus a brute-force
// active-set enumeration used to cross-check it on small problems.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "voltctl/error.hpp"

namespace voltctl {

struct QpProblem {
  Eigen::MatrixXd h;  // n x n, symmetric positive definite
  Eigen::VectorXd g;  // n
  Eigen::MatrixXd a;  // m x n, one constraint per row
  Eigen::VectorXd b;  // m
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd u;          // m, multiplier per constraint (zero when inactive)
  std::vector<int> active;    // constraint rows in the final working set
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

inline void check_qp(const QpProblem& p) {
  const auto n = p.h.rows();
  if (p.h.cols() != n || p.g.size() != n || p.a.cols() != n || p.a.rows() != p.b.size()) {
    throw DimensionError("QP data has inconsistent dimensions");
  }
}

inline double qp_objective(const QpProblem& p, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(p.h * x) + p.g.dot(x);
}

}  // namespace detail

inline QpResult solve_qp_dual_active_set(const QpProblem& p, double tol = 1e-10) {
  detail::check_qp(p);
  const auto n = p.h.rows();
  const auto m = p.a.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(p.h);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("QP Hessian is not positive definite");
  const Eigen::MatrixXd h_inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  constexpr double inf = std::numeric_limits<double>::infinity();

  QpResult res;
  res.x = -h_inv * p.g;
  std::vector<int> active;
  std::vector<double> u;  // multipliers of `active`, same order

  const int max_iter = static_cast<int>(10 * (m + n) + 10);
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    // most violated constraint, with a scale-aware tolerance
    int p_idx = -1;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::find(active.begin(), active.end(), static_cast<int>(i)) != active.end()) continue;
      const double slack = p.a.row(i).dot(res.x) - p.b(i);
      const double thresh = tol * (1.0 + std::abs(p.b(i)));
      if (slack < -thresh && slack < worst) {
        worst = slack;
        p_idx = static_cast<int>(i);
      }
    }
    if (p_idx < 0) break;

    const Eigen::VectorXd np = p.a.row(p_idx).transpose();
    double u_p = 0.0;
    for (;;) {
      const auto q = static_cast<Eigen::Index>(active.size());
      Eigen::VectorXd r(q);
      Eigen::VectorXd z = h_inv * np;
      if (q > 0) {
        Eigen::MatrixXd nmat(n, q);
        for (Eigen::Index j = 0; j < q; ++j) nmat.col(j) = p.a.row(active[j]).transpose();
        const Eigen::MatrixXd hn = h_inv * nmat;
        r = (nmat.transpose() * hn).ldlt().solve(hn.transpose() * np);
        z -= hn * r;
      }
      // partial step limit: first working-set multiplier to reach zero
      double t1 = inf;
      Eigen::Index k = -1;
      for (Eigen::Index j = 0; j < q; ++j) {
        if (r(j) > tol && u[j] / r(j) < t1) {
          t1 = u[j] / r(j);
          k = j;
        }
      }
      // full step: makes constraint p active
      double t2 = inf;
      const double zn = z.dot(np);
      if (z.norm() > tol && zn > 0.0) t2 = -(np.dot(res.x) - p.b(p_idx)) / zn;

      const double t = std::min(t1, t2);
      if (t == inf) throw InfeasibleError("QP constraints are infeasible");
      if (t2 == inf) {
        for (Eigen::Index j = 0; j < q; ++j) u[j] -= t * r(j);
        u_p += t;
        active.erase(active.begin() + k);
        u.erase(u.begin() + k);
        continue;
      }
      res.x += t * z;
      for (Eigen::Index j = 0; j < q; ++j) u[j] -= t * r(j);
      u_p += t;
      if (t2 <= t1) {
        active.push_back(p_idx);
        u.push_back(u_p);
        break;
      }
      active.erase(active.begin() + k);
      u.erase(u.begin() + k);
    }
  }
  if (res.iterations >= max_iter) throw SimulationError("QP active-set iteration limit reached");

  res.u = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < active.size(); ++j) res.u(active[j]) = std::max(u[j], 0.0);
  res.active = active;
  std::sort(res.active.begin(), res.active.end());
  res.objective = detail::qp_objective(p, res.x);
  return res;
}

/// Tries every working set of size <= n in order of increasing size and
/// returns the first KKT point. Exponential; intended for n <= 3.
inline QpResult solve_qp_enumeration(const QpProblem& p, double tol = 1e-10) {
  detail::check_qp(p);
  const auto n = p.h.rows();
  const auto m = p.a.rows();
  if (n > 6) throw std::invalid_argument("active-set enumeration limited to 6 variables");

  QpResult res;
  std::vector<int> subset;
  auto try_subset = [&]() -> bool {
    ++res.iterations;
    const auto q = static_cast<Eigen::Index>(subset.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + q, n + q);
    Eigen::VectorXd rhs(n + q);
    kkt.topLeftCorner(n, n) = p.h;
    rhs.head(n) = -p.g;
    for (Eigen::Index j = 0; j < q; ++j) {
      kkt.block(0, n + j, n, 1) = -p.a.row(subset[j]).transpose();
      kkt.block(n + j, 0, 1, n) = p.a.row(subset[j]);
      rhs(n + j) = p.b(subset[j]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) return false;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    const Eigen::VectorXd u = sol.tail(q);
    if (q > 0 && u.minCoeff() < -tol) return false;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (p.a.row(i).dot(x) - p.b(i) < -tol * (1.0 + std::abs(p.b(i)))) return false;
    }
    res.x = x;
    res.u = Eigen::VectorXd::Zero(m);
    for (Eigen::Index j = 0; j < q; ++j) res.u(subset[j]) = std::max(u(j), 0.0);
    res.active = subset;
    return true;
  };

  // lexicographic k-subsets of [0, m)
  for (Eigen::Index size = 0; size <= std::min(n, m); ++size) {
    subset.resize(static_cast<std::size_t>(size));
    for (Eigen::Index j = 0; j < size; ++j) subset[j] = static_cast<int>(j);
    for (;;) {
      if (try_subset()) {
        res.objective = detail::qp_objective(p, res.x);
        return res;
      }
      Eigen::Index j = size - 1;
      while (j >= 0 && subset[j] == static_cast<int>(m - size + j)) --j;
      if (j < 0) break;
      ++subset[j];
      for (Eigen::Index k = j + 1; k < size; ++k) subset[k] = subset[k - 1] + 1;
    }
  }
  throw InfeasibleError("QP constraints are infeasible (no KKT point among working sets)");
}

}  // namespace voltctl
