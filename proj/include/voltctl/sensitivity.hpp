#pragma once

// Controller-side linear model: voltage magnitudes at load buses as a linear
// function of reactive injections, from the decoupled Jacobian
//
//   [ -B  G ] [dδ]   [dP]
//   [ -G -B ] [dV] = [dQ]
//
// with dP = 0. Angles are eliminated over all non-slack buses A, magnitudes
// kept over the load buses L:  X = -(G_LA B_AA^-1 G_AL + B_LL)^-1.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "voltctl/error.hpp"
#include "voltctl/netcase.hpp"

namespace voltctl {

struct BusPartition {
  std::size_t slack = 0;
  std::vector<std::size_t> pv;
  std::vector<std::size_t> pq;          // load buses, case order; size M
  std::vector<std::size_t> controlled;  // subset of pq with a controller; size C
  std::vector<std::size_t> controlled_pos;  // position of each controlled bus inside pq

  std::size_t load_count() const noexcept { return pq.size(); }
  std::size_t controller_count() const noexcept { return controlled.size(); }
};

struct SensitivityMatrix {
  Eigen::MatrixXd x;  // M x M, dV_L = X dQ_L
  BusPartition partition;
  Eigen::VectorXd base_v;  // M, load-bus magnitudes at the linearization point
  Eigen::VectorXd base_q;  // C, controller output at the linearization point

  /// Columns of X belonging to controlled buses (M x C): dv_j/dQ_i = X(j, i).
  Eigen::MatrixXd controlled_columns() const {
    const auto& pos = partition.controlled_pos;
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(pos.size()));
    for (std::size_t k = 0; k < pos.size(); ++k) out.col(k) = x.col(pos[k]);
    return out;
  }
};

inline BusPartition partition_buses(const NetworkCase& c) {
  BusPartition p;
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    const auto& b = c.buses[i];
    switch (b.kind) {
      case BusKind::Slack: p.slack = i; break;
      case BusKind::PV: p.pv.push_back(i); break;
      case BusKind::PQ:
        if (b.has_controller) {
          p.controlled.push_back(i);
          p.controlled_pos.push_back(p.pq.size());
        }
        p.pq.push_back(i);
        break;
    }
  }
  return p;
}

inline SensitivityMatrix voltage_sensitivity(const AdmittanceMatrices& adm, const BusPartition& part) {
  std::vector<std::size_t> non_slack = part.pv;
  non_slack.insert(non_slack.end(), part.pq.begin(), part.pq.end());
  const auto na = static_cast<Eigen::Index>(non_slack.size());
  const auto nl = static_cast<Eigen::Index>(part.pq.size());
  if (nl == 0) throw SemanticError("case has no load buses");

  auto block = [](const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = m(rows[r], cols[c]);
    }
    return out;
  };

  const Eigen::MatrixXd b_aa = block(adm.b, non_slack, non_slack);
  const Eigen::MatrixXd g_al = block(adm.g, non_slack, part.pq);
  const Eigen::MatrixXd g_la = block(adm.g, part.pq, non_slack);
  const Eigen::MatrixXd b_ll = block(adm.b, part.pq, part.pq);

  Eigen::PartialPivLU<Eigen::MatrixXd> lu_aa(b_aa);
  if (na > 0 && !(lu_aa.rcond() > 1e-13)) {
    throw SingularError("susceptance block over non-slack buses is singular (islanded network?)");
  }
  const Eigen::MatrixXd reduced =
      na > 0 ? Eigen::MatrixXd(-(g_la * lu_aa.solve(g_al) + b_ll)) : Eigen::MatrixXd(-b_ll);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_red(reduced);
  if (!(lu_red.rcond() > 1e-13)) throw SingularError("reduced voltage sensitivity matrix is singular");

  SensitivityMatrix s;
  s.x = lu_red.inverse();
  s.partition = part;
  s.base_v = Eigen::VectorXd::Ones(nl);
  s.base_q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(part.controlled.size()));
  return s;
}

/// Linear plant: v = base_v + X_C (q - base_q), q over the C controlled buses.
inline Eigen::VectorXd predict_voltage(const SensitivityMatrix& sens, const Eigen::VectorXd& q) {
  if (q.size() != sens.base_q.size()) {
    throw DimensionError(fmt::format("predict_voltage: expected {} entries, got {}",
                                     sens.base_q.size(), q.size()));
  }
  return sens.base_v + sens.controlled_columns() * (q - sens.base_q);
}

/// Load-bus pairs joined by an in-service branch, plus the diagonal.
inline Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> neighbor_mask(const NetworkCase& c,
                                                                          const BusPartition& part) {
  const auto m = static_cast<Eigen::Index>(part.pq.size());
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m, m, false);
  std::vector<Eigen::Index> pos(c.size(), -1);
  for (std::size_t k = 0; k < part.pq.size(); ++k) {
    pos[part.pq[k]] = static_cast<Eigen::Index>(k);
    mask(k, k) = true;
  }
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    const auto a = pos[c.index_of(br.from_bus)];
    const auto b = pos[c.index_of(br.to_bus)];
    if (a >= 0 && b >= 0) {
      mask(a, b) = true;
      mask(b, a) = true;
    }
  }
  return mask;
}

/// Experimental: keeps only neighbor couplings in X. Not used by default.
inline SensitivityMatrix truncate_to_neighbors(
    SensitivityMatrix sens, const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (mask.rows() != sens.x.rows() || mask.cols() != sens.x.cols()) {
    throw DimensionError("neighbor mask size does not match X");
  }
  sens.x = mask.select(sens.x, Eigen::MatrixXd::Zero(sens.x.rows(), sens.x.cols()));
  return sens;
}

}  // namespace voltctl
