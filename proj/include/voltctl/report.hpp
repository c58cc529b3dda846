#pragma once

// Output files for a finished run: trajectory.csv, voltages_before_after.txt,
// summary.txt, and hourly.csv for daily runs. Fixed decimal formatting, so two
// identical runs give byte-identical files.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "voltctl/sim.hpp"

namespace voltctl {

class ReportError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ReportExtras {
  const FaultReport* fault = nullptr;
  const DailyResult* daily = nullptr;
};

/// Decimal places per column kind in trajectory.csv.
inline constexpr int kTimeDecimals = 6;
inline constexpr int kValueDecimals = 9;
inline constexpr int kVoltageTableDecimals = 4;

struct BindingSets {
  std::vector<int> v_lo, v_hi, q_lo, q_hi;  // bus ids
};

/// Constraints met with equality at the end of the run, to within `tol`.
inline BindingSets binding_constraints(const SimulationResult& r, const Limits& lim, double tol = 1e-4) {
  BindingSets b;
  const auto& part = r.partition;
  const auto& buses = r.final_case.buses;
  for (std::size_t k = 0; k < part.pq.size(); ++k) {
    const double v = r.final_v(static_cast<Eigen::Index>(part.pq[k]));
    const int id = buses[part.pq[k]].id;
    if (std::abs(v - lim.v_lo(k)) <= tol) b.v_lo.push_back(id);
    if (std::abs(v - lim.v_hi(k)) <= tol) b.v_hi.push_back(id);
  }
  for (std::size_t i = 0; i < part.controlled.size(); ++i) {
    const double q = r.final_q(static_cast<Eigen::Index>(i));
    const int id = buses[part.controlled[i]].id;
    if (std::abs(q - lim.q_lo(i)) <= tol) b.q_lo.push_back(id);
    if (std::abs(q - lim.q_hi(i)) <= tol) b.q_hi.push_back(id);
  }
  return b;
}

inline std::string trajectory_header(const SimulationResult& r) {
  const auto& buses = r.final_case.buses;
  std::string h = "t";
  for (auto i : r.partition.controlled) h += fmt::format(",q_{}", buses[i].id);
  for (auto i : r.partition.pq) h += fmt::format(",v_{}", buses[i].id);
  h += ",lam_hi_norm,lam_lo_norm,mu_hi_norm,mu_lo_norm,cost";
  return h;
}

inline std::string trajectory_csv(const SimulationResult& r) {
  std::string out = trajectory_header(r) + "\n";
  for (const auto& s : r.trajectory.samples) {
    out += fmt::format("{:.{}f}", s.t, kTimeDecimals);
    for (double q : s.state.q) out += fmt::format(",{:.{}f}", q, kValueDecimals);
    for (double v : s.v) out += fmt::format(",{:.{}f}", v, kValueDecimals);
    for (const auto* m : {&s.state.lam_hi, &s.state.lam_lo, &s.state.mu_hi, &s.state.mu_lo}) {
      out += fmt::format(",{:.{}f}", m->norm(), kValueDecimals);
    }
    out += fmt::format(",{:.{}f}\n", s.cost, kValueDecimals);
  }
  return out;
}

/// Parsed trajectory.csv: the header and one numeric row per sample.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ReportError("empty CSV");
  {
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) t.columns.push_back(cell);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != t.columns.size()) {
      throw ReportError(fmt::format("CSV row {} has {} cells, header has {}", t.rows.size() + 2, vals.size(),
                                    t.columns.size()));
    }
    t.rows.push_back(std::move(vals));
  }
  return t;
}

inline std::string voltage_table(const SimulationResult& r) {
  const auto& buses = r.final_case.buses;
  std::string out = fmt::format("{:<8}", "bus");
  for (const auto& b : buses) out += fmt::format("{:>8}", b.id);
  out += "\n";
  auto row = [&](const char* label, const Eigen::VectorXd& v) {
    out += fmt::format("{:<8}", label);
    for (double x : v) out += fmt::format("{:>8.{}f}", x, kVoltageTableDecimals);
    out += "\n";
  };
  row("before", r.initial_v);
  row("after", r.final_v);
  return out;
}

inline std::string join_ids(const std::vector<int>& ids) {
  if (ids.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + std::to_string(ids[i]);
  return s;
}

inline std::string summary_text(const SimulationResult& r, const Limits& lim, const ReportExtras& extras = {}) {
  const auto b = binding_constraints(r, lim);
  std::string out;
  out += fmt::format("converged: {}\n", r.converged ? "yes" : "no");
  out += fmt::format("residual: {:.3e}\n", r.final_residual);
  out += fmt::format("cost: {:.{}f}\n", objective(r.final_q), kValueDecimals);
  out += fmt::format("final_time: {:.{}f}\n", r.stats.t, kTimeDecimals);
  out += fmt::format("steps_accepted: {}\n", r.stats.accepted);
  out += fmt::format("steps_rejected: {}\n", r.stats.rejected);
  out += fmt::format("binding_v_lo: {}\n", join_ids(b.v_lo));
  out += fmt::format("binding_v_hi: {}\n", join_ids(b.v_hi));
  out += fmt::format("binding_q_lo: {}\n", join_ids(b.q_lo));
  out += fmt::format("binding_q_hi: {}\n", join_ids(b.q_hi));
  const auto& v = r.violations;
  out += fmt::format("max_v_over: {:.6f}\n", v.max_v_over);
  out += fmt::format("max_v_under: {:.6f}\n", v.max_v_under);
  out += fmt::format("max_q_over: {:.6f}\n", v.max_q_over);
  out += fmt::format("max_q_under: {:.6f}\n", v.max_q_under);
  out += fmt::format("min_multiplier: {:.3e}\n", v.min_multiplier);
  if (const auto* f = extras.fault) {
    out += fmt::format("pre_trip_cost: {:.{}f}\n", f->pre_cost, kValueDecimals);
    out += fmt::format("post_trip_cost: {:.{}f}\n", f->post_cost, kValueDecimals);
    out += fmt::format("cost_ratio: {:.6f}\n", f->cost_ratio());
    out += fmt::format("pre_trip_residual: {:.3e}\n", f->pre_residual);
  }
  if (const auto* d = extras.daily) {
    const auto n_conv = std::count_if(d->hours.begin(), d->hours.end(), [](const HourResult& h) { return h.converged; });
    out += fmt::format("hours_converged: {}/{}\n", n_conv, d->hours.size());
  }
  return out;
}

inline std::string hourly_csv(const DailyResult& d) {
  std::string out = "hour,load_scale,v_min_uncontrolled,v_max_uncontrolled,v_min_controlled,v_max_controlled,"
                    "q_sum,cost,converged\n";
  const auto& pq = d.combined.partition.pq;
  auto load_range = [&](const Eigen::VectorXd& v) {
    double lo = HUGE_VAL, hi = -HUGE_VAL;
    for (auto i : pq) {
      lo = std::min(lo, v(static_cast<Eigen::Index>(i)));
      hi = std::max(hi, v(static_cast<Eigen::Index>(i)));
    }
    return std::pair{lo, hi};
  };
  for (const auto& h : d.hours) {
    const auto [ulo, uhi] = load_range(h.v_uncontrolled);
    const auto [clo, chi] = load_range(h.v_controlled);
    out += fmt::format("{},{:.6f},{:.4f},{:.4f},{:.4f},{:.4f},{:.{}f},{:.{}f},{}\n", h.hour, h.load_scale, ulo, uhi,
                       clo, chi, h.q.sum(), kValueDecimals, h.cost, kValueDecimals, h.converged ? 1 : 0);
  }
  return out;
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ReportError(fmt::format("cannot write {}", p.string()));
  f << text;
  if (!f) throw ReportError(fmt::format("write failed for {}", p.string()));
}

}  // namespace detail

inline void emit_report(const SimulationResult& r, const Limits& lim, const std::filesystem::path& out_dir,
                        const ReportExtras& extras = {}) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw ReportError(fmt::format("cannot create output directory {}", out_dir.string()));
  }
  detail::write_file(out_dir / "trajectory.csv", trajectory_csv(r));
  detail::write_file(out_dir / "voltages_before_after.txt", voltage_table(r));
  detail::write_file(out_dir / "summary.txt", summary_text(r, lim, extras));
  if (extras.daily) detail::write_file(out_dir / "hourly.csv", hourly_csv(*extras.daily));
}

}  // namespace voltctl
