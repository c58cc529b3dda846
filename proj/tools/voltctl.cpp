// voltctl: run volt/var control scenarios and inspect cases.
//
// Exit codes: 0 ran and converged, 1 ran but did not converge, 2 usage or
// configuration error, 3 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "voltctl/voltctl.hpp"

namespace fs = std::filesystem;
using namespace voltctl;

namespace {

enum Exit { kConverged = 0, kNotConverged = 1, kUsage = 2, kRuntime = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config_path;
  std::string case_path;
  std::string out_dir;
  std::string plant;
  std::string trip;
  std::string profile_path;
  double scale = -1.0;
  bool seedless = false;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw UsageError(fmt::format("cannot read {}", p.string()));
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// Paths inside a config file are relative to that file.
fs::path resolve(const std::string& p, const fs::path& base) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

struct Loaded {
  RunConfig cfg;
  NetworkCase net;  // already scaled by load_scale
};

Loaded load(const Overrides& o) {
  Loaded l;
  fs::path base;
  if (!o.config_path.empty()) {
    l.cfg = parse_config(slurp(o.config_path));
    base = fs::path(o.config_path).parent_path();
    if (!l.cfg.case_path.empty()) l.cfg.case_path = resolve(l.cfg.case_path, base).string();
    if (!l.cfg.profile_path.empty()) l.cfg.profile_path = resolve(l.cfg.profile_path, base).string();
  }
  if (!o.case_path.empty()) l.cfg.case_path = o.case_path;
  if (!o.out_dir.empty()) l.cfg.output_dir = o.out_dir;
  if (o.plant == "linear") l.cfg.plant_mode = PlantMode::Linear;
  if (o.plant == "nonlinear") l.cfg.plant_mode = PlantMode::NonlinearPF;
  if (o.scale >= 0.0) l.cfg.load_scale = o.scale;
  if (!o.trip.empty()) {
    l.cfg.trip = parse_trip(o.trip);
    if (l.cfg.scenario_kind == ScenarioKind::Static) l.cfg.scenario_kind = ScenarioKind::Fault;
  }
  if (!o.profile_path.empty()) {
    l.cfg.profile_path = o.profile_path;
    l.cfg.profile.clear();
    l.cfg.scenario_kind = ScenarioKind::Daily;
  }
  validate_config(l.cfg);
  if (l.cfg.case_path.empty()) throw UsageError("no case file: set `case` in the config or pass --case");
  if (!fs::exists(l.cfg.case_path)) throw UsageError(fmt::format("case file {} not found", l.cfg.case_path));
  if (!l.cfg.profile_path.empty()) {
    l.cfg.profile = parse_profile(slurp(l.cfg.profile_path));
    if (l.cfg.profile.size() != 24) {
      throw UsageError(fmt::format("{}: need 24 factors, got {}", l.cfg.profile_path, l.cfg.profile.size()));
    }
  }
  l.net = scale_loads(parse_case(slurp(l.cfg.case_path)), l.cfg.load_scale);
  return l;
}

int run_scenario(const Loaded& l) {
  const RunConfig& cfg = l.cfg;
  const Limits lim = cfg.limits(l.net);
  const fs::path out(cfg.output_dir);
  switch (cfg.scenario_kind) {
    case ScenarioKind::Fault: {
      trip_branch(l.net, cfg.trip->from_bus, cfg.trip->to_bus);
      const FaultReport rep = run_fault(l.net, lim, cfg.gains, {cfg.trip->from_bus, cfg.trip->to_bus},
                                        cfg.trip->time, cfg.run_options());
      emit_report(rep.result, lim, out, {&rep, nullptr});
      fmt::print("pre-trip cost {:.6f}  post-trip cost {:.6f}  ratio {:.4f}\n", rep.pre_cost, rep.post_cost,
                 rep.cost_ratio());
      fmt::print("{}\n", rep.result.converged ? "converged" : "not converged");
      return rep.result.converged ? kConverged : kNotConverged;
    }
    case ScenarioKind::Daily: {
      if (cfg.profile.empty()) throw UsageError("daily scenario needs `profile` or `profile_file`");
      DailyOptions opt;
      opt.run = cfg.run_options();
      opt.window = cfg.window;
      opt.reset_multipliers = cfg.reset_multipliers;
      const DailyResult d = run_daily(l.net, lim, cfg.gains, cfg.profile, opt);
      emit_report(d.combined, lim, out, {nullptr, &d});
      std::fputs(hourly_csv(d).c_str(), stdout);
      return d.combined.converged ? kConverged : kNotConverged;
    }
    default: {
      const SimulationResult r = run_static(l.net, lim, cfg.gains, cfg.equilibrium_tol, cfg.run_options());
      emit_report(r, lim, out);
      std::fputs(voltage_table(r).c_str(), stdout);
      fmt::print("cost {:.6f}  residual {:.3e}  {}\n", objective(r.final_q), r.final_residual,
                 r.converged ? "converged" : "not converged");
      return r.converged ? kConverged : kNotConverged;
    }
  }
}

int run_powerflow(const Loaded& l, bool write) {
  PowerFlowOptions opt;
  opt.tol = l.cfg.pf_tol;
  const auto sol = solve_power_flow(l.net, opt);
  std::string table = "bus,type,v,angle_deg\n";
  for (std::size_t i = 0; i < l.net.size(); ++i) {
    const auto& b = l.net.buses[i];
    const char* kind = b.kind == BusKind::Slack ? "slack" : b.kind == BusKind::PV ? "pv" : "pq";
    table += fmt::format("{},{},{:.6f},{:.6f}\n", b.id, kind, sol.v(static_cast<Eigen::Index>(i)),
                         sol.delta(static_cast<Eigen::Index>(i)) * 180.0 / M_PI);
  }
  std::fputs(table.c_str(), stdout);
  fmt::print("iterations {}  mismatch {:.3e}  losses {:.6f} pu\n", sol.iterations, sol.max_mismatch,
             total_losses(l.net, sol));
  if (write) {
    fs::create_directories(l.cfg.output_dir);
    std::ofstream(fs::path(l.cfg.output_dir) / "powerflow.csv", std::ios::binary) << table;
  }
  return sol.converged ? kConverged : kNotConverged;
}

int run_sensitivity(const Loaded& l, bool write) {
  const auto part = partition_buses(l.net);
  const auto sens = voltage_sensitivity(build_admittance(l.net), part);
  std::string csv = "bus";
  for (auto i : part.pq) csv += fmt::format(",{}", l.net.buses[i].id);
  csv += "\n";
  for (Eigen::Index r = 0; r < sens.x.rows(); ++r) {
    csv += std::to_string(l.net.buses[part.pq[static_cast<std::size_t>(r)]].id);
    for (Eigen::Index c = 0; c < sens.x.cols(); ++c) csv += fmt::format(",{:.10f}", sens.x(r, c));
    csv += "\n";
  }
  std::fputs(csv.c_str(), stdout);
  if (write) {
    fs::create_directories(l.cfg.output_dir);
    std::ofstream(fs::path(l.cfg.output_dir) / "sensitivity.csv", std::ios::binary) << csv;
  }
  return kConverged;
}

// Linear-plant dynamics against the centralized solution.
int run_validate(const Loaded& l) {
  const Limits lim = l.cfg.limits(l.net);
  RunOptions opt = l.cfg.run_options();
  opt.plant_mode = PlantMode::Linear;
  const auto r = run_static(l.net, lim, l.cfg.gains, l.cfg.equilibrium_tol, opt);
  Plant plant(l.net, PlantMode::Linear, opt.sim.power_flow, Eigen::VectorXd::Zero(r.final_q.size()));
  const auto qp = solve_centralized(plant.sensitivity(), lim);
  const auto& part = r.partition;
  fmt::print("{:>6} {:>12} {:>12} {:>10}\n", "bus", "dynamics", "oracle", "diff");
  for (std::size_t i = 0; i < part.controlled.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    fmt::print("{:>6} {:>12.6f} {:>12.6f} {:>10.2e}\n", l.net.buses[part.controlled[i]].id, r.final_q(k),
               qp.q_star(k), std::abs(r.final_q(k) - qp.q_star(k)));
  }
  const double diff = (r.final_q - qp.q_star).lpNorm<Eigen::Infinity>();
  const double kkt = kkt_residual(r.final_q, r.final_state, plant.sensitivity(), lim);
  const bool ok = r.converged && diff < 1e-4 && kkt < 1e-4;
  fmt::print("max |q - q*| {:.3e}  kkt {:.3e}  oracle kkt {:.3e}  {}\n", diff, kkt, qp.kkt_residual,
             ok ? "PASS" : "FAIL");
  return ok ? kConverged : kNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed volt/var control simulator"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--case", o.case_path, "Case file (overrides the config)");
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--scale", o.scale, "Uniform load scale on PQ buses")->check(CLI::NonNegativeNumber);
  };
  auto* run = app.add_subcommand("run", "Static, fault or daily scenario");
  add_common(run);
  run->add_option("--plant", o.plant, "Plant model")->check(CLI::IsMember({"nonlinear", "linear"}));
  run->add_option("--trip", o.trip, "Line trip a:b@t (implies a fault run)");
  run->add_option("--profile", o.profile_path, "24 hourly load factors (implies a daily run)");
  run->add_flag("--seedless", o.seedless, "No-op; runs are deterministic");
  auto* pf = app.add_subcommand("powerflow", "Uncontrolled power flow");
  add_common(pf);
  auto* sens = app.add_subcommand("sensitivity", "Dump the sensitivity matrix as CSV");
  add_common(sens);
  auto* val = app.add_subcommand("validate", "Compare the dynamics with the centralized solution");
  add_common(val);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kConverged : kUsage;
  }

  try {
    const Loaded l = load(o);
    const bool write = !o.out_dir.empty();
    if (*run) return run_scenario(l);
    if (*pf) return run_powerflow(l, write);
    if (*sens) return run_sensitivity(l, write);
    return run_validate(l);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kUsage;
  } catch (const ParseError& e) {
    fmt::print(stderr, "case error: {}\n", e.what());
    return kUsage;
  } catch (const SemanticError& e) {
    fmt::print(stderr, "case error: {}\n", e.what());
    return kUsage;
  } catch (const TopologyError& e) {
    fmt::print(stderr, "topology error: {}\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "runtime error: {}\n", e.what());
    return kRuntime;
  }
}
