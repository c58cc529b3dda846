#pragma once

// Closed-loop quasi-static simulation: the controller ODE integrated against an
// algebraic plant (nonlinear power flow or the linear sensitivity model), with
// timed topology and load events.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "voltctl/error.hpp"
#include "voltctl/netcase.hpp"
#include "voltctl/pdgd.hpp"
#include "voltctl/powerflow.hpp"
#include "voltctl/sensitivity.hpp"
#include "voltctl/trapezoid.hpp"

namespace voltctl {

enum class PlantMode { NonlinearPF, Linear };

struct TripBranch {
  int from_bus = 0;
  int to_bus = 0;
};

/// Load scale relative to the scenario's original case. A non-empty per_bus
/// map takes precedence over the uniform factor.
struct SetLoadScale {
  double factor = 1.0;
  std::map<int, double> per_bus;
};

struct Event {
  double time = 0.0;
  std::variant<TripBranch, SetLoadScale> action;
};

struct SimOptions {
  TrapezoidOptions integrator{};
  double equilibrium_tol = 1e-6;
  bool stop_at_equilibrium = true;
  PowerFlowOptions power_flow{};
};

struct Scenario {
  NetworkCase case_ref;
  PlantMode plant_mode = PlantMode::NonlinearPF;
  Limits limits;
  Gains gains;
  std::vector<Event> events;
  double horizon = 1e5;            // s
  double controller_period = 0.0;  // s, 0 = continuous measurement
  ControllerState initial_state;
  SimOptions options;
};

struct Sample {
  double t = 0.0;
  ControllerState state;
  Eigen::VectorXd v;  // M load-bus magnitudes
  double cost = 0.0;
};

struct Trajectory {
  std::vector<Sample> samples;
};

/// Snapshot taken right before an event is applied, and at the end of a run.
struct Milestone {
  double t = 0.0;
  std::string label;
  ControllerState state;
  Eigen::VectorXd v_all;
  double cost = 0.0;
  double residual = 0.0;
};

struct ViolationSummary {
  double max_v_over = 0.0;   // max over time of (v - v_hi)+
  double max_v_under = 0.0;  // max over time of (v_lo - v)+
  double max_q_over = 0.0;
  double max_q_under = 0.0;
  double min_multiplier = 0.0;
};

struct SimulationResult {
  Trajectory trajectory;
  Eigen::VectorXd initial_v;  // all buses at t = 0 with the initial controller output
  Eigen::VectorXd final_v;    // all buses
  Eigen::VectorXd final_q;
  ControllerState final_state;
  bool converged = false;
  double final_residual = 0.0;
  ViolationSummary violations;
  std::vector<Milestone> milestones;
  NetworkCase final_case;
  BusPartition partition;
  IntegrationStats stats;
};

/// Measured plant. Rebuilt whenever the case changes; the linear model is
/// anchored at the power flow solution for the controller output at rebuild time.
class Plant {
 public:
  Plant(NetworkCase c, PlantMode mode, PowerFlowOptions pf, const Eigen::VectorXd& q_now)
      : mode_(mode), pf_opt_(pf), model_(c) {
    reset(std::move(c), q_now);
  }

  void reset(NetworkCase c, const Eigen::VectorXd& q_now) {
    case_ = std::move(c);
    model_ = PowerFlowModel(case_);
    partition_ = partition_buses(case_);
    sens_ = voltage_sensitivity(build_admittance(case_), partition_);
    dv_dq_ = sens_.controlled_columns();
    base_inj_ = base_injections(case_);
    warm_.reset();
    const auto sol = solve_nonlinear(q_now);
    if (!sol) throw SimulationError("plant power flow failed to converge at its base point");
    warm_ = *sol;
    base_solution_ = *sol;
    sens_.base_q = q_now;
    sens_.base_v = load_voltages(*sol);
  }

  const NetworkCase& network() const noexcept { return case_; }
  const BusPartition& partition() const noexcept { return partition_; }
  const SensitivityMatrix& sensitivity() const noexcept { return sens_; }
  const Eigen::MatrixXd& dv_dq() const noexcept { return dv_dq_; }
  PlantMode mode() const noexcept { return mode_; }

  /// Load-bus voltages for controller output q; NaN entries if the power flow fails.
  Eigen::VectorXd measure(const Eigen::VectorXd& q) {
    if (mode_ == PlantMode::Linear) return predict_voltage(sens_, q);
    if (auto sol = solve_nonlinear(q)) {
      warm_ = *sol;
      return load_voltages(*sol);
    }
    return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(partition_.pq.size()),
                                     std::numeric_limits<double>::quiet_NaN());
  }

  Eigen::VectorXd all_bus_voltages(const Eigen::VectorXd& q) {
    if (mode_ == PlantMode::Linear) {
      Eigen::VectorXd v = base_solution_.v;
      const Eigen::VectorXd vl = predict_voltage(sens_, q);
      for (std::size_t k = 0; k < partition_.pq.size(); ++k) v(partition_.pq[k]) = vl(k);
      return v;
    }
    if (auto sol = solve_nonlinear(q)) {
      warm_ = *sol;
      return sol->v;
    }
    throw SimulationError("plant power flow failed to converge");
  }

 private:
  std::optional<PowerFlowSolution> solve_nonlinear(const Eigen::VectorXd& q) const {
    InjectionSet inj = base_inj_;
    if (q.size() != static_cast<Eigen::Index>(partition_.controlled_pos.size())) {
      throw DimensionError("controller output size does not match the controlled buses");
    }
    for (std::size_t i = 0; i < partition_.controlled_pos.size(); ++i) {
      inj.q_injection(partition_.controlled_pos[i]) += q(i);
    }
    try {
      auto sol = model_.solve(inj, pf_opt_, warm_ ? &*warm_ : nullptr);
      if (!sol.converged && warm_) sol = model_.solve(inj, pf_opt_);  // retry from flat start
      if (sol.converged) return sol;
    } catch (const SingularError&) {
    }
    return std::nullopt;
  }

  Eigen::VectorXd load_voltages(const PowerFlowSolution& s) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(partition_.pq.size()));
    for (std::size_t k = 0; k < partition_.pq.size(); ++k) v(k) = s.v(partition_.pq[k]);
    return v;
  }

  PlantMode mode_;
  PowerFlowOptions pf_opt_;
  NetworkCase case_;
  PowerFlowModel model_;
  BusPartition partition_;
  SensitivityMatrix sens_;
  Eigen::MatrixXd dv_dq_;
  InjectionSet base_inj_;
  PowerFlowSolution base_solution_;
  std::optional<PowerFlowSolution> warm_;
};

namespace detail {

// Controller ODE coupled to the plant. With a held measurement the voltage is
// frozen over the current controller period and dv/dq vanishes.
class ClosedLoop {
 public:
  ClosedLoop(Plant& plant, const Limits& lim, const Gains& gains)
      : plant_(plant), lim_(lim), gains_(gains) {
    m_ = static_cast<Eigen::Index>(plant.partition().load_count());
    c_ = static_cast<Eigen::Index>(plant.partition().controller_count());
  }

  void hold(std::optional<Eigen::VectorXd> v) { held_ = std::move(v); }

  Eigen::VectorXd rhs(double, const Eigen::VectorXd& y) {
    const ControllerState s = clamped(y);
    const Eigen::VectorXd& v = voltage(y, s.q);
    if (!v.allFinite()) return Eigen::VectorXd::Constant(y.size(), std::numeric_limits<double>::quiet_NaN());
    return dynamics_rhs(s, v, plant_.dv_dq(), lim_, gains_).pack();
  }

  Eigen::MatrixXd jacobian(double, const Eigen::VectorXd& y) {
    const ControllerState s = clamped(y);
    const Eigen::VectorXd& v = voltage(y, s.q);
    if (!v.allFinite()) return Eigen::MatrixXd::Zero(y.size(), y.size());
    if (held_) return dynamics_jacobian(s, v, Eigen::MatrixXd::Zero(m_, c_), lim_, gains_);
    return dynamics_jacobian(s, v, plant_.dv_dq(), lim_, gains_);
  }

  // Multipliers left at round-off size by the Newton solve are snapped to zero,
  // otherwise the projection never engages for them.
  void project(Eigen::VectorXd& y) const {
    auto mult = y.tail(y.size() - c_);
    mult = (mult.array() < 1e-12).select(0.0, mult);
  }

  ControllerState clamped(const Eigen::VectorXd& y) const {
    Eigen::VectorXd yc = y;
    project(yc);
    return ControllerState::unpack(yc, m_, c_);
  }

  /// Residual against the live (not held) plant measurement.
  double residual(const ControllerState& s, const Eigen::VectorXd& v) const {
    return equilibrium_residual(s, v, plant_.dv_dq(), lim_, gains_);
  }

  Eigen::Index loads() const noexcept { return m_; }
  Eigen::Index controllers() const noexcept { return c_; }

 private:
  const Eigen::VectorXd& voltage(const Eigen::VectorXd& y, const Eigen::VectorXd& q) {
    if (held_) return *held_;
    if (cache_y_.size() != y.size() || cache_y_ != y) {
      cache_y_ = y;
      cache_v_ = plant_.measure(q);
    }
    return cache_v_;
  }

  Plant& plant_;
  const Limits& lim_;
  const Gains& gains_;
  Eigen::Index m_ = 0, c_ = 0;
  std::optional<Eigen::VectorXd> held_;
  Eigen::VectorXd cache_y_, cache_v_;
};

inline void validate_scenario(const Scenario& sc, const BusPartition& part) {
  sc.limits.validate();
  sc.gains.validate();
  const auto m = static_cast<Eigen::Index>(part.load_count());
  const auto c = static_cast<Eigen::Index>(part.controller_count());
  if (sc.limits.v_lo.size() != m || sc.limits.q_lo.size() != c) {
    throw DimensionError(fmt::format("limits sized for M={}, C={}, case has M={}, C={}",
                                     sc.limits.v_lo.size(), sc.limits.q_lo.size(), m, c));
  }
  if (sc.initial_state.loads() != m || sc.initial_state.controllers() != c ||
      sc.initial_state.lam_lo.size() != m || sc.initial_state.mu_hi.size() != c ||
      sc.initial_state.mu_lo.size() != c) {
    throw DimensionError("initial controller state does not match the case");
  }
  if (sc.initial_state.min_multiplier() < 0.0) {
    throw std::invalid_argument("initial multipliers must be nonnegative");
  }
  if (!(sc.horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (sc.controller_period < 0.0) throw std::invalid_argument("controller period must be >= 0");
  double prev = -1.0;
  for (const auto& e : sc.events) {
    if (!(e.time > prev) || e.time < 0.0 || e.time > sc.horizon) {
      throw std::invalid_argument("event times must be strictly increasing and within the horizon");
    }
    prev = e.time;
  }
}

}  // namespace detail

/// Default controller limits for a case: uniform band and box on every bus.
inline Limits default_limits(const NetworkCase& c, double v_lo = 0.95, double v_hi = 1.05,
                             double q_lo = -0.2, double q_hi = 0.2) {
  const auto part = partition_buses(c);
  return Limits::uniform(static_cast<Eigen::Index>(part.load_count()),
                         static_cast<Eigen::Index>(part.controller_count()), v_lo, v_hi, q_lo, q_hi);
}

inline ControllerState zero_state(const NetworkCase& c) {
  const auto part = partition_buses(c);
  return ControllerState::zeros(static_cast<Eigen::Index>(part.load_count()),
                                static_cast<Eigen::Index>(part.controller_count()));
}

inline SimulationResult integrate(const Scenario& sc) {
  const BusPartition part0 = partition_buses(sc.case_ref);
  detail::validate_scenario(sc, part0);

  Plant plant(sc.case_ref, sc.plant_mode, sc.options.power_flow, sc.initial_state.q);
  detail::ClosedLoop loop(plant, sc.limits, sc.gains);
  TrapezoidIntegrator integrator(loop, sc.options.integrator);

  SimulationResult res;
  res.initial_v = plant.all_bus_voltages(sc.initial_state.q);
  Eigen::VectorXd y = sc.initial_state.pack();
  double t = 0.0;

  auto record = [&](double time, const Eigen::VectorXd& yy) -> double {
    const ControllerState s = loop.clamped(yy);
    const Eigen::VectorXd v = plant.measure(s.q);
    if (!v.allFinite()) throw SimulationError(fmt::format("plant power flow diverged at t = {}", time));
    res.trajectory.samples.push_back({time, s, v, objective(s.q)});
    return loop.residual(s, v);
  };

  auto milestone = [&](const std::string& label) {
    const ControllerState s = loop.clamped(y);
    const Eigen::VectorXd v = plant.measure(s.q);
    res.milestones.push_back({t, label, s, plant.all_bus_voltages(s.q), objective(s.q), loop.residual(s, v)});
  };

  std::vector<TripBranch> trips;
  SetLoadScale scale;
  auto rebuild_case = [&] {
    NetworkCase c = scale.per_bus.empty() ? scale_loads(sc.case_ref, scale.factor)
                                          : scale_loads(sc.case_ref, scale.per_bus);
    for (const auto& tr : trips) c = trip_branch(c, tr.from_bus, tr.to_bus);
    return c;
  };

  double residual = record(0.0, y);
  bool stop = false;
  for (std::size_t seg = 0; seg <= sc.events.size() && !stop; ++seg) {
    const bool final_segment = seg == sc.events.size();
    const double t_end = final_segment ? sc.horizon : sc.events[seg].time;
    if (final_segment && sc.options.stop_at_equilibrium && residual < sc.options.equilibrium_tol) break;

    while (t < t_end && !stop) {
      double t_stop = t_end;
      if (sc.controller_period > 0.0) {
        const double next = (std::floor(t / sc.controller_period + 1e-9) + 1.0) * sc.controller_period;
        t_stop = std::min(t_end, next);
        loop.hold(plant.measure(loop.clamped(y).q));
      }
      const auto stats = integrator.integrate(t, y, t_stop, [&](double tt, const Eigen::VectorXd& yy) {
        residual = record(tt, yy);
        return !(final_segment && sc.options.stop_at_equilibrium && residual < sc.options.equilibrium_tol);
      });
      res.stats.accepted += stats.accepted;
      res.stats.rejected += stats.rejected;
      res.stats.rhs_evals += stats.rhs_evals;
      t = stats.t;
      stop = stats.stopped_by_observer;
      if (sc.controller_period > 0.0) {
        loop.hold(std::nullopt);
        integrator.reset_step();
      }
    }
    if (final_segment || stop) break;

    const Event& ev = sc.events[seg];
    std::string label;
    if (const auto* tr = std::get_if<TripBranch>(&ev.action)) {
      label = fmt::format("before trip {}-{}", tr->from_bus, tr->to_bus);
      trips.push_back(*tr);
    } else {
      label = "before load change";
      scale = std::get<SetLoadScale>(ev.action);
    }
    milestone(label);
    const ControllerState s = loop.clamped(y);
    NetworkCase next = rebuild_case();
    try {
      plant.reset(std::move(next), s.q);
    } catch (const SimulationError& e) {
      throw SimulationError(fmt::format("after event at t = {}: {}", ev.time, e.what()));
    }
    integrator.reset_step();
    const Eigen::VectorXd v = plant.measure(s.q);
    residual = loop.residual(s, v);
  }

  res.stats.t = t;
  res.final_state = loop.clamped(y);
  res.final_q = res.final_state.q;
  res.final_v = plant.all_bus_voltages(res.final_q);
  res.final_residual = loop.residual(res.final_state, plant.measure(res.final_q));
  res.converged = res.final_residual < sc.options.equilibrium_tol;
  res.final_case = plant.network();
  res.partition = plant.partition();
  milestone("final");

  auto& viol = res.violations;
  viol.min_multiplier = HUGE_VAL;
  for (const auto& s : res.trajectory.samples) {
    viol.max_v_over = std::max(viol.max_v_over, (s.v - sc.limits.v_hi).maxCoeff());
    viol.max_v_under = std::max(viol.max_v_under, (sc.limits.v_lo - s.v).maxCoeff());
    if (s.state.q.size()) {
      viol.max_q_over = std::max(viol.max_q_over, (s.state.q - sc.limits.q_hi).maxCoeff());
      viol.max_q_under = std::max(viol.max_q_under, (sc.limits.q_lo - s.state.q).maxCoeff());
    }
    viol.min_multiplier = std::min(viol.min_multiplier, s.state.min_multiplier());
  }
  return res;
}

struct RunOptions {
  PlantMode plant_mode = PlantMode::NonlinearPF;
  double horizon = 1e5;
  double controller_period = 0.0;
  SimOptions sim{};
};

/// Constant load: integrate from the zero state until equilibrium or the horizon.
inline SimulationResult run_static(const NetworkCase& c, const Limits& lim, const Gains& gains,
                                   double tol = 1e-6, const RunOptions& opt = {}) {
  Scenario sc{c, opt.plant_mode, lim, gains, {}, opt.horizon, opt.controller_period, zero_state(c), opt.sim};
  sc.options.equilibrium_tol = tol;
  return integrate(sc);
}

struct FaultReport {
  SimulationResult result;
  double pre_cost = 0.0;
  double post_cost = 0.0;
  Eigen::VectorXd pre_q;
  Eigen::VectorXd post_q;
  double pre_residual = 0.0;

  double cost_ratio() const { return pre_cost > 0.0 ? post_cost / pre_cost : HUGE_VAL; }
};

/// Line trip at t_trip, then integration for `post_horizon` more seconds (or to equilibrium).
inline FaultReport run_fault(const NetworkCase& c, const Limits& lim, const Gains& gains, TripBranch trip,
                             double t_trip, const RunOptions& opt = {}) {
  trip_branch(c, trip.from_bus, trip.to_bus);  // fail fast on bad trips
  Scenario sc{c, opt.plant_mode, lim, gains, {Event{t_trip, trip}}, t_trip + opt.horizon,
              opt.controller_period, zero_state(c), opt.sim};
  FaultReport rep;
  rep.result = integrate(sc);
  const Milestone& pre = rep.result.milestones.front();
  rep.pre_cost = pre.cost;
  rep.pre_q = pre.state.q;
  rep.pre_residual = pre.residual;
  rep.post_cost = objective(rep.result.final_q);
  rep.post_q = rep.result.final_q;
  return rep;
}

struct DailyOptions {
  RunOptions run{};                // run.horizon is ignored; `window` applies per hour
  double window = 3600.0;          // controller time per hour, s
  bool reset_multipliers = false;  // restart duals each hour instead of warm-starting
};

struct HourResult {
  int hour = 0;  // 1-based
  double load_scale = 1.0;
  Eigen::VectorXd v_uncontrolled;  // all buses, no controller output
  Eigen::VectorXd v_controlled;    // all buses, end of the hour
  Eigen::VectorXd q;
  double cost = 0.0;
  bool converged = false;
  double residual = 0.0;
};

struct DailyResult {
  std::vector<HourResult> hours;
  SimulationResult combined;  // trajectory concatenated over hours, t offset by hour * window
};

inline DailyResult run_daily(const NetworkCase& c, const Limits& lim, const Gains& gains,
                             const std::vector<double>& profile, const DailyOptions& opt = {}) {
  if (profile.size() != 24) throw std::invalid_argument("daily profile needs 24 hourly factors");
  for (double f : profile) {
    if (!(f >= 0.0)) throw std::invalid_argument("daily profile factors must be >= 0");
  }
  DailyResult out;
  ControllerState state = zero_state(c);
  for (int h = 0; h < 24; ++h) {
    const NetworkCase ch = scale_loads(c, profile[h]);
    if (opt.reset_multipliers && h > 0) {
      const auto q = state.q;
      state = zero_state(c);
      state.q = q;
    }
    Scenario sc{ch, opt.run.plant_mode, lim, gains, {}, opt.window, opt.run.controller_period, state,
                opt.run.sim};
    SimulationResult r;
    try {
      r = integrate(sc);
    } catch (const SimulationError& e) {
      throw SimulationError(fmt::format("hour {}: {}", h + 1, e.what()));
    }

    HourResult hr;
    hr.hour = h + 1;
    hr.load_scale = profile[h];
    {
      Plant uncontrolled(ch, PlantMode::NonlinearPF, opt.run.sim.power_flow,
                         Eigen::VectorXd::Zero(state.q.size()));
      hr.v_uncontrolled = uncontrolled.all_bus_voltages(Eigen::VectorXd::Zero(state.q.size()));
    }
    hr.v_controlled = r.final_v;
    hr.q = r.final_q;
    hr.cost = objective(r.final_q);
    hr.converged = r.converged;
    hr.residual = r.final_residual;
    out.hours.push_back(hr);

    const double offset = h * opt.window;
    auto& samples = out.combined.trajectory.samples;
    for (auto s : r.trajectory.samples) {
      s.t += offset;
      if (!samples.empty() && s.t <= samples.back().t) continue;
      samples.push_back(std::move(s));
    }
    if (h == 0) out.combined.initial_v = r.initial_v;
    for (auto ms : r.milestones) {
      ms.t += offset;
      ms.label = fmt::format("hour {} {}", h + 1, ms.label);
      out.combined.milestones.push_back(std::move(ms));
    }
    auto& v = out.combined.violations;
    if (h == 0) v = r.violations;
    v.max_v_over = std::max(v.max_v_over, r.violations.max_v_over);
    v.max_v_under = std::max(v.max_v_under, r.violations.max_v_under);
    v.max_q_over = std::max(v.max_q_over, r.violations.max_q_over);
    v.max_q_under = std::max(v.max_q_under, r.violations.max_q_under);
    v.min_multiplier = std::min(v.min_multiplier, r.violations.min_multiplier);
    out.combined.stats.accepted += r.stats.accepted;
    out.combined.stats.rejected += r.stats.rejected;
    out.combined.stats.rhs_evals += r.stats.rhs_evals;
    out.combined.final_v = r.final_v;
    out.combined.final_q = r.final_q;
    out.combined.final_state = r.final_state;
    out.combined.final_residual = r.final_residual;
    out.combined.final_case = r.final_case;
    out.combined.partition = r.partition;
    state = r.final_state;
  }
  out.combined.converged = std::all_of(out.hours.begin(), out.hours.end(),
                                       [](const HourResult& h) { return h.converged; });
  return out;
}

}  // namespace voltctl
