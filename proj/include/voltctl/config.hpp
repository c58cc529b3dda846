#pragma once

// Plain-text run configuration.
//
//   # comment
//   case = data/case14.m
//   scenario = fault
//   trip = 4:5@20000
//
// One `key = value` per line. Unknown keys are rejected so that a typo never
// silently falls back to a default. Reactive limits are in pu on the case base.

#include <cctype>
#include <cmath>
#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "voltctl/error.hpp"
#include "voltctl/sim.hpp"

namespace voltctl {

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ScenarioKind { Static, Fault, Daily, PowerFlow, Sensitivity, Validate };

struct TripSpec {
  int from_bus = 0;
  int to_bus = 0;
  double time = 0.0;
};

struct RunConfig {
  std::string case_path;
  ScenarioKind scenario_kind = ScenarioKind::Static;
  PlantMode plant_mode = PlantMode::NonlinearPF;
  double v_lo = 0.95, v_hi = 1.05;
  double q_lo = -0.2, q_hi = 0.2;
  Gains gains;
  double load_scale = 1.0;
  std::optional<TripSpec> trip;
  std::vector<double> profile;  // 24 factors, empty unless set
  std::string profile_path;
  std::string output_dir = "out";
  double equilibrium_tol = 1e-6;
  double rtol = 1e-6;
  double atol = 1e-8;
  double pf_tol = 1e-8;
  double horizon = 1e5;
  double window = 3600.0;
  double controller_period = 0.0;
  bool reset_multipliers = false;

  Limits limits(const NetworkCase& c) const { return default_limits(c, v_lo, v_hi, q_lo, q_hi); }

  RunOptions run_options() const {
    RunOptions o;
    o.plant_mode = plant_mode;
    o.horizon = horizon;
    o.controller_period = controller_period;
    o.sim.equilibrium_tol = equilibrium_tol;
    o.sim.integrator.rtol = rtol;
    o.sim.integrator.atol = atol;
    o.sim.power_flow.tol = pf_tol;
    return o;
  }
};

namespace detail {

inline std::string_view trim_config(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline double config_number(std::string_view v, int line, std::string_view key) {
  v = trim_config(v);
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError(fmt::format("line {}: `{}` expects a number, got `{}`", line, key, v));
  }
  return x;
}

inline int config_int(std::string_view v, int line, std::string_view key) {
  v = trim_config(v);
  int x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(fmt::format("line {}: `{}` expects an integer, got `{}`", line, key, v));
  }
  return x;
}

inline bool config_bool(std::string_view v, int line, std::string_view key) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(fmt::format("line {}: `{}` expects true or false, got `{}`", line, key, v));
}

}  // namespace detail

/// `a:b@t`, e.g. `4:5@20000`.
inline TripSpec parse_trip(std::string_view text, int line = 0) {
  const auto colon = text.find(':');
  const auto at = text.find('@');
  if (colon == std::string_view::npos || at == std::string_view::npos || at < colon) {
    throw ConfigError(fmt::format("line {}: trip must look like a:b@t, got `{}`", line, text));
  }
  TripSpec t;
  t.from_bus = detail::config_int(text.substr(0, colon), line, "trip");
  t.to_bus = detail::config_int(text.substr(colon + 1, at - colon - 1), line, "trip");
  t.time = detail::config_number(text.substr(at + 1), line, "trip");
  if (t.time < 0.0) throw ConfigError(fmt::format("line {}: trip time must be >= 0", line));
  return t;
}

/// Whitespace or comma separated numbers; `#` starts a comment.
inline std::vector<double> parse_profile(std::string_view text) {
  std::vector<double> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    for (char& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream row(line);
    std::string tok;
    while (row >> tok) out.push_back(detail::config_number(tok, n, "profile"));
  }
  return out;
}

inline void validate_config(const RunConfig& cfg);

inline RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::map<std::string, int> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = detail::trim_config(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}: expected `key = value`, got `{}`", line_no, line));
    }
    std::string key(detail::trim_config(line.substr(0, eq)));
    const std::string_view val = detail::trim_config(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(fmt::format("line {}: missing key", line_no));
    if (val.empty()) throw ConfigError(fmt::format("line {}: `{}` has no value", line_no, key));

    static const std::map<std::string, std::string> aliases{
        {"vmin", "v_lo"}, {"vmax", "v_hi"}, {"qmin", "q_lo"}, {"qmax", "q_hi"}, {"case_path", "case"},
        {"output_dir", "out"}};
    if (const auto a = aliases.find(key); a != aliases.end()) key = a->second;
    if (const auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(fmt::format("line {}: `{}` already set on line {}", line_no, key, it->second));
    }

    auto num = [&] { return detail::config_number(val, line_no, key); };
    if (key == "case") {
      cfg.case_path = std::string(val);
    } else if (key == "scenario") {
      static const std::map<std::string_view, ScenarioKind> kinds{
          {"static", ScenarioKind::Static},       {"fault", ScenarioKind::Fault},
          {"daily", ScenarioKind::Daily},         {"powerflow", ScenarioKind::PowerFlow},
          {"sensitivity", ScenarioKind::Sensitivity}, {"validate", ScenarioKind::Validate}};
      const auto it = kinds.find(val);
      if (it == kinds.end()) throw ConfigError(fmt::format("line {}: unknown scenario `{}`", line_no, val));
      cfg.scenario_kind = it->second;
    } else if (key == "plant") {
      if (val == "nonlinear") {
        cfg.plant_mode = PlantMode::NonlinearPF;
      } else if (val == "linear") {
        cfg.plant_mode = PlantMode::Linear;
      } else {
        throw ConfigError(fmt::format("line {}: plant must be nonlinear or linear, got `{}`", line_no, val));
      }
    } else if (key == "v_lo") {
      cfg.v_lo = num();
    } else if (key == "v_hi") {
      cfg.v_hi = num();
    } else if (key == "q_lo") {
      cfg.q_lo = num();
    } else if (key == "q_hi") {
      cfg.q_hi = num();
    } else if (key == "k_q") {
      cfg.gains.k_q = num();
    } else if (key == "k_lam") {
      cfg.gains.k_lam = num();
    } else if (key == "k_mu") {
      cfg.gains.k_mu = num();
    } else if (key == "load_scale") {
      cfg.load_scale = num();
    } else if (key == "trip") {
      cfg.trip = parse_trip(val, line_no);
    } else if (key == "profile") {
      cfg.profile = parse_profile(val);
    } else if (key == "profile_file") {
      cfg.profile_path = std::string(val);
    } else if (key == "out") {
      cfg.output_dir = std::string(val);
    } else if (key == "equilibrium_tol") {
      cfg.equilibrium_tol = num();
    } else if (key == "rtol") {
      cfg.rtol = num();
    } else if (key == "atol") {
      cfg.atol = num();
    } else if (key == "pf_tol") {
      cfg.pf_tol = num();
    } else if (key == "horizon") {
      cfg.horizon = num();
    } else if (key == "window") {
      cfg.window = num();
    } else if (key == "controller_period") {
      cfg.controller_period = num();
    } else if (key == "reset_multipliers") {
      cfg.reset_multipliers = detail::config_bool(val, line_no, key);
    } else {
      throw ConfigError(fmt::format("line {}: unknown key `{}`", line_no, key));
    }
  }
  validate_config(cfg);
  return cfg;
}

/// Range checks that do not need the case file.
inline void validate_config(const RunConfig& cfg) {
  if (!(cfg.v_lo < cfg.v_hi)) throw ConfigError("need v_lo < v_hi");
  if (!(cfg.v_lo > 0.0)) throw ConfigError("v_lo must be positive");
  if (!(cfg.q_lo < cfg.q_hi)) throw ConfigError("need q_lo < q_hi");
  if (!(cfg.gains.k_q > 0.0 && cfg.gains.k_lam > 0.0 && cfg.gains.k_mu > 0.0)) {
    throw ConfigError("gains must be positive");
  }
  if (!(cfg.load_scale >= 0.0)) throw ConfigError("load_scale must be >= 0");
  for (const double x : {cfg.equilibrium_tol, cfg.rtol, cfg.atol, cfg.pf_tol, cfg.horizon, cfg.window}) {
    if (!(x > 0.0)) throw ConfigError("tolerances, horizon and window must be positive");
  }
  if (cfg.controller_period < 0.0) throw ConfigError("controller_period must be >= 0");
  if (!cfg.profile.empty() && cfg.profile.size() != 24) {
    throw ConfigError(fmt::format("profile needs 24 factors, got {}", cfg.profile.size()));
  }
  if (!cfg.profile.empty() && !cfg.profile_path.empty()) {
    throw ConfigError("set either profile or profile_file, not both");
  }
  if (cfg.scenario_kind == ScenarioKind::Fault && !cfg.trip) throw ConfigError("fault scenario needs `trip`");
}

}  // namespace voltctl
