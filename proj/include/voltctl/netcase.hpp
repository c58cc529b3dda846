#pragma once

// Grid case model: MATPOWER-subset parser/writer, Y-bus assembly and
// topology/load edits. Everything here is per-unit on NetworkCase::base_mva.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "voltctl/error.hpp"

namespace voltctl {

enum class BusKind { Slack, PV, PQ };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double p_load = 0.0;   // pu
  double q_load = 0.0;   // pu
  double g_shunt = 0.0;  // pu conductance at V = 1
  double b_shunt = 0.0;  // pu susceptance at V = 1
  double v_setpoint = 1.0;
  bool has_controller = false;
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_sh = 0.0;  // total line charging
  double tap_ratio = 1.0;
  bool in_service = true;
};

struct Generator {
  int bus = 0;
  double p_gen = 0.0;  // pu
  double q_gen = 0.0;  // pu, informational only
  double v_setpoint = 1.0;
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;

  std::size_t size() const noexcept { return buses.size(); }

  /// Row index of a bus id; throws SemanticError for unknown ids.
  std::size_t index_of(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
      if (buses[i].id == bus_id) return i;
    }
    throw SemanticError(fmt::format("unknown bus id {}", bus_id));
  }

  std::size_t slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
      if (buses[i].kind == BusKind::Slack) return i;
    }
    throw SemanticError("case has no slack bus");
  }
};

struct AdmittanceMatrices {
  Eigen::MatrixXd g;
  Eigen::MatrixXd b;
  std::map<int, std::size_t> bus_index;

  Eigen::MatrixXcd complex() const {
    Eigen::MatrixXcd y(g.rows(), g.cols());
    y.real() = g;
    y.imag() = b;
    return y;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Drops a trailing %-comment, ignoring '%' inside single-quoted strings.
inline std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\'') quoted = !quoted;
    if (line[i] == '%' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline double parse_number(std::string_view tok, int line) {
  std::string s(tok);
  if (s == "Inf" || s == "inf") return HUGE_VAL;
  if (s == "-Inf" || s == "-inf") return -HUGE_VAL;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw ParseError(line, fmt::format("invalid number '{}'", s));
  }
  return v;
}

using NumericMatrix = std::vector<std::vector<double>>;

struct RawCase {
  std::string name;
  std::optional<double> base_mva;
  std::map<std::string, NumericMatrix> matrices;
  std::map<std::string, int> matrix_lines;
};

inline RawCase read_raw(std::string_view text) {
  RawCase raw;
  enum class Mode { Top, Matrix, Cell } mode = Mode::Top;
  std::string current;
  std::vector<double> row;
  int line_no = 0;
  std::size_t pos = 0;

  auto flush_row = [&] {
    if (!row.empty()) {
      raw.matrices[current].push_back(row);
      row.clear();
    }
  };

  // Consumes matrix body text; returns the remainder after ']' or npos.
  auto consume_matrix = [&](std::string_view body) -> std::optional<std::string_view> {
    std::size_t i = 0;
    while (i < body.size()) {
      const char c = body[i];
      if (c == ' ' || c == '\t' || c == ',' || c == '\r') {
        ++i;
      } else if (c == ';') {
        flush_row();
        ++i;
      } else if (c == ']') {
        flush_row();
        return body.substr(i + 1);
      } else {
        std::size_t j = i;
        while (j < body.size() && body[j] != ' ' && body[j] != '\t' && body[j] != ',' &&
               body[j] != ';' && body[j] != ']' && body[j] != '\r') {
          ++j;
        }
        row.push_back(parse_number(body.substr(i, j - i), line_no));
        i = j;
      }
    }
    flush_row();  // a newline also ends a row
    return std::nullopt;
  };

  auto expect_terminator = [&](std::string_view rest) {
    rest = trim(rest);
    if (!rest.empty() && rest != ";") {
      throw ParseError(line_no, fmt::format("unexpected text '{}' after block", std::string(rest)));
    }
  };

  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    line = trim(strip_comment(line));

    if (mode == Mode::Matrix) {
      if (auto rest = consume_matrix(line)) {
        expect_terminator(*rest);
        mode = Mode::Top;
      }
      continue;
    }
    if (mode == Mode::Cell) {
      bool quoted = false;
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\'') quoted = !quoted;
        if (line[i] == '}' && !quoted) {
          expect_terminator(line.substr(i + 1));
          mode = Mode::Top;
          break;
        }
      }
      continue;
    }

    if (line.empty()) continue;
    if (line.starts_with("function")) {
      const auto eq = line.find('=');
      raw.name = std::string(trim(eq == std::string_view::npos ? line.substr(8) : line.substr(eq + 1)));
      continue;
    }
    if (!line.starts_with("mpc.")) {
      throw ParseError(line_no, fmt::format("unrecognized statement '{}'", std::string(line)));
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(line_no, "expected '=' in assignment");
    }
    const std::string field(trim(line.substr(4, eq - 4)));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.starts_with("[")) {
      if (raw.matrices.count(field)) {
        throw ParseError(line_no, fmt::format("duplicate block mpc.{}", field));
      }
      current = field;
      raw.matrices[field];
      raw.matrix_lines[field] = line_no;
      if (auto rest = consume_matrix(value.substr(1))) {
        expect_terminator(*rest);
      } else {
        mode = Mode::Matrix;
      }
    } else if (value.starts_with("{")) {
      mode = Mode::Cell;
      bool quoted = false;
      for (std::size_t i = 1; i < value.size(); ++i) {
        if (value[i] == '\'') quoted = !quoted;
        if (value[i] == '}' && !quoted) {
          mode = Mode::Top;
          break;
        }
      }
    } else if (field == "baseMVA") {
      if (value.ends_with(";")) value.remove_suffix(1);
      raw.base_mva = parse_number(trim(value), line_no);
    } else if (field == "version") {
      // only format version 2 column layouts are supported
      if (value.find('2') == std::string_view::npos) {
        throw ParseError(line_no, "only MATPOWER case format version 2 is supported");
      }
    } else {
      // other scalar assignments (e.g. mpc.f) are ignored
    }
  }
  if (mode != Mode::Top) {
    throw ParseError(line_no, "unterminated block at end of input");
  }
  return raw;
}

inline bool is_connected(const NetworkCase& c) {
  if (c.buses.empty()) return false;
  std::map<int, std::vector<int>> adj;
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    adj[br.from_bus].push_back(br.to_bus);
    adj[br.to_bus].push_back(br.from_bus);
  }
  std::set<int> seen{c.buses.front().id};
  std::queue<int> frontier;
  frontier.push(c.buses.front().id);
  while (!frontier.empty()) {
    const int b = frontier.front();
    frontier.pop();
    for (int n : adj[b]) {
      if (seen.insert(n).second) frontier.push(n);
    }
  }
  return seen.size() == c.buses.size();
}

}  // namespace detail

/// Checks every NetworkCase invariant; throws SemanticError on the first violation.
inline void validate_case(const NetworkCase& c) {
  if (!(c.base_mva > 0.0)) throw SemanticError("baseMVA must be positive");
  if (c.buses.empty()) throw SemanticError("case has no buses");
  std::set<int> ids;
  int slack_count = 0;
  for (const auto& b : c.buses) {
    if (!ids.insert(b.id).second) throw SemanticError(fmt::format("duplicate bus id {}", b.id));
    if (b.kind == BusKind::Slack) ++slack_count;
    if (b.kind != BusKind::PQ && !(b.v_setpoint > 0.0)) {
      throw SemanticError(fmt::format("bus {} needs a positive voltage setpoint", b.id));
    }
    if (b.has_controller && b.kind != BusKind::PQ) {
      throw SemanticError(fmt::format("controller placed on non-load bus {}", b.id));
    }
  }
  if (slack_count != 1) {
    throw SemanticError(fmt::format("case must have exactly one slack bus, found {}", slack_count));
  }
  for (const auto& br : c.branches) {
    if (!ids.count(br.from_bus) || !ids.count(br.to_bus)) {
      throw SemanticError(
          fmt::format("branch {}-{} references a missing bus", br.from_bus, br.to_bus));
    }
    if (br.from_bus == br.to_bus) {
      throw SemanticError(fmt::format("branch {}-{} is a self loop", br.from_bus, br.to_bus));
    }
    if (br.in_service && br.x == 0.0) {
      throw SemanticError(fmt::format("branch {}-{} has zero reactance", br.from_bus, br.to_bus));
    }
    if (!(br.tap_ratio > 0.0)) {
      throw SemanticError(fmt::format("branch {}-{} has non-positive tap", br.from_bus, br.to_bus));
    }
  }
  for (const auto& g : c.generators) {
    if (!ids.count(g.bus)) throw SemanticError(fmt::format("generator at missing bus {}", g.bus));
    if (c.buses[c.index_of(g.bus)].kind == BusKind::PQ) {
      throw SemanticError(fmt::format("generator at bus {} which is not slack or PV", g.bus));
    }
  }
}

/// Parses the supported MATPOWER subset. Loads become per-unit; every PQ bus
/// gets a controller. Generator cost data and cell arrays are skipped.
inline NetworkCase parse_case(std::string_view text) {
  const detail::RawCase raw = detail::read_raw(text);
  if (!raw.base_mva) throw ParseError(0, "missing mpc.baseMVA");
  for (const char* required : {"bus", "gen", "branch"}) {
    if (!raw.matrices.count(required)) throw ParseError(0, fmt::format("missing mpc.{}", required));
  }
  auto check_width = [&](const std::string& name, std::size_t width) {
    const auto& m = raw.matrices.at(name);
    const int first_line = raw.matrix_lines.at(name);
    for (std::size_t r = 0; r < m.size(); ++r) {
      if (m[r].size() < width) {
        throw ParseError(first_line, fmt::format("mpc.{} row {} has {} columns, need at least {}",
                                                 name, r + 1, m[r].size(), width));
      }
    }
  };
  check_width("bus", 13);
  check_width("gen", 8);
  check_width("branch", 11);

  NetworkCase c;
  c.name = raw.name;
  c.base_mva = *raw.base_mva;
  if (!(c.base_mva > 0.0)) throw SemanticError("baseMVA must be positive");
  const double base = c.base_mva;

  for (const auto& row : raw.matrices.at("bus")) {
    Bus b;
    b.id = static_cast<int>(row[0]);
    switch (static_cast<int>(row[1])) {
      case 1: b.kind = BusKind::PQ; break;
      case 2: b.kind = BusKind::PV; break;
      case 3: b.kind = BusKind::Slack; break;
      default:
        throw SemanticError(fmt::format("bus {} has unsupported type {}", b.id, row[1]));
    }
    b.p_load = row[2] / base;
    b.q_load = row[3] / base;
    b.g_shunt = row[4] / base;
    b.b_shunt = row[5] / base;
    b.v_setpoint = row[7];
    b.has_controller = b.kind == BusKind::PQ;
    c.buses.push_back(b);
  }

  std::set<int> ids;
  for (const auto& b : c.buses) {
    if (!ids.insert(b.id).second) throw SemanticError(fmt::format("duplicate bus id {}", b.id));
  }

  for (const auto& row : raw.matrices.at("gen")) {
    if (row[7] <= 0.0) continue;  // out of service
    Generator g;
    g.bus = static_cast<int>(row[0]);
    g.p_gen = row[1] / base;
    g.q_gen = row[2] / base;
    g.v_setpoint = row[5];
    if (!ids.count(g.bus)) throw SemanticError(fmt::format("generator at missing bus {}", g.bus));
    c.generators.push_back(g);
  }
  // Generator Vg is the regulated magnitude at slack/PV buses.
  for (auto& b : c.buses) {
    if (b.kind == BusKind::PQ) continue;
    const auto it = std::find_if(c.generators.begin(), c.generators.end(),
                                 [&](const Generator& g) { return g.bus == b.id; });
    if (it == c.generators.end()) {
      throw SemanticError(fmt::format("bus {} is slack/PV but has no in-service generator", b.id));
    }
    b.v_setpoint = it->v_setpoint;
  }

  for (const auto& row : raw.matrices.at("branch")) {
    Branch br;
    br.from_bus = static_cast<int>(row[0]);
    br.to_bus = static_cast<int>(row[1]);
    br.r = row[2];
    br.x = row[3];
    br.b_sh = row[4];
    br.tap_ratio = row[8] == 0.0 ? 1.0 : row[8];
    br.in_service = row[10] > 0.0;
    if (row[9] != 0.0) {
      throw SemanticError(fmt::format("branch {}-{}: phase shifters are not supported",
                                      br.from_bus, br.to_bus));
    }
    c.branches.push_back(br);
  }

  validate_case(c);
  return c;
}

/// Writes the case back in the same MATPOWER subset (exact doubles, %.17g).
inline std::string serialize_case(const NetworkCase& c) {
  const double base = c.base_mva;
  std::string out;
  out += fmt::format("function mpc = {}\n", c.name.empty() ? "case" : c.name);
  out += "mpc.version = '2';\n";
  out += fmt::format("mpc.baseMVA = {:.17g};\n\n", base);
  out += "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n";
  out += "mpc.bus = [\n";
  for (const auto& b : c.buses) {
    const int type = b.kind == BusKind::Slack ? 3 : b.kind == BusKind::PV ? 2 : 1;
    out += fmt::format("\t{}\t{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t1\t{:.17g}\t0\t0\t1\t1.1\t0.9;\n",
                       b.id, type, b.p_load * base, b.q_load * base, b.g_shunt * base,
                       b.b_shunt * base, b.v_setpoint);
  }
  out += "];\n\n";
  out += "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n";
  out += "mpc.gen = [\n";
  for (const auto& g : c.generators) {
    out += fmt::format("\t{}\t{:.17g}\t{:.17g}\t0\t0\t{:.17g}\t{:.17g}\t1\t0\t0;\n", g.bus,
                       g.p_gen * base, g.q_gen * base, g.v_setpoint, base);
  }
  out += "];\n\n";
  out += "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n";
  out += "mpc.branch = [\n";
  for (const auto& br : c.branches) {
    out += fmt::format("\t{}\t{}\t{:.17g}\t{:.17g}\t{:.17g}\t0\t0\t0\t{:.17g}\t0\t{}\t-360\t360;\n",
                       br.from_bus, br.to_bus, br.r, br.x, br.b_sh,
                       br.tap_ratio == 1.0 ? 0.0 : br.tap_ratio, br.in_service ? 1 : 0);
  }
  out += "];\n";
  return out;
}

/// Standard Y-bus: series admittance 1/(r + jx), half charging per terminal,
/// off-nominal tap on the from side, bus shunts on the diagonal.
inline AdmittanceMatrices build_admittance(const NetworkCase& c) {
  const auto n = static_cast<Eigen::Index>(c.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  AdmittanceMatrices adm;
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    adm.bus_index[c.buses[i].id] = i;
    y(i, i) += std::complex<double>(c.buses[i].g_shunt, c.buses[i].b_shunt);
  }
  for (const auto& br : c.branches) {
    if (!br.in_service) continue;
    const auto f = static_cast<Eigen::Index>(adm.bus_index.at(br.from_bus));
    const auto t = static_cast<Eigen::Index>(adm.bus_index.at(br.to_bus));
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> charging(0.0, br.b_sh / 2.0);
    const double tap = br.tap_ratio;
    y(f, f) += (ys + charging) / (tap * tap);
    y(t, t) += ys + charging;
    y(f, t) -= ys / tap;
    y(t, f) -= ys / tap;
  }
  adm.g = y.real();
  adm.b = y.imag();
  return adm;
}

/// Copy of the case with one in-service branch joining the two buses taken out.
inline NetworkCase trip_branch(const NetworkCase& c, int from_bus, int to_bus) {
  NetworkCase out = c;
  auto it = std::find_if(out.branches.begin(), out.branches.end(), [&](const Branch& br) {
    return br.in_service && ((br.from_bus == from_bus && br.to_bus == to_bus) ||
                             (br.from_bus == to_bus && br.to_bus == from_bus));
  });
  if (it == out.branches.end()) {
    throw TopologyError(fmt::format("no in-service branch between {} and {}", from_bus, to_bus));
  }
  it->in_service = false;
  if (!detail::is_connected(out)) {
    throw TopologyError(
        fmt::format("tripping branch {}-{} would island part of the network", from_bus, to_bus));
  }
  return out;
}

/// Multiplies p_load and q_load at every PQ bus.
inline NetworkCase scale_loads(const NetworkCase& c, double factor) {
  if (!(factor >= 0.0)) throw std::invalid_argument("load scale factor must be >= 0");
  NetworkCase out = c;
  for (auto& b : out.buses) {
    if (b.kind != BusKind::PQ) continue;
    b.p_load *= factor;
    b.q_load *= factor;
  }
  return out;
}

/// Per-bus variant; buses absent from the map keep their load. Only PQ buses may be named.
inline NetworkCase scale_loads(const NetworkCase& c, const std::map<int, double>& factors) {
  NetworkCase out = c;
  for (const auto& [id, factor] : factors) {
    if (!(factor >= 0.0)) {
      throw std::invalid_argument(fmt::format("load scale for bus {} must be >= 0", id));
    }
    auto& b = out.buses[out.index_of(id)];
    if (b.kind != BusKind::PQ) {
      throw std::invalid_argument(fmt::format("bus {} is not a load bus", id));
    }
    b.p_load *= factor;
    b.q_load *= factor;
  }
  return out;
}

inline bool is_connected(const NetworkCase& c) { return detail::is_connected(c); }

}  // namespace voltctl
