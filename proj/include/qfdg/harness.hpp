#pragma once

// Error measurement, convergence tables, CSV and VTK output, run
// configuration.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qfdg/solver.hpp"

namespace qfdg {

struct ErrorReport {
  int order = 0;
  int level = 0;
  std::size_t elements = 0;
  double err_xi = 0.0;
  double err_U = 0.0;
  double err_V = 0.0;
};

/// L2 errors against the analytic solution at time t, integrated per
/// element with a rule exact to degree 2k + 2.
inline ErrorReport l2_error(const Solver& solver, const State& s, double t) {
  const Scenario& scn = solver.scenario();
  if (!scn.exact) throw ConfigError("scenario '" + scn.name + "' has no analytic solution");
  const int K = solver.basis_size();
  const TriangleRule rule = triangle_rule(2 * solver.order() + 2);
  std::vector<double> phi(rule.weights.size() * static_cast<std::size_t>(K));
  for (std::size_t q = 0; q < rule.weights.size(); ++q) {
    solver.basis().values(rule.points[q][0], rule.points[q][1],
                          std::span<double>(&phi[q * static_cast<std::size_t>(K)], static_cast<std::size_t>(K)));
  }
  std::array<double, 3> sum{};
  for (std::size_t e = 0; e < s.E; ++e) {
    const auto& g = solver.geometry().elements[e];
    std::array<double, 3> part{};
    for (std::size_t q = 0; q < rule.weights.size(); ++q) {
      auto x = g.map(rule.points[q][0], rule.points[q][1]);
      Triple ex = scn.exact(x[0], x[1], t);
      std::array<double, 3> exv{ex.xi, ex.U, ex.V};
      for (int j = 0; j < 3; ++j) {
        auto c = s.conserved(e, j);
        double v = 0.0;
        for (int i = 0; i < K; ++i) {
          v += c[static_cast<std::size_t>(i)] * phi[q * static_cast<std::size_t>(K) + static_cast<std::size_t>(i)];
        }
        double d = v / g.sqrtDetB - exv[static_cast<std::size_t>(j)];
        part[static_cast<std::size_t>(j)] += rule.weights[q] * d * d;
      }
    }
    for (std::size_t j = 0; j < 3; ++j) sum[j] += part[j] * g.detB;
  }
  ErrorReport r;
  r.order = solver.order();
  r.elements = s.E;
  r.err_xi = std::sqrt(sum[0]);
  r.err_U = std::sqrt(sum[1]);
  r.err_V = std::sqrt(sum[2]);
  return r;
}

/// log2(coarse / fine).
inline double eoc(double coarse, double fine) { return std::log2(coarse / fine); }

struct ConvergenceTable {
  std::vector<ErrorReport> rows;
  std::string failure;  // message of the level that aborted the study, if any

  /// EOC between row i-1 and row i for component 0 (xi), 1 (U), 2 (V).
  std::optional<double> rate(std::size_t i, int component) const {
    if (i == 0 || i >= rows.size()) return std::nullopt;
    auto pick = [component](const ErrorReport& r) {
      return component == 0 ? r.err_xi : (component == 1 ? r.err_U : r.err_V);
    };
    return eoc(pick(rows[i - 1]), pick(rows[i]));
  }
};

namespace detail {

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kCsvHeader = "order,level,elements,err_xi,eoc_xi,err_U,eoc_U,err_V,eoc_V";

inline void write_csv(const ConvergenceTable& t, std::ostream& os) {
  os << kCsvHeader << "\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    auto rate = [&](int c) {
      auto v = t.rate(i, c);
      return v ? detail::format_g17(*v) : std::string();
    };
    os << r.order << ',' << r.level << ',' << r.elements << ',' << detail::format_g17(r.err_xi)
       << ',' << rate(0) << ',' << detail::format_g17(r.err_U) << ',' << rate(1) << ','
       << detail::format_g17(r.err_V) << ',' << rate(2) << "\n";
  }
}

/// Parses the CSV written by write_csv. EOC columns are recomputed, not read.
inline ConvergenceTable read_csv(std::istream& is) {
  ConvergenceTable t;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line) || (++lineno, line != kCsvHeader)) {
    throw ParseError(1, "expected header '" + std::string(kCsvHeader) + "'");
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (line.back() == ',') cols.emplace_back();
    if (cols.size() != 9) throw ParseError(lineno, "expected 9 columns");
    try {
      ErrorReport r;
      r.order = std::stoi(cols[0]);
      r.level = std::stoi(cols[1]);
      r.elements = std::stoull(cols[2]);
      r.err_xi = std::stod(cols[3]);
      r.err_U = std::stod(cols[5]);
      r.err_V = std::stod(cols[7]);
      t.rows.push_back(r);
    } catch (const std::exception&) {
      throw ParseError(lineno, "malformed number");
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Configuration

struct MeshSource {
  std::string generator = "square";  // square | ring | file
  int level = 2;
  double perturb = 0.2;
  std::uint64_t seed = 42;
  std::string path;
};

struct RunConfig {
  std::string scenario = "perturbed-square";
  MeshSource mesh;
  int order = 1;
  double dt = 0.5;
  double t_end = 1500.0;
  Physics phys;
  HbMode hb_mode = HbMode::Linear;
  KernelBackend backend = KernelBackend::Direct;
  EdgeAssembly edges = EdgeAssembly::Trace;
  bool substeps = true;
  // custom scenario: constant state over hb = h0 + sx x + sy y
  Triple initial{0.25, 0.0, 0.0};
  std::array<double, 3> bottom{1.0, 1e-3, 2e-3};
  // output
  std::string vtk;
  std::string csv;
};

/// Reads the JSON schema documented in the README. Unknown keys are errors.
inline RunConfig parse_config(const nlohmann::json& j) {
  RunConfig c;
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  auto check_keys = [&](const nlohmann::json& obj, std::initializer_list<const char*> keys,
                        const std::string& where) {
    if (!obj.is_object()) fail(where + " must be an object");
    for (const auto& [k, v] : obj.items()) {
      bool ok = false;
      for (const char* key : keys) ok = ok || k == key;
      if (!ok) fail("unknown key '" + k + "' in " + where);
    }
  };
  try {
    check_keys(j, {"scenario", "mesh", "order", "dt", "t_end", "physics", "hb_mode", "backend",
                   "edges", "substeps", "initial", "bottom", "output"},
               "config");
    c.scenario = j.value("scenario", c.scenario);
    if (c.scenario != "perturbed-square" && c.scenario != "ring" && c.scenario != "lake-at-rest" &&
        c.scenario != "custom") {
      fail("unknown scenario '" + c.scenario + "'");
    }
    if (c.scenario == "ring") c.mesh.generator = "ring";
    if (c.scenario == "lake-at-rest" || c.scenario == "custom") c.mesh.perturb = 0.0;
    if (j.contains("mesh")) {
      const auto& m = j["mesh"];
      check_keys(m, {"generator", "level", "perturb", "seed", "path"}, "mesh");
      c.mesh.generator = m.value("generator", c.mesh.generator);
      c.mesh.level = m.value("level", c.mesh.level);
      c.mesh.perturb = m.value("perturb", c.mesh.perturb);
      c.mesh.seed = m.value("seed", c.mesh.seed);
      c.mesh.path = m.value("path", c.mesh.path);
      if (c.mesh.generator != "square" && c.mesh.generator != "ring" && c.mesh.generator != "file") {
        fail("unknown mesh generator '" + c.mesh.generator + "'");
      }
      if (c.mesh.generator == "file" && c.mesh.path.empty()) fail("mesh.path required for file");
    }
    c.order = j.value("order", c.order);
    if (c.order < 0 || c.order > kMaxOrder) throw UnsupportedOrder(c.order);
    c.dt = j.value("dt", c.dt);
    c.t_end = j.value("t_end", c.t_end);
    if (!(c.dt > 0.0) || !(c.t_end >= 0.0)) fail("dt must be positive and t_end nonnegative");
    if (j.contains("physics")) {
      const auto& p = j["physics"];
      check_keys(p, {"g", "f_c", "tau", "h_min"}, "physics");
      c.phys.g = p.value("g", c.phys.g);
      c.phys.f_c = p.value("f_c", c.phys.f_c);
      c.phys.tau = p.value("tau", c.phys.tau);
      c.phys.h_min = p.value("h_min", c.phys.h_min);
    }
    std::string hb = j.value("hb_mode", std::string("linear"));
    if (hb != "linear" && hb != "const") fail("hb_mode must be 'linear' or 'const'");
    c.hb_mode = hb == "const" ? HbMode::Const : HbMode::Linear;
    std::string be = j.value("backend", std::string("direct"));
    if (be != "direct" && be != "interpreted") fail("backend must be 'direct' or 'interpreted'");
    c.backend = be == "interpreted" ? KernelBackend::Interpreted : KernelBackend::Direct;
    std::string ed = j.value("edges", std::string("trace"));
    if (ed != "trace" && ed != "tensor") fail("edges must be 'trace' or 'tensor'");
    c.edges = ed == "tensor" ? EdgeAssembly::Tensor : EdgeAssembly::Trace;
    c.substeps = j.value("substeps", c.substeps);
    if (j.contains("initial")) {
      const auto& v = j["initial"];
      check_keys(v, {"xi", "U", "V"}, "initial");
      c.initial = {v.value("xi", c.initial.xi), v.value("U", c.initial.U), v.value("V", c.initial.V)};
    }
    if (j.contains("bottom")) {
      const auto& v = j["bottom"];
      check_keys(v, {"h0", "sx", "sy"}, "bottom");
      c.bottom = {v.value("h0", c.bottom[0]), v.value("sx", c.bottom[1]), v.value("sy", c.bottom[2])};
    }
    if (j.contains("output")) {
      const auto& o = j["output"];
      check_keys(o, {"vtk", "csv"}, "output");
      c.vtk = o.value("vtk", c.vtk);
      c.csv = o.value("csv", c.csv);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return parse_config(j);
}

inline Mesh make_mesh(const MeshSource& m) {
  if (m.generator == "square") return build_square_mesh(m.level, m.perturb, m.seed);
  if (m.generator == "ring") return build_ring_mesh(m.level);
  return load_mesh(m.path);
}

inline Scenario make_scenario(const RunConfig& c) {
  Scenario s;
  if (c.scenario == "perturbed-square" || c.scenario == "ring") {
    s = manufactured_scenario(c.scenario, c.phys);
  } else if (c.scenario == "lake-at-rest") {
    s = lake_at_rest_scenario(c.initial.xi, c.bottom[0], c.bottom[1], c.bottom[2], c.phys.g);
    s.phys = c.phys;
  } else {
    s = constant_scenario(c.initial, c.bottom[0], c.bottom[1], c.bottom[2], c.phys);
  }
  s.dt = c.dt;
  s.t_end = c.t_end;
  return s;
}

/// Runs one configuration from t = 0 to t_end.
struct RunResult {
  State state;
  std::size_t steps = 0;
  std::optional<ErrorReport> errors;
};

inline RunResult run_simulation(const RunConfig& c, const SolverOptions& opt_in = {}) {
  SolverOptions opt = opt_in;
  opt.hb_mode = c.hb_mode;
  opt.backend = c.backend;
  opt.edges = c.edges;
  opt.substeps = c.substeps;
  Solver solver(make_mesh(c.mesh), make_scenario(c), c.order, opt);
  RunResult r;
  r.state = solver.project_initial(0.0);
  r.steps = solver.run(r.state, 0.0, c.t_end);
  if (solver.scenario().exact) {
    r.errors = l2_error(solver, r.state, c.t_end);
    r.errors->level = c.mesh.level;
  }
  return r;
}

/// Full simulations on consecutive levels. A failing level stops the study
/// and is recorded in `failure`; completed rows are kept.
inline ConvergenceTable convergence_study(RunConfig base, int first, int last,
                                          const SolverOptions& opt = {},
                                          const std::function<void(const ErrorReport&)>& progress = {}) {
  ConvergenceTable t;
  for (int level = first; level <= last; ++level) {
    RunConfig c = base;
    c.mesh.level = level;
    try {
      auto r = run_simulation(c, opt);
      t.rows.push_back(*r.errors);
      if (progress) progress(t.rows.back());
    } catch (const Error& e) {
      t.failure = "level " + std::to_string(level) + ": " + e.what();
      break;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// VTK

/// Legacy ASCII unstructured grid with duplicated vertices per triangle.
inline void write_vtk(const Solver& solver, const State& s, std::ostream& os, double t) {
  const Mesh& m = solver.mesh();
  const std::size_t E = m.num_elements();
  os << "# vtk DataFile Version 3.0\n";
  os << "dg solution t=" << detail::format_g17(t) << "\n";
  os << "ASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << 3 * E << " double\n";
  for (const auto& tri : m.triangles) {
    for (int v : tri) {
      const auto& p = m.vertices[static_cast<std::size_t>(v)];
      os << detail::format_g17(p[0]) << ' ' << detail::format_g17(p[1]) << " 0\n";
    }
  }
  os << "CELLS " << E << ' ' << 4 * E << "\n";
  for (std::size_t e = 0; e < E; ++e) os << "3 " << 3 * e << ' ' << 3 * e + 1 << ' ' << 3 * e + 2 << "\n";
  os << "CELL_TYPES " << E << "\n";
  for (std::size_t e = 0; e < E; ++e) os << "5\n";
  os << "CELL_DATA " << E << "\nSCALARS element_id int 1\nLOOKUP_TABLE default\n";
  for (std::size_t e = 0; e < E; ++e) os << e << "\n";
  os << "POINT_DATA " << 3 * E << "\n";
  const std::array<std::array<double, 2>, 3> corners{{{0, 0}, {1, 0}, {0, 1}}};
  auto field = [&](const char* name, auto coef) {
    os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (std::size_t e = 0; e < E; ++e) {
      for (const auto& c : corners) os << detail::format_g17(solver.evaluate(e, coef(e), c[0], c[1])) << "\n";
    }
  };
  field("xi", [&](std::size_t e) { return s.conserved(e, kXi); });
  field("U", [&](std::size_t e) { return s.conserved(e, kU); });
  field("V", [&](std::size_t e) { return s.conserved(e, kV); });
  field("u", [&](std::size_t e) { return s.velocity(e, kVelU); });
  field("v", [&](std::size_t e) { return s.velocity(e, kVelV); });
}

inline void write_vtk(const Solver& solver, const State& s, const std::string& path, double t) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_vtk(solver, s, os, t);
  if (!os) throw Error("write failed: " + path);
}

}  // namespace qfdg
