// qfdg command line: tensor dumps, kernel emission, meshes, single runs and
// convergence studies.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "qfdg/codegen.hpp"
#include "qfdg/harness.hpp"
#include "qfdg/mesh.hpp"
#include "qfdg/swe_kernels.hpp"
#include "qfdg/tensors.hpp"

namespace fs = std::filesystem;
using namespace qfdg;

namespace {

std::pair<int, int> parse_levels(const std::string& s) {
  auto colon = s.find(':');
  try {
    if (colon == std::string::npos) {
      int l = std::stoi(s);
      return {l, l};
    }
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("levels must look like A:B, got '" + s + "'");
  }
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error("cannot create " + p.string() + ": " + ec.message());
}

int gen_tensors(int order, const std::string& out, bool verify) {
  ensure_dir(out);
  RefTensors t = build_ref_tensors(order);
  write_tensors_csv(t, out);
  if (verify) {
    TensorReport r = verify_tensors(t);
    std::cout << "max_abs " << r.max_abs << " max_rel " << r.max_rel << " at " << r.worst << "\n";
  }
  return 0;
}

int emit_kernels(int order, const std::string& out) {
  ensure_dir(out);
  RefTensors t = build_ref_tensors(order);
  nlohmann::json manifest;
  manifest["order"] = order;
  manifest["kernels"] = nlohmann::json::array();
  for (const auto& spec : swe::all_specs()) {
    codegen::KernelIR ir = codegen::lower(spec, t);
    std::ofstream os(fs::path(out) / (spec.name + ".c"), std::ios::binary);
    if (!os) throw Error("cannot write kernel " + spec.name);
    os << codegen::emit_source(ir, spec.name);
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& in : ir.inputs) {
      inputs.push_back({{"field", std::string(codegen::field_name(in.field))}, {"size", in.size}});
    }
    nlohmann::json symbols = nlohmann::json::array();
    for (auto s : ir.symbols) symbols.push_back(std::string(codegen::symbol_name(s)));
    std::size_t outputs = 1;
    for (int e : ir.output_extents) outputs *= static_cast<std::size_t>(e);
    manifest["kernels"].push_back({{"name", spec.name},
                                   {"inputs", inputs},
                                   {"symbols", symbols},
                                   {"outputs", outputs},
                                   {"terms", ir.term_count},
                                   {"assignments", ir.code.size()}});
  }
  std::ofstream ms(fs::path(out) / "manifest.json", std::ios::binary);
  if (!ms) throw Error("cannot write manifest");
  ms << manifest.dump(2) << "\n";
  return 0;
}

int make_mesh_file(const std::string& kind, int level, double perturb, std::uint64_t seed,
                   const std::string& out) {
  Mesh m;
  if (kind == "square") {
    m = build_square_mesh(level, perturb, seed);
  } else {
    m = build_ring_mesh(level);
  }
  if (out.empty() || out == "-") {
    write_mesh(m, std::cout);
  } else {
    save_mesh(m, out);
  }
  return 0;
}

SolverOptions cli_solver_options(bool quiet) {
  SolverOptions o;
  if (!quiet) o.warn = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
  return o;
}

int run(RunConfig c, bool quiet) {
  SolverOptions opt = cli_solver_options(quiet);
  opt.hb_mode = c.hb_mode;
  opt.backend = c.backend;
  opt.edges = c.edges;
  opt.substeps = c.substeps;
  Solver solver(make_mesh(c.mesh), make_scenario(c), c.order, opt);
  State s = solver.project_initial(0.0);
  std::size_t steps = solver.run(s, 0.0, c.t_end);
  std::cout << "elements " << solver.mesh().num_elements() << " order " << c.order << " steps "
            << steps << " t " << detail::format_g17(c.t_end) << "\n";
  if (solver.scenario().exact) {
    ErrorReport r = l2_error(solver, s, c.t_end);
    r.level = c.mesh.level;
    std::cout << "err_xi " << detail::format_g17(r.err_xi) << "\nerr_U " << detail::format_g17(r.err_U)
              << "\nerr_V " << detail::format_g17(r.err_V) << "\n";
    if (!c.csv.empty()) {
      ConvergenceTable t;
      t.rows.push_back(r);
      std::ofstream os(c.csv);
      if (!os) throw Error("cannot write " + c.csv);
      write_csv(t, os);
    }
  }
  if (!c.vtk.empty()) write_vtk(solver, s, c.vtk, c.t_end);
  return 0;
}

int convergence(RunConfig c, const std::string& levels, const std::string& out, bool quiet) {
  auto [first, last] = parse_levels(levels);
  if (first < 1 || last < first) throw ConfigError("levels must satisfy 1 <= A <= B");
  auto progress = [&](const ErrorReport& r) {
    if (!quiet) {
      std::cerr << "level " << r.level << " elements " << r.elements << " err_xi "
                << detail::format_g17(r.err_xi) << "\n";
    }
  };
  ConvergenceTable t = convergence_study(c, first, last, cli_solver_options(quiet), progress);
  if (out.empty() || out == "-") {
    write_csv(t, std::cout);
  } else {
    std::ofstream os(out);
    if (!os) throw Error("cannot write " + out);
    write_csv(t, os);
  }
  if (!t.failure.empty()) {
    std::cerr << "error: " << t.failure << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadrature-free DG shallow water solver"};
  app.require_subcommand(1);

  int order = 1;
  std::string out;

  auto* gt = app.add_subcommand("gen-tensors", "Dump reference tensors as CSV");
  bool verify = false;
  gt->add_option("--order,-k", order, "Polynomial order")->check(CLI::Range(0, kMaxOrder));
  gt->add_option("--out,-o", out, "Output directory")->required();
  gt->add_flag("--verify", verify, "Compare against numerical quadrature");

  auto* ek = app.add_subcommand("emit-kernels", "Write unrolled C kernels and a manifest");
  ek->add_option("--order,-k", order, "Polynomial order")->check(CLI::Range(0, kMaxOrder));
  ek->add_option("--out,-o", out, "Output directory")->required();

  auto* me = app.add_subcommand("mesh", "Generate a mesh file");
  std::string kind = "square";
  int level = 2;
  double perturb = 0.0;
  std::uint64_t seed = 42;
  me->add_option("--kind", kind, "square or ring")->check(CLI::IsMember({"square", "ring"}));
  me->add_option("--level", level, "Refinement level")->check(CLI::Range(1, kMaxLevel));
  me->add_option("--perturb", perturb, "Vertex perturbation fraction")->check(CLI::Range(0.0, 0.2));
  me->add_option("--seed", seed, "Perturbation seed");
  me->add_option("--out,-o", out, "Output file (default stdout)");

  // shared by run and convergence
  RunConfig cfg;
  std::string config_path, hb_mode, backend, edges;
  bool quiet = false, no_substeps = false;
  auto add_run_options = [&](CLI::App* sc) {
    sc->add_option("--config,-c", config_path, "JSON configuration file");
    sc->add_option("--order,-k", order, "Polynomial order")->check(CLI::Range(0, kMaxOrder));
    sc->add_option("--seed", seed, "Perturbation seed");
    sc->add_option("--dt", cfg.dt, "Time step (s)")->check(CLI::PositiveNumber);
    sc->add_option("--t-end", cfg.t_end, "End time (s)")->check(CLI::NonNegativeNumber);
    sc->add_option("--perturb", perturb, "Vertex perturbation fraction")->check(CLI::Range(0.0, 0.2));
    sc->add_option("--hb-mode", hb_mode, "Bathymetry projection")->check(CLI::IsMember({"const", "linear"}));
    sc->add_option("--backend", backend, "Kernel backend")->check(CLI::IsMember({"direct", "interpreted"}));
    sc->add_option("--edges", edges, "Edge assembly")->check(CLI::IsMember({"trace", "tensor"}));
    sc->add_flag("--no-substeps", no_substeps, "Never split steps for stability");
    sc->add_flag("--quiet,-q", quiet, "No progress or warnings on stderr");
  };

  auto* ru = app.add_subcommand("run", "Run one simulation");
  add_run_options(ru);
  std::string scenario, vtk, csv;
  ru->add_option("--scenario", scenario, "Scenario name")
      ->check(CLI::IsMember({"perturbed-square", "ring", "lake-at-rest", "custom"}));
  ru->add_option("--level", level, "Refinement level")->check(CLI::Range(1, kMaxLevel));
  ru->add_option("--vtk", vtk, "Write the final state as VTK");
  ru->add_option("--csv", csv, "Write the error row as CSV");

  auto* cv = app.add_subcommand("convergence", "Convergence study over levels");
  add_run_options(cv);
  std::string levels = "2:5";
  cv->add_option("--levels", levels, "Level range A:B");
  cv->add_option("--out,-o", out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gt) return gen_tensors(order, out, verify);
    if (*ek) return emit_kernels(order, out);
    if (*me) return make_mesh_file(kind, level, perturb, seed, out);

    // command line flags override the configuration file
    CLI::App* sc = *ru ? ru : cv;
    RunConfig flags = cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    auto given = [&](const char* name) { return sc->count(name) > 0; };
    if (given("--order")) cfg.order = order;
    if (given("--seed")) cfg.mesh.seed = seed;
    if (given("--perturb")) cfg.mesh.perturb = perturb;
    if (given("--dt")) cfg.dt = flags.dt;
    if (given("--t-end")) cfg.t_end = flags.t_end;
    if (!hb_mode.empty()) cfg.hb_mode = hb_mode == "const" ? HbMode::Const : HbMode::Linear;
    if (!backend.empty()) {
      cfg.backend = backend == "interpreted" ? KernelBackend::Interpreted : KernelBackend::Direct;
    }
    if (!edges.empty()) cfg.edges = edges == "tensor" ? EdgeAssembly::Tensor : EdgeAssembly::Trace;
    if (no_substeps) cfg.substeps = false;
    if (*ru) {
      if (!scenario.empty()) {
        nlohmann::json j = {{"scenario", scenario}};
        RunConfig fresh = parse_config(j);
        cfg.scenario = fresh.scenario;
        cfg.mesh.generator = fresh.mesh.generator;
        if (!given("--perturb")) cfg.mesh.perturb = fresh.mesh.perturb;
      }
      if (given("--level")) cfg.mesh.level = level;
      if (!vtk.empty()) cfg.vtk = vtk;
      if (!csv.empty()) cfg.csv = csv;
      return run(cfg, quiet);
    }
    return convergence(cfg, levels, out, quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
