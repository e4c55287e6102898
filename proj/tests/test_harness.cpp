#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "qfdg/harness.hpp"

using namespace qfdg;

namespace {

std::string csv_text(const ConvergenceTable& t) {
  std::ostringstream os;
  write_csv(t, os);
  return os.str();
}

ConvergenceTable synthetic(double C, double p, int rows) {
  ConvergenceTable t;
  for (int i = 0; i < rows; ++i) {
    ErrorReport r;
    r.order = 1;
    r.level = 2 + i;
    r.elements = 32u << (2 * i);
    const double h = 1000.0 / (1 << (2 + i));
    r.err_xi = C * std::pow(h, p);
    r.err_U = 2.0 * C * std::pow(h, p + 0.5);
    r.err_V = 0.5 * C * std::pow(h, p - 0.5);
    t.rows.push_back(r);
  }
  return t;
}

std::vector<double> scalars(const std::string& vtk, const std::string& name, std::size_t n) {
  std::istringstream is(vtk);
  std::string line;
  while (std::getline(is, line)) {
    if (line == "SCALARS " + name + " double 1") break;
  }
  std::getline(is, line);  // lookup table
  std::vector<double> v(n);
  for (auto& x : v) is >> x;
  return v;
}

RunConfig short_config(int order) {
  RunConfig c;
  c.order = order;
  c.t_end = 5.0;
  c.mesh.seed = 11;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// EOC and CSV

TEST(Eoc, SyntheticPowerLawIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> C(1e-3, 1e3), P(0.5, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double c = C(rng), p = P(rng);
    ConvergenceTable t = synthetic(c, p, 4);
    for (std::size_t i = 1; i < 4; ++i) {
      EXPECT_NEAR(*t.rate(i, 0), p, 1e-12);
      EXPECT_NEAR(*t.rate(i, 1), p + 0.5, 1e-12);
      EXPECT_NEAR(*t.rate(i, 2), p - 0.5, 1e-12);
    }
    EXPECT_FALSE(t.rate(0, 0).has_value());
    EXPECT_FALSE(t.rate(4, 0).has_value());
  }
  EXPECT_EQ(eoc(4.0, 1.0), 2.0);
}

TEST(Csv, HeaderAndBlankFirstRates) {
  std::string s = csv_text(synthetic(3.0, 2.0, 3));
  std::istringstream is(s);
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "order,level,elements,err_xi,eoc_xi,err_U,eoc_U,err_V,eoc_V");
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 8);
  EXPECT_NE(first.find(",,"), std::string::npos);
  EXPECT_EQ(first.back(), ',');
}

TEST(Csv, RoundTripIsExact) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> C(1e-6, 1e6), P(0.5, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    ConvergenceTable t = synthetic(C(rng), P(rng), 5);
    std::istringstream is(csv_text(t));
    ConvergenceTable r = read_csv(is);
    ASSERT_EQ(r.rows.size(), t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      EXPECT_EQ(r.rows[i].order, t.rows[i].order);
      EXPECT_EQ(r.rows[i].level, t.rows[i].level);
      EXPECT_EQ(r.rows[i].elements, t.rows[i].elements);
      EXPECT_EQ(r.rows[i].err_xi, t.rows[i].err_xi);
      EXPECT_EQ(r.rows[i].err_U, t.rows[i].err_U);
      EXPECT_EQ(r.rows[i].err_V, t.rows[i].err_V);
    }
    EXPECT_EQ(csv_text(r), csv_text(t));
  }
}

TEST(Csv, ParseErrors) {
  std::istringstream bad_header("order,level\n");
  EXPECT_THROW(read_csv(bad_header), ParseError);
  std::istringstream short_row(std::string(kCsvHeader) + "\n1,2,32,0.5\n");
  try {
    read_csv(short_row);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream bad_number(std::string(kCsvHeader) + "\n1,2,32,abc,,1,,1,\n");
  EXPECT_THROW(read_csv(bad_number), ParseError);
}

TEST(Csv, SameSeedSameBytes) {
  RunConfig c = short_config(1);
  std::string a = csv_text(convergence_study(c, 1, 2));
  std::string b = csv_text(convergence_study(c, 1, 2));
  EXPECT_EQ(a, b);
  c.mesh.seed = 12;
  EXPECT_NE(a, csv_text(convergence_study(c, 1, 2)));
}

// ---------------------------------------------------------------------------
// Errors

TEST(L2Error, ProjectionErrorDecreasesAtExpectedRate) {
  for (int k = 0; k <= 3; ++k) {
    double prev = 0.0;
    for (int level = 2; level <= 4; ++level) {
      Solver s(build_square_mesh(level, 0.2, 42), manufactured_scenario("perturbed-square"), k);
      State st = s.project_initial(700.0);
      ErrorReport r = l2_error(s, st, 700.0);
      EXPECT_GE(r.err_xi, 0.0);
      EXPECT_EQ(r.elements, s.mesh().num_elements());
      if (level > 2) {
        EXPECT_LT(r.err_xi, prev);
        if (level == 4) EXPECT_NEAR(eoc(prev, r.err_xi), k + 1, 0.5) << "k=" << k;
      }
      prev = r.err_xi;
    }
  }
}

TEST(L2Error, ZeroSolutionZeroState) {
  Scenario scn = lake_at_rest_scenario(0.0);
  Solver s(build_square_mesh(2, 0.2, 1), scn, 2);
  State st = s.project_initial();
  ErrorReport r = l2_error(s, st, 0.0);
  EXPECT_EQ(r.err_xi, 0.0);
  EXPECT_EQ(r.err_U, 0.0);
  EXPECT_EQ(r.err_V, 0.0);
}

TEST(L2Error, RequiresAnalyticSolution) {
  Scenario scn = lake_at_rest_scenario();
  Solver s(build_square_mesh(1, 0.0, 0), scn, 1);
  State st = s.project_initial();
  Scenario none = scn;
  none.exact = {};
  Solver t(build_square_mesh(1, 0.0, 0), none, 1);
  EXPECT_THROW(l2_error(t, st, 0.0), ConfigError);
  EXPECT_THROW(t.project_initial(), ConfigError);
}

// ---------------------------------------------------------------------------
// Studies

TEST(ConvergenceStudy, RowsPerLevel) {
  RunConfig c = short_config(0);
  ConvergenceTable t = convergence_study(c, 1, 3);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_TRUE(t.failure.empty());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(t.rows[i].level, static_cast<int>(i) + 1);
    EXPECT_EQ(t.rows[i].elements, 8u << (2 * i));
  }
}

TEST(ConvergenceStudy, FailingLevelKeepsCompletedRows) {
  RunConfig c = short_config(0);
  c.t_end = 0.0;
  ConvergenceTable t = convergence_study(c, 7, 9);
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_NE(t.failure.find("level 9"), std::string::npos);
}

TEST(RunSimulation, LakeAtRestStaysAtRest) {
  RunConfig c;
  c.scenario = "lake-at-rest";
  c.mesh.perturb = 0.1;
  c.order = 2;
  c.t_end = 10.0;
  RunResult r = run_simulation(c);
  EXPECT_EQ(r.steps, 20u);
  ASSERT_TRUE(r.errors.has_value());
  EXPECT_LE(r.errors->err_xi, 1e-9);
  EXPECT_LE(r.errors->err_U, 1e-9);
}

TEST(RunSimulation, LastStepLandsOnEnd) {
  RunConfig c = short_config(1);
  c.t_end = 1.25;
  RunResult r = run_simulation(c);
  EXPECT_EQ(r.steps, 3u);
}

// Reference magnitude for k = 1 on 8192 elements.
TEST(ConvergenceStudy, FirstOrderLevelSixMagnitude) {
  RunConfig c;
  c.order = 1;
  c.mesh.level = 6;
  RunResult r = run_simulation(c);
  ASSERT_TRUE(r.errors.has_value());
  EXPECT_GE(r.errors->err_xi, 0.1674 / 3.0);
  EXPECT_LE(r.errors->err_xi, 0.1674 * 3.0);
}

// ---------------------------------------------------------------------------
// VTK

TEST(Vtk, CountsAndConstantField) {
  const double xi0 = 0.4;
  Solver s(build_square_mesh(2, 0.2, 5), constant_scenario({xi0, 0.1, 0.0}, 1.0, 1e-3, 0.0, {}), 2);
  State st = s.project_initial();
  std::ostringstream os;
  write_vtk(s, st, os, 12.5);
  const std::string v = os.str();
  EXPECT_NE(v.find("POINTS 96 double"), std::string::npos);
  EXPECT_NE(v.find("CELLS 32 128"), std::string::npos);
  EXPECT_NE(v.find("CELL_TYPES 32"), std::string::npos);
  EXPECT_NE(v.find("CELL_DATA 32"), std::string::npos);
  EXPECT_NE(v.find("POINT_DATA 96"), std::string::npos);
  for (double x : scalars(v, "xi", 96)) EXPECT_NEAR(x, xi0, 1e-12);
  for (double x : scalars(v, "U", 96)) EXPECT_NEAR(x, 0.1, 1e-12);
  for (double x : scalars(v, "V", 96)) EXPECT_NEAR(x, 0.0, 1e-12);
}

TEST(Vtk, PointValuesMatchExpansion) {
  Solver s(build_square_mesh(1, 0.2, 5), manufactured_scenario("perturbed-square"), 3);
  State st = s.project_initial();
  std::ostringstream os;
  write_vtk(s, st, os, 0.0);
  auto xi = scalars(os.str(), "xi", 24);
  const std::array<std::array<double, 2>, 3> corners{{{0, 0}, {1, 0}, {0, 1}}};
  for (std::size_t e = 0; e < 8; ++e) {
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(xi[e * 3 + c], s.evaluate(e, st.conserved(e, kXi), corners[c][0], corners[c][1]), 1e-13);
    }
  }
}

TEST(Vtk, ReadableByMeshio) {
  if (std::system("python3 -c 'import meshio' > /dev/null 2>&1") != 0) {
    GTEST_SKIP() << "meshio not available";
  }
  auto path = std::filesystem::temp_directory_path() / "qfdg_vtk_check.vtk";
  Solver s(build_square_mesh(2, 0.2, 5), manufactured_scenario("perturbed-square"), 1);
  State st = s.project_initial();
  write_vtk(s, st, path.string(), 0.0);
  std::string cmd = "python3 -c \"import meshio, sys; m = meshio.read(sys.argv[1]); "
                    "assert m.points.shape[0] == 96; assert len(m.cells[0].data) == 32; "
                    "assert set(m.point_data) >= {'xi', 'U', 'V', 'u', 'v'}\" " +
                    path.string() + " > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, Defaults) {
  RunConfig c = parse_config(nlohmann::json::object());
  EXPECT_EQ(c.scenario, "perturbed-square");
  EXPECT_EQ(c.order, 1);
  EXPECT_EQ(c.dt, 0.5);
  EXPECT_EQ(c.t_end, 1500.0);
  EXPECT_EQ(c.mesh.perturb, 0.2);
  EXPECT_EQ(c.phys.g, 9.81);
  EXPECT_EQ(c.hb_mode, HbMode::Linear);
  EXPECT_EQ(c.edges, EdgeAssembly::Trace);
  EXPECT_TRUE(c.substeps);
}

TEST(Config, FullDocument) {
  auto j = nlohmann::json::parse(R"({
    "scenario": "custom", "order": 3, "dt": 0.25, "t_end": 10,
    "mesh": {"generator": "square", "level": 3, "perturb": 0.1, "seed": 7},
    "physics": {"g": 9.8, "f_c": 1e-4, "tau": 1e-3, "h_min": 0.01},
    "hb_mode": "const", "backend": "interpreted", "edges": "tensor", "substeps": false,
    "initial": {"xi": 0.5, "U": 0.1}, "bottom": {"h0": 2, "sx": 0, "sy": 0},
    "output": {"vtk": "out.vtk", "csv": "out.csv"}})");
  RunConfig c = parse_config(j);
  EXPECT_EQ(c.scenario, "custom");
  EXPECT_EQ(c.order, 3);
  EXPECT_EQ(c.mesh.level, 3);
  EXPECT_EQ(c.mesh.seed, 7u);
  EXPECT_EQ(c.phys.tau, 1e-3);
  EXPECT_EQ(c.hb_mode, HbMode::Const);
  EXPECT_EQ(c.backend, KernelBackend::Interpreted);
  EXPECT_EQ(c.edges, EdgeAssembly::Tensor);
  EXPECT_FALSE(c.substeps);
  EXPECT_EQ(c.initial.xi, 0.5);
  EXPECT_EQ(c.initial.V, 0.0);
  EXPECT_EQ(c.bottom[0], 2.0);
  EXPECT_EQ(c.vtk, "out.vtk");
  Scenario s = make_scenario(c);
  EXPECT_EQ(s.exact(1.0, 2.0, 3.0).U, 0.1);
  EXPECT_EQ(s.bathymetry(100.0, 100.0), 2.0);
}

TEST(Config, ScenarioImpliesMesh) {
  EXPECT_EQ(parse_config({{"scenario", "ring"}}).mesh.generator, "ring");
  EXPECT_EQ(parse_config({{"scenario", "lake-at-rest"}}).mesh.perturb, 0.0);
}

TEST(Config, Errors) {
  using nlohmann::json;
  EXPECT_THROW(parse_config({{"bogus", 1}}), ConfigError);
  EXPECT_THROW(parse_config({{"scenario", "tsunami"}}), ConfigError);
  EXPECT_THROW(parse_config({{"order", 4}}), UnsupportedOrder);
  EXPECT_THROW(parse_config({{"dt", -1.0}}), ConfigError);
  EXPECT_THROW(parse_config({{"order", "two"}}), ConfigError);
  EXPECT_THROW(parse_config({{"mesh", {{"generator", "file"}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"mesh", {{"levels", 2}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"hb_mode", "quadratic"}}), ConfigError);
  EXPECT_THROW(parse_config({{"edges", "both"}}), ConfigError);
  EXPECT_THROW(parse_config(json::array()), ConfigError);
}

TEST(Config, LoadFromFile) {
  auto dir = std::filesystem::temp_directory_path();
  auto good = dir / "qfdg_cfg_good.json";
  auto bad = dir / "qfdg_cfg_bad.json";
  std::ofstream(good) << R"({"order": 2, "mesh": {"level": 4}})";
  std::ofstream(bad) << "{ order: 2";
  RunConfig c = load_config(good.string());
  EXPECT_EQ(c.order, 2);
  EXPECT_EQ(c.mesh.level, 4);
  EXPECT_THROW(load_config(bad.string()), ConfigError);
  EXPECT_THROW(load_config((dir / "qfdg_missing.json").string()), ConfigError);
  std::filesystem::remove(good);
  std::filesystem::remove(bad);
}
