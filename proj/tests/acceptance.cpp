// Acceptance checks 1-8. Prints one PASS/FAIL line per criterion (plus
// detail lines) and exits nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "qfdg/harness.hpp"

using namespace qfdg;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "  failed: " << what << "\n";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, const char* f = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// ---------------------------------------------------------------------------

void exact_orthonormality(Outcome& o) {
  for (int k = 0; k <= 3; ++k) {
    RefBasis b = build_basis(k);
    o.require(b.size() == num_basis(k), "basis size for k=" + std::to_string(k));
    int bad = 0;
    for (int i = 0; i < b.size(); ++i) {
      for (int j = 0; j < b.size(); ++j) {
        RootCoeff v = integrate_triangle(b.functions[static_cast<std::size_t>(i)] *
                                         b.functions[static_cast<std::size_t>(j)]);
        bad += !(v == RootCoeff(i == j ? 1 : 0));
      }
    }
    o.require(bad == 0, std::to_string(bad) + " mass entries differ from identity at k=" + std::to_string(k));
    o.detail << "  k=" << k << ": " << b.size() << " functions, mass matrix == I exactly\n";
  }
}

void tensor_oracle(Outcome& o) {
  for (int k = 0; k <= 3; ++k) {
    RefTensors t = build_ref_tensors(k);
    const int K = num_basis(k), L = k + 1;
    double worst = 0.0;
    std::size_t entries = 0;
    auto check = [&](double a, double b) {
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(b), 1.0));
      ++entries;
    };
    auto own = [](int e, int n, double s) {
      auto x = oracle::edge_point(e, s);
      return oracle::value(n, x[0], x[1]);
    };
    auto nb = [](int e, int n, double s) {
      auto x = oracle::edge_point(e, 1.0 - s);
      return oracle::value(n, x[0], x[1]);
    };
    for (int p = 0; p < K; ++p) {
      for (int i = 0; i < K; ++i) {
        check(t.mass(p, i), oracle::triangle([&](double x, double y) {
          return oracle::value(p, x, y) * oracle::value(i, x, y);
        }));
        for (int l = 0; l < 2; ++l) {
          check(t.stiff(l, p, i), oracle::triangle([&](double x, double y) {
            return oracle::grad(p, l, x, y) * oracle::value(i, x, y);
          }));
        }
        for (int m = 0; m < K; ++m) {
          check(t.vol_triple(p, i, m), oracle::triangle([&](double x, double y) {
            return oracle::value(p, x, y) * oracle::value(i, x, y) * oracle::value(m, x, y);
          }));
          for (int l = 0; l < 2; ++l) {
            check(t.stiff_triple(l, p, i, m), oracle::triangle([&](double x, double y) {
              return oracle::grad(p, l, x, y) * oracle::value(i, x, y) * oracle::value(m, x, y);
            }));
          }
        }
        for (int e = 0; e < 3; ++e) {
          check(t.edge_pair(e, p, i), oracle::line([&](double s) { return own(e, p, s) * own(e, i, s); }));
          for (int m = 0; m < K; ++m) {
            check(t.edge_triple(e, p, i, m),
                  oracle::line([&](double s) { return own(e, p, s) * own(e, i, s) * own(e, m, s); }));
          }
          for (int en = 0; en < 3; ++en) {
            check(t.edge_pair_x(e, en, p, i),
                  oracle::line([&](double s) { return own(e, p, s) * nb(en, i, s); }));
            for (int m = 0; m < K; ++m) {
              check(t.edge_triple_x(e, en, p, i, m),
                    oracle::line([&](double s) { return own(e, p, s) * nb(en, i, s) * nb(en, m, s); }));
            }
          }
          for (int r = 0; r < L; ++r) {
            check(t.bnd_pair(e, p, r), oracle::line([&](double s) { return own(e, p, s) * oracle::legendre(r, s); }));
            for (int q = 0; q < L; ++q) {
              check(t.bnd_triple(e, p, r, q), oracle::line([&](double s) {
                return own(e, p, s) * oracle::legendre(r, s) * oracle::legendre(q, s);
              }));
            }
          }
        }
      }
    }
    o.require(worst <= 1e-12, "k=" + std::to_string(k) + " worst relative deviation " + fmt(worst));
    o.detail << "  k=" << k << ": " << entries << " entries, worst relative deviation " << fmt(worst, "%.2e") << "\n";
  }
}

void codegen_equivalence(Outcome& o) {
  using namespace codegen;
  for (int k = 0; k <= 3; ++k) {
    RefTensors t = build_ref_tensors(k);
    std::mt19937_64 rng(2000 + static_cast<unsigned>(k));
    double worst = 0.0;
    std::size_t kernels = 0;
    bool deterministic = true;
    for (const auto& spec : swe::all_specs()) {
      KernelIR ir = lower(spec, t);
      SpecLayout layout = validate(spec, t);
      for (int trial = 0; trial < 100; ++trial) {
        oracle::RandomArgs r(layout, rng);
        auto ref = oracle::contract(spec, t, r.args);
        auto got = interpret(ir, r.args);
        double d = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) d = std::max(d, std::abs(got[i] - ref[i]));
        worst = std::max(worst, d / std::max(max_abs(ref), 1e-300));
      }
      deterministic = deterministic && emit_source(ir, spec.name) == emit_source(lower(spec, t), spec.name);
      ++kernels;
    }
    o.require(worst <= 1e-12, "k=" + std::to_string(k) + " interpreted vs nested loops " + fmt(worst));
    o.require(deterministic, "k=" + std::to_string(k) + " emitted source differs between runs");
    o.detail << "  k=" << k << ": " << kernels << " kernels x 100 inputs, worst relative deviation "
             << fmt(worst, "%.2e") << ", emission byte-identical\n";
  }
}

void table_reproduction(Outcome& o) {
  struct Order {
    int k, first, last;
  };
  double total = 0.0;
  for (Order c : {Order{0, 2, 6}, Order{1, 2, 5}, Order{2, 2, 5}, Order{3, 2, 5}}) {
    RunConfig cfg;
    cfg.order = c.k;
    cfg.mesh.seed = 42;
    auto t0 = std::chrono::steady_clock::now();
    ConvergenceTable t = convergence_study(cfg, c.first, c.last);
    const double secs = seconds_since(t0);
    total += secs;
    const std::string tag = "k=" + std::to_string(c.k);
    o.require(t.failure.empty(), tag + " study failed: " + t.failure);
    if (!t.failure.empty()) continue;
    const std::size_t n = t.rows.size();
    std::ostringstream eocs;
    for (std::size_t i = 1; i < n; ++i) eocs << (i > 1 ? ", " : "") << fmt(*t.rate(i, 0), "%.2f");
    o.detail << "  " << tag << " levels " << c.first << "-" << c.last << ": EOC(xi) " << eocs.str()
             << "; finest err_xi " << fmt(t.rows.back().err_xi) << "; EOC(U,V) finest "
             << fmt(*t.rate(n - 1, 1), "%.2f") << ", " << fmt(*t.rate(n - 1, 2), "%.2f") << "; "
             << fmt(secs, "%.0f") << " s\n";
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    switch (c.k) {
      case 0:
        for (std::size_t i = n - 3; i < n; ++i) {
          o.require(in(*t.rate(i, 0), 0.85, 1.15), tag + " EOC(xi) pair " + std::to_string(i));
        }
        break;
      case 1: {
        const std::array<double, 3> ref{2.04, 2.04, 1.98};
        for (std::size_t i = 1; i < n; ++i) {
          o.require(std::abs(*t.rate(i, 0) - ref[i - 1]) <= 0.35, tag + " EOC(xi) pair " + std::to_string(i));
        }
        o.require(in(t.rows.back().err_xi, 0.6760 / 3, 0.6760 * 3), tag + " Err(xi) at 2048 elements");
        break;
      }
      case 2:
        o.require(in(*t.rate(n - 1, 0), 2.6, 3.4), tag + " final EOC(xi)");
        o.require(in(t.rows.back().err_xi, 0.0157 / 3, 0.0157 * 3), tag + " Err(xi) at 2048 elements");
        break;
      default:
        o.require(in(*t.rate(n - 1, 0), 3.5, 4.4), tag + " final EOC(xi)");
    }
    for (int comp : {1, 2}) {
      o.require(std::abs(*t.rate(n - 1, comp) - (c.k + 1)) <= 0.5,
                tag + (comp == 1 ? " final EOC(U)" : " final EOC(V)"));
    }
    if (c.k == 1 || c.k == 2) o.require(t.rows.back().elements == 2048, tag + " finest mesh has 2048 elements");
  }
  o.detail << "  total " << fmt(total, "%.0f") << " s\n";
  o.require(total <= 900.0, "study took " + fmt(total, "%.0f") + " s (bound 900 s)");
}

void well_balanced(Outcome& o) {
  for (int k = 1; k <= 3; ++k) {
    Solver s(build_square_mesh(3, 0.2, 42), lake_at_rest_scenario(0.25), k);
    State st = s.project_initial();
    const State s0 = st;
    for (int n = 0; n < 100; ++n) s.step(st, 0.5 * n, 0.5);
    double drift = 0.0;
    for (std::size_t i = 0; i < st.c.size(); ++i) drift = std::max(drift, std::abs(st.c[i] - s0.c[i]));
    o.require(drift <= 1e-9, "k=" + std::to_string(k) + " drift " + fmt(drift));
    o.detail << "  k=" << k << ": max coefficient drift after 100 steps " << fmt(drift, "%.2e") << "\n";
  }
}

void conservation(Outcome& o) {
  for (int k = 0; k <= 3; ++k) {
    Solver s(build_square_mesh(3, 0.2, 42), manufactured_scenario("perturbed-square"), k);
    State st = s.project_initial();
    double worst = 0.0;
    std::vector<double> out;
    EdgeAudit audit;
    for (int n = 0; n < 20; ++n) {
      s.rhs(st, 0.5 * n, out, &audit);
      worst = std::max(worst, audit.max_relative_imbalance());
      s.step(st, 0.5 * n, 0.5);
    }
    o.require(worst <= 1e-10, "k=" + std::to_string(k) + " imbalance " + fmt(worst));
    o.detail << "  k=" << k << ": worst interior-edge mass imbalance over 20 steps " << fmt(worst, "%.2e") << "\n";
  }
}

void ring_domain(Outcome& o) {
  RunConfig cfg = parse_config({{"scenario", "ring"}});
  cfg.order = 1;
  ConvergenceTable t = convergence_study(cfg, 2, 4);
  o.require(t.failure.empty(), "ring study failed: " + t.failure);
  o.require(t.rows.size() == 3, "ring study rows");
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    o.detail << "  level " << t.rows[i].level << " (" << t.rows[i].elements << " elements): err_xi "
             << fmt(t.rows[i].err_xi) << "\n";
    if (i > 0) o.require(t.rows[i].err_xi < t.rows[i - 1].err_xi, "Err(xi) not decreasing at row " + std::to_string(i));
  }
}

void velocity_projection(Outcome& o) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_const = 0.0, worst_res = 0.0;
  for (int k = 0; k <= 3; ++k) {
    // constant H = 0.5 + 1.25
    Solver c(build_square_mesh(2, 0.2, 3), constant_scenario({0.5, 0.0, 0.0}, 1.25, 0.0, 0.0, {}), k);
    State sc = c.project_initial();
    for (std::size_t e = 0; e < sc.E; ++e) {
      for (int j : {kU, kV}) {
        for (double& x : sc.conserved(e, j)) x = u(rng);
      }
    }
    c.solve_velocity(sc);
    for (std::size_t e = 0; e < sc.E; ++e) {
      for (int j = 0; j < 2; ++j) {
        auto q = sc.conserved(e, j == 0 ? kU : kV);
        auto v = sc.velocity(e, j);
        for (std::size_t i = 0; i < q.size(); ++i) worst_const = std::max(worst_const, std::abs(v[i] - q[i] / 1.75));
      }
    }
    // general H from the manufactured state
    Solver g(build_square_mesh(2, 0.2, 3), manufactured_scenario("perturbed-square"), k);
    State sg = g.project_initial(200.0);
    for (std::size_t e = 0; e < sg.E; ++e) {
      for (int j : {kU, kV}) {
        for (double& x : sg.conserved(e, j)) x = u(rng);
      }
    }
    g.solve_velocity(sg);
    const int K = g.basis_size();
    for (std::size_t e = 0; e < sg.E; ++e) {
      auto A = g.velocity_matrix(sg, e);
      for (int j = 0; j < 2; ++j) {
        auto q = sg.conserved(e, j == 0 ? kU : kV);
        auto v = sg.velocity(e, j);
        for (int p = 0; p < K; ++p) {
          double r = -q[static_cast<std::size_t>(p)];
          for (int m = 0; m < K; ++m) r += A(p, m) * v[static_cast<std::size_t>(m)];
          worst_res = std::max(worst_res, std::abs(r));
        }
      }
    }
  }
  o.require(worst_const <= 1e-11, "constant-H deviation " + fmt(worst_const));
  o.require(worst_res <= 1e-11, "general-H residual " + fmt(worst_res));
  o.detail << "  constant H: max |u - q/H0| " << fmt(worst_const, "%.2e") << "; general H: max residual "
           << fmt(worst_res, "%.2e") << "\n";
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget;  // seconds; 0 when the bound is checked inside
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria{
      {"exact orthonormality", 1.0, exact_orthonormality},
      {"tensor oracle", 10.0, tensor_oracle},
      {"codegen equivalence", 30.0, codegen_equivalence},
      {"convergence table", 0.0, table_reproduction},
      {"well-balancedness", 5.0, well_balanced},
      {"conservation", 5.0, conservation},
      {"ring domain", 300.0, ring_domain},
      {"velocity projection", 1.0, velocity_projection},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (c.budget > 0.0) o.require(secs < c.budget, "runtime " + fmt(secs, "%.2f") + " s over " + fmt(c.budget, "%.0f") + " s");
    std::printf("%s criterion %zu: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, secs);
    std::fputs(o.detail.str().c_str(), stdout);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
