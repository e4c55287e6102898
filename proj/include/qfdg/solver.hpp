#pragma once

// Semi-discrete quadrature-free DG scheme for the mixed shallow water system
//   d/dt c_p = (A(c, u), grad phi_p) - <A_hat, phi_p> + (r(c), phi_p),
//   (u H, psi_p) = (q, psi_p),
// with explicit SSP Runge-Kutta stepping. The interior scheme only contracts
// reference tensors; quadrature is used for initial data, Dirichlet traces,
// forcing and the bathymetry projection.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "qfdg/mesh.hpp"
#include "qfdg/numeric_basis.hpp"
#include "qfdg/quadrature.hpp"
#include "qfdg/scenario.hpp"
#include "qfdg/swe_kernels.hpp"

namespace qfdg {

enum Component { kXi = 0, kU = 1, kV = 2 };
enum VelocityComponent { kVelU = 0, kVelV = 1 };

/// Modal coefficients w.r.t. phi_i o F^-1 / sqrt(detB).
struct State {
  int K = 0;
  std::size_t E = 0;
  std::vector<double> c;  // [e][xi, U, V][K]
  std::vector<double> u;  // [e][u, v][K]

  State() = default;
  State(std::size_t elements, int basis)
      : K(basis),
        E(elements),
        c(elements * 3 * static_cast<std::size_t>(basis), 0.0),
        u(elements * 2 * static_cast<std::size_t>(basis), 0.0) {}

  std::span<double> conserved(std::size_t e, int j) {
    return {c.data() + (e * 3 + static_cast<std::size_t>(j)) * static_cast<std::size_t>(K),
            static_cast<std::size_t>(K)};
  }
  std::span<const double> conserved(std::size_t e, int j) const {
    return {c.data() + (e * 3 + static_cast<std::size_t>(j)) * static_cast<std::size_t>(K),
            static_cast<std::size_t>(K)};
  }
  std::span<double> velocity(std::size_t e, int j) {
    return {u.data() + (e * 2 + static_cast<std::size_t>(j)) * static_cast<std::size_t>(K),
            static_cast<std::size_t>(K)};
  }
  std::span<const double> velocity(std::size_t e, int j) const {
    return {u.data() + (e * 2 + static_cast<std::size_t>(j)) * static_cast<std::size_t>(K),
            static_cast<std::size_t>(K)};
  }
};

enum class HbMode { Const, Linear };

/// Trace: both sides of an edge are reduced to Legendre trace coefficients
/// and the flux is contracted with bnd_pair / bnd_triple once per edge.
/// Tensor: own/neighbour edge kernels over edge_pair(_x) / edge_triple(_x).
enum class EdgeAssembly { Trace, Tensor };

/// Largest dt * lambda_e / r_e (r_e inradius) run without splitting a step,
/// per order. Measured limits on 20%-perturbed meshes are about 1.0, 0.8,
/// 0.55 and 0.32.
inline constexpr std::array<double, 4> kStableCourant{0.8, 0.65, 0.45, 0.26};

struct SolverOptions {
  KernelBackend backend = KernelBackend::Direct;
  EdgeAssembly edges = EdgeAssembly::Trace;
  HbMode hb_mode = HbMode::Linear;
  bool substeps = true;   // split steps whose Courant number exceeds kStableCourant
  double cfl_warn = 1.0;  // warn when the (sub)step dt * lambda_max / h_min exceeds this
  std::function<void(const std::string&)> warn;
};

/// Per-edge mass-rate contributions d/dt (integral of xi) from one RHS
/// evaluation, filled in instrumented mode.
struct EdgeAudit {
  std::vector<std::array<double, 2>> interior;  // left, right
  std::vector<double> boundary;                 // one per boundary edge
  double interior_scale = 0.0;                  // max |contribution|

  /// max over interior edges of |a + b| / max(|a|, |b|); edges with both
  /// sides exactly zero are skipped.
  double max_relative_imbalance() const {
    double worst = 0.0;
    for (const auto& [a, b] : interior) {
      double s = std::max(std::abs(a), std::abs(b));
      if (s > 0.0) worst = std::max(worst, std::abs(a + b) / s);
    }
    return worst;
  }
};

struct StepStats {
  double lambda_max = 0.0;
  double stiffness = 0.0;  // max over elements of lambda_e / r_e
};

class Solver {
 public:
  Solver(Mesh mesh, Scenario scn, int k, SolverOptions opt = {})
      : mesh_(std::move(mesh)),
        conn_(build_connectivity(mesh_)),
        geo_(compute_geometry(mesh_, conn_)),
        scn_(std::move(scn)),
        opt_(std::move(opt)),
        k_(k),
        K_(num_basis(k)),
        L_(k + 1),
        tensors_(std::make_shared<const RefTensors>(build_ref_tensors(k))),
        kernels_(tensors_, opt_.backend),
        basis_(k),
        vol_(triangle_rule(2 * k + 2)),
        line_(gauss_legendre(k + 2)) {
    if (!scn_.bathymetry) throw ConfigError("scenario has no bathymetry");
    tabulate();
    project_bathymetry();
    for (std::size_t i = 0; i < conn_.edges.size(); ++i) {
      if (conn_.edges[i].boundary()) {
        boundary_slot_.push_back(static_cast<int>(boundary_edges_.size()));
        boundary_edges_.push_back(static_cast<int>(i));
      } else {
        boundary_slot_.push_back(-1);
      }
    }
    for (std::size_t e = 0; e < mesh_.num_elements(); ++e) {
      double perimeter = 0.0;
      for (int i : conn_.element_edges[e]) perimeter += geo_.edges[static_cast<std::size_t>(i)].len;
      inradius_.push_back(geo_.elements[e].detB / perimeter);
    }
    flux_.assign(conn_.edges.size() * 2 * 3 * static_cast<std::size_t>(K_), 0.0);
    ext_.assign(boundary_edges_.size() * 6 * static_cast<std::size_t>(L_), 0.0);
    lambda_.assign(conn_.edges.size(), 0.0);
  }

  int order() const { return k_; }
  int basis_size() const { return K_; }
  const Mesh& mesh() const { return mesh_; }
  const Connectivity& connectivity() const { return conn_; }
  const Geometry& geometry() const { return geo_; }
  const Scenario& scenario() const { return scn_; }
  const RefTensors& tensors() const { return *tensors_; }
  const NumericBasis& basis() const { return basis_; }
  const SweKernels& kernels() const { return kernels_; }
  std::span<const double> bathymetry(std::size_t e) const {
    return {hb_.data() + e * static_cast<std::size_t>(K_), static_cast<std::size_t>(K_)};
  }
  std::array<double, 2> bathymetry_gradient(std::size_t e) const { return hb_grad_[e]; }
  std::span<const double> lambdas() const { return lambda_; }
  /// Substeps used by the most recent step().
  int last_substeps() const { return last_substeps_; }

  // -------------------------------------------------------------------------
  // Projection and evaluation

  /// L2 projection of f onto the element basis with the volume rule.
  void project(std::size_t e, const std::function<double(double, double)>& f,
               std::span<double> out) const {
    const auto& g = geo_.elements[e];
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t q = 0; q < vol_.weights.size(); ++q) {
      auto x = g.map(vol_.points[q][0], vol_.points[q][1]);
      double w = vol_.weights[q] * f(x[0], x[1]) * g.sqrtDetB;
      const double* phi = &vol_phi_[q * static_cast<std::size_t>(K_)];
      for (int p = 0; p < K_; ++p) out[static_cast<std::size_t>(p)] += w * phi[p];
    }
  }

  /// Value of an element expansion at reference point (x1, x2).
  double evaluate(std::size_t e, std::span<const double> coef, double x1, double x2) const {
    std::array<double, 10> phi{};
    basis_.values(x1, x2, std::span<double>(phi.data(), static_cast<std::size_t>(K_)));
    double v = 0.0;
    for (int i = 0; i < K_; ++i) v += coef[static_cast<std::size_t>(i)] * phi[static_cast<std::size_t>(i)];
    return v / geo_.elements[e].sqrtDetB;
  }

  /// Projects the analytic solution at time t and solves for u.
  State project_initial(double t = 0.0) const {
    if (!scn_.exact) throw ConfigError("scenario '" + scn_.name + "' has no analytic solution");
    State s(mesh_.num_elements(), K_);
    for (std::size_t e = 0; e < s.E; ++e) {
      for (int j = 0; j < 3; ++j) {
        project(e, [&](double x, double y) {
          Triple v = scn_.exact(x, y, t);
          return j == kXi ? v.xi : (j == kU ? v.U : v.V);
        }, s.conserved(e, j));
      }
      auto xi = s.conserved(e, kXi);
      for (std::size_t q = 0; q < vol_.weights.size(); ++q) {
        const double* phi = &vol_phi_[q * static_cast<std::size_t>(K_)];
        double H = 0.0;
        for (int i = 0; i < K_; ++i) {
          H += (xi[static_cast<std::size_t>(i)] + hb_[e * static_cast<std::size_t>(K_) + static_cast<std::size_t>(i)]) * phi[i];
        }
        H /= geo_.elements[e].sqrtDetB;
        if (H < scn_.phys.h_min) {
          throw DryState("projected depth " + std::to_string(H) + " below minimum in element " +
                         std::to_string(e));
        }
      }
    }
    solve_velocity(s);
    return s;
  }

  // -------------------------------------------------------------------------
  // Velocity projection

  using SmallMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor, 10, 10>;
  using SmallRhs = Eigen::Matrix<double, Eigen::Dynamic, 2, 0, 10, 2>;

  /// A[p][m] = sum_i H_i G[p][i][m] / sqrt(detB) for element e.
  SmallMatrix velocity_matrix(const State& s, std::size_t e) const {
    std::array<double, 10> H{};
    auto xi = s.conserved(e, kXi);
    auto hb = bathymetry(e);
    for (int i = 0; i < K_; ++i) H[static_cast<std::size_t>(i)] = xi[static_cast<std::size_t>(i)] + hb[static_cast<std::size_t>(i)];
    codegen::KernelArgs a;
    a[codegen::Field::H] = std::span<const double>(H.data(), static_cast<std::size_t>(K_));
    a[codegen::Symbol::sqrtDetB] = geo_.elements[e].sqrtDetB;
    SmallMatrix A(K_, K_);
    kernels_.velocity_matrix(a, std::span<double>(A.data(), static_cast<std::size_t>(K_ * K_)));
    return A;
  }

  /// Solves (u H, psi) = (q, psi) per element by LU with partial pivoting.
  void solve_velocity(State& s) const {
    for (std::size_t e = 0; e < s.E; ++e) {
      SmallMatrix A = velocity_matrix(s, e);
      Eigen::PartialPivLU<SmallMatrix> lu(A);
      const auto& LU = lu.matrixLU();
      double dmax = 0.0;
      double dmin = std::numeric_limits<double>::infinity();
      for (int i = 0; i < K_; ++i) {
        dmax = std::max(dmax, std::abs(LU(i, i)));
        dmin = std::min(dmin, std::abs(LU(i, i)));
      }
      if (!(dmin > 1e-13 * dmax)) {
        throw SingularProjection("velocity projection singular in element " + std::to_string(e));
      }
      SmallRhs q(K_, 2);
      auto U = s.conserved(e, kU);
      auto V = s.conserved(e, kV);
      for (int i = 0; i < K_; ++i) {
        q(i, 0) = U[static_cast<std::size_t>(i)];
        q(i, 1) = V[static_cast<std::size_t>(i)];
      }
      SmallRhs x = lu.solve(q);
      auto u = s.velocity(e, kVelU);
      auto v = s.velocity(e, kVelV);
      for (int i = 0; i < K_; ++i) {
        u[static_cast<std::size_t>(i)] = x(i, 0);
        v[static_cast<std::size_t>(i)] = x(i, 1);
      }
    }
  }

  // -------------------------------------------------------------------------
  // Right-hand side

  /// Writes d/dt c into out (same layout as State::c). u must match c.
  void rhs(const State& s, double t, std::vector<double>& out, EdgeAudit* audit = nullptr,
           StepStats* stats = nullptr) const {
    out.assign(s.c.size(), 0.0);
    element_rhs(s, out);
    boundary_data(t);
    compute_lambdas(s);
    if (opt_.edges == EdgeAssembly::Trace) {
      edge_flux_trace(s);
    } else {
      edge_flux_tensor(s);
    }
    gather_edges(s, out, audit);
    source_rhs(s, t, out);
    if (stats) {
      stats->lambda_max = *std::max_element(lambda_.begin(), lambda_.end());
      stats->stiffness = 0.0;
      for (std::size_t e = 0; e < s.E; ++e) {
        double lam = 0.0;
        for (int i : conn_.element_edges[e]) lam = std::max(lam, lambda_[static_cast<std::size_t>(i)]);
        stats->stiffness = std::max(stats->stiffness, lam / inradius_[e]);
      }
    }
  }

  /// (A(c, u), grad phi_p) on every element; overwrites out.
  void element_rhs(const State& s, std::vector<double>& out) const {
    const auto K = static_cast<std::size_t>(K_);
    for (std::size_t e = 0; e < s.E; ++e) {
      codegen::KernelArgs a = element_args(s, e);
      for (int q = 0; q < 3; ++q) {
        kernels_.element(q, a, std::span<double>(out.data() + (e * 3 + static_cast<std::size_t>(q)) * K, K));
      }
    }
  }

  /// Lax-Friedrichs stabilization per edge: max of |u.n| + sqrt(g H) over
  /// both sides at the end points and the midpoint.
  void compute_lambdas(const State& s) const {
    for (std::size_t i = 0; i < conn_.edges.size(); ++i) {
      const Edge& ed = conn_.edges[i];
      const Vec2 n = geo_.edges[i].normal;
      double lam = 0.0;
      auto speed = [&](double xi, double hb, double u, double v) {
        double H = xi + hb;
        if (!(H > 0.0)) {
          throw DryState("non-positive depth " + std::to_string(H) + " on edge " + std::to_string(i));
        }
        return std::abs(u * n[0] + v * n[1]) + std::sqrt(scn_.phys.g * H);
      };
      for (int side = 0; side < 2; ++side) {
        if (side == 1 && ed.boundary()) {
          const double* x = &ext_[static_cast<std::size_t>(boundary_slot_[i]) * 6 * static_cast<std::size_t>(L_)];
          for (int q = 0; q < 3; ++q) {
            const double* l = &sample_legendre_[static_cast<std::size_t>(q * L_)];
            auto at = [&](int f) {
              double v = 0.0;
              for (int r = 0; r < L_; ++r) v += x[f * L_ + r] * l[r];
              return v;
            };
            lam = std::max(lam, speed(at(0), at(5), at(3), at(4)));
          }
          continue;
        }
        auto e = static_cast<std::size_t>(side == 0 ? ed.left : ed.right);
        int j = side == 0 ? ed.left_local : ed.right_local;
        double inv = 1.0 / geo_.elements[e].sqrtDetB;
        auto xi = s.conserved(e, kXi);
        auto hb = bathymetry(e);
        auto u = s.velocity(e, kVelU);
        auto v = s.velocity(e, kVelV);
        for (int q = 0; q < 3; ++q) {
          const double* tr = &sample_trace_[(static_cast<std::size_t>(j) * 3 + static_cast<std::size_t>(q)) * static_cast<std::size_t>(K_)];
          double vx = 0, vh = 0, vu = 0, vv = 0;
          for (int m = 0; m < K_; ++m) {
            auto mm = static_cast<std::size_t>(m);
            vx += xi[mm] * tr[m];
            vh += hb[mm] * tr[m];
            vu += u[mm] * tr[m];
            vv += v[mm] * tr[m];
          }
          lam = std::max(lam, speed(vx * inv, vh * inv, vu * inv, vv * inv));
        }
      }
      lambda_[i] = lam;
    }
  }

  /// Legendre coefficients of the Dirichlet data (xi, U, V, u, v, hb) on
  /// every boundary edge, in the parameter of the interior element.
  void boundary_data(double t) const {
    const auto L = static_cast<std::size_t>(L_);
    for (std::size_t b = 0; b < boundary_edges_.size(); ++b) {
      const Edge& ed = conn_.edges[static_cast<std::size_t>(boundary_edges_[b])];
      const auto& g = geo_.elements[static_cast<std::size_t>(ed.left)];
      EdgeParam param{ed.left_local};
      double* x = &ext_[b * 6 * L];
      std::fill(x, x + 6 * L, 0.0);
      for (std::size_t q = 0; q < line_.points.size(); ++q) {
        auto ref = param.point(line_.points[q]);
        auto p = g.map(ref[0], ref[1]);
        Triple d = scn_.boundary(p[0], p[1], t);
        double hb = scn_.bathymetry(p[0], p[1]);
        double H = d.xi + hb;
        std::array<double, 6> f{d.xi, d.U, d.V, d.U / H, d.V / H, hb};
        const double* l = &line_legendre_[q * L];
        for (std::size_t k = 0; k < 6; ++k) {
          for (std::size_t r = 0; r < L; ++r) x[k * L + r] += line_.weights[q] * f[k] * l[r];
        }
      }
    }
  }

  /// <A_hat, phi_p> on both sides of every edge into flux_, using the
  /// own/neighbour edge kernels.
  void edge_flux_tensor(const State& s) const {
    using codegen::Field;
    using codegen::Symbol;
    const auto K = static_cast<std::size_t>(K_);
    const auto L = static_cast<std::size_t>(L_);
    std::array<double, 10> tmp{};
    std::span<double> t(tmp.data(), K);
    for (std::size_t i = 0; i < conn_.edges.size(); ++i) {
      const Edge& ed = conn_.edges[i];
      const auto& eg = geo_.edges[i];
      for (int side = 0; side < (ed.boundary() ? 1 : 2); ++side) {
        auto e = static_cast<std::size_t>(side == 0 ? ed.left : ed.right);
        int j = side == 0 ? ed.left_local : ed.right_local;
        double sign = side == 0 ? 1.0 : -1.0;
        codegen::KernelArgs a = element_args(s, e);
        a[Symbol::len] = eg.len;
        a[Symbol::nx] = sign * eg.normal[0];
        a[Symbol::ny] = sign * eg.normal[1];
        a[Symbol::lambda] = lambda_[i];
        double* f = &flux_[((i * 2) + static_cast<std::size_t>(side)) * 3 * K];
        if (ed.boundary()) {
          const double* x = &ext_[static_cast<std::size_t>(boundary_slot_[i]) * 6 * L];
          const std::array<Field, 6> ext{Field::xi_ext, Field::U_ext, Field::V_ext,
                                         Field::u_ext,  Field::v_ext, Field::hb_ext};
          for (std::size_t k = 0; k < 6; ++k) a[ext[k]] = std::span<const double>(x + k * L, L);
          for (int q = 0; q < 3; ++q) {
            std::span<double> fq(f + static_cast<std::size_t>(q) * K, K);
            kernels_.edge_own(q, j, a, fq);
            kernels_.edge_ext(q, j, a, t);
            for (std::size_t p = 0; p < K; ++p) fq[p] += t[p];
          }
        } else {
          auto n = static_cast<std::size_t>(side == 0 ? ed.right : ed.left);
          int jn = side == 0 ? ed.right_local : ed.left_local;
          const auto& gn = geo_.elements[n];
          a[Symbol::detB_nb] = gn.detB;
          a[Symbol::sqrtDetB_nb] = gn.sqrtDetB;
          a[Field::xi_nb] = s.conserved(n, kXi);
          a[Field::U_nb] = s.conserved(n, kU);
          a[Field::V_nb] = s.conserved(n, kV);
          a[Field::u_nb] = s.velocity(n, kVelU);
          a[Field::v_nb] = s.velocity(n, kVelV);
          a[Field::hb_nb] = bathymetry(n);
          for (int q = 0; q < 3; ++q) {
            std::span<double> fq(f + static_cast<std::size_t>(q) * K, K);
            kernels_.edge_own(q, j, a, fq);
            kernels_.edge_nb(q, j, jn, a, t);
            for (std::size_t p = 0; p < K; ++p) fq[p] += t[p];
          }
        }
      }
    }
  }

  /// Same quantity as edge_flux_tensor. Both traces are expanded in the
  /// Legendre basis of the left parameter (neighbour coefficient r picks up
  /// (-1)^r), the flux is formed there and contracted with bnd_pair and
  /// bnd_triple for each side.
  void edge_flux_trace(const State& s) const {
    const auto K = static_cast<std::size_t>(K_);
    const auto L = static_cast<std::size_t>(L_);
    const double g = scn_.phys.g;
    const auto& BP = tensors_->bnd_pair.data();
    const auto& BT = tensors_->bnd_triple.data();
    // trace fields: xi, U, V, u, v, hb
    std::array<std::array<std::array<double, 4>, 6>, 2> tr{};
    std::array<std::array<double, 4>, 3> y{};
    std::array<std::array<double, 16>, 3> X{};
    auto traces = [&](std::size_t e, int j, bool flip, std::array<std::array<double, 4>, 6>& out) {
      const std::array<std::span<const double>, 6> f{s.conserved(e, kXi), s.conserved(e, kU),
                                                     s.conserved(e, kV), s.velocity(e, kVelU),
                                                     s.velocity(e, kVelV), bathymetry(e)};
      const double inv = 1.0 / geo_.elements[e].sqrtDetB;
      const double* bp = &BP[static_cast<std::size_t>(j) * K * L];
      for (std::size_t k = 0; k < 6; ++k) {
        for (std::size_t r = 0; r < L; ++r) {
          double v = 0.0;
          for (std::size_t m = 0; m < K; ++m) v += f[k][m] * bp[m * L + r];
          out[k][r] = (flip && (r & 1) ? -inv : inv) * v;
        }
      }
    };
    // side flux: F[q][p] = scale * (BT[j] : X[q] + BP[j] . y[q]), X, y in the side's parameter
    auto contract = [&](int j, double scale, bool flip, double* F) {
      const double* bp = &BP[static_cast<std::size_t>(j) * K * L];
      const double* bt = &BT[static_cast<std::size_t>(j) * K * L * L];
      for (std::size_t q = 0; q < 3; ++q) {
        for (std::size_t p = 0; p < K; ++p) {
          double v = 0.0;
          for (std::size_t r = 0; r < L; ++r) {
            double sr = flip && (r & 1) ? -1.0 : 1.0;
            v += sr * bp[p * L + r] * y[q][r];
            if (q == 0) continue;
            for (std::size_t t = 0; t < L; ++t) {
              double st = flip && ((r + t) & 1) ? -1.0 : 1.0;
              v += st * bt[(p * L + r) * L + t] * X[q][r * L + t];
            }
          }
          F[q * K + p] = scale * v;
        }
      }
    };
    for (std::size_t i = 0; i < conn_.edges.size(); ++i) {
      const Edge& ed = conn_.edges[i];
      const auto& eg = geo_.edges[i];
      const double nx = eg.normal[0];
      const double ny = eg.normal[1];
      const double lam = lambda_[i];
      traces(static_cast<std::size_t>(ed.left), ed.left_local, false, tr[0]);
      if (ed.boundary()) {
        const double* x = &ext_[static_cast<std::size_t>(boundary_slot_[i]) * 6 * L];
        for (std::size_t k = 0; k < 6; ++k) {
          for (std::size_t r = 0; r < L; ++r) tr[1][k][r] = x[k * L + r];
        }
      } else {
        traces(static_cast<std::size_t>(ed.right), ed.right_local, true, tr[1]);
      }
      for (std::size_t r = 0; r < L; ++r) {
        y[0][r] = 0.0;
        y[1][r] = 0.0;
        y[2][r] = 0.0;
        for (std::size_t b = 0; b < 2; ++b) {
          const double sl = b == 0 ? 0.5 * lam : -0.5 * lam;
          y[0][r] += 0.5 * (nx * tr[b][1][r] + ny * tr[b][2][r]) + sl * tr[b][0][r];
          y[1][r] += sl * tr[b][1][r];
          y[2][r] += sl * tr[b][2][r];
        }
        for (std::size_t t = 0; t < L; ++t) {
          double xu = 0.0, xv = 0.0;
          for (std::size_t b = 0; b < 2; ++b) {
            const auto& f = tr[b];
            const double pressure = 0.25 * g * f[0][r] * f[0][t] + 0.5 * g * f[0][r] * f[5][t];
            xu += 0.5 * f[1][r] * (nx * f[3][t] + ny * f[4][t]) + nx * pressure;
            xv += 0.5 * f[2][r] * (nx * f[3][t] + ny * f[4][t]) + ny * pressure;
          }
          X[1][r * L + t] = xu;
          X[2][r * L + t] = xv;
        }
      }
      contract(ed.left_local, eg.len / geo_.elements[static_cast<std::size_t>(ed.left)].sqrtDetB, false,
               &flux_[(i * 2) * 3 * K]);
      if (!ed.boundary()) {
        contract(ed.right_local, -eg.len / geo_.elements[static_cast<std::size_t>(ed.right)].sqrtDetB, true,
                 &flux_[(i * 2 + 1) * 3 * K]);
      }
    }
  }

  /// Subtracts the edge fluxes from out in local edge order per element and
  /// fills the mass audit.
  void gather_edges(const State& s, std::vector<double>& out, EdgeAudit* audit) const {
    const auto K = static_cast<std::size_t>(K_);
    if (audit) {
      audit->interior.clear();
      audit->boundary.clear();
      audit->interior_scale = 0.0;
      // d/dt integral of xi = sqrt(detB) / sqrt(2) * d/dt c_xi,0
      auto mass = [&](std::size_t i, int side, int e) {
        return -flux_[((i * 2) + static_cast<std::size_t>(side)) * 3 * K] *
               geo_.elements[static_cast<std::size_t>(e)].sqrtDetB / std::numbers::sqrt2;
      };
      for (std::size_t i = 0; i < conn_.edges.size(); ++i) {
        const Edge& ed = conn_.edges[i];
        if (ed.boundary()) {
          audit->boundary.push_back(mass(i, 0, ed.left));
        } else {
          audit->interior.push_back({mass(i, 0, ed.left), mass(i, 1, ed.right)});
          audit->interior_scale = std::max({audit->interior_scale, std::abs(audit->interior.back()[0]),
                                            std::abs(audit->interior.back()[1])});
        }
      }
    }
    for (std::size_t e = 0; e < s.E; ++e) {
      for (int j = 0; j < 3; ++j) {
        auto i = static_cast<std::size_t>(conn_.element_edges[e][static_cast<std::size_t>(j)]);
        const Edge& ed = conn_.edges[i];
        std::size_t side = (static_cast<std::size_t>(ed.left) == e && ed.left_local == j) ? 0 : 1;
        const double* f = &flux_[(i * 2 + side) * 3 * K];
        double* o = &out[e * 3 * K];
        for (std::size_t r = 0; r < 3 * K; ++r) o[r] -= f[r];
      }
    }
  }

  /// Friction, Coriolis, g xi grad(hb) and the projected forcing at time t.
  void source_rhs(const State& s, double t, std::vector<double>& out) const {
    const auto K = static_cast<std::size_t>(K_);
    const Physics& ph = scn_.phys;
    std::array<std::array<double, 10>, 3> forcing{};
    for (std::size_t e = 0; e < s.E; ++e) {
      auto xi = s.conserved(e, kXi);
      auto U = s.conserved(e, kU);
      auto V = s.conserved(e, kV);
      double* oU = &out[(e * 3 + kU) * K];
      double* oV = &out[(e * 3 + kV) * K];
      const auto [gx, gy] = hb_grad_[e];
      for (std::size_t p = 0; p < K; ++p) {
        oU[p] += -ph.tau * U[p] + ph.f_c * V[p] + ph.g * gx * xi[p];
        oV[p] += -ph.tau * V[p] - ph.f_c * U[p] + ph.g * gy * xi[p];
      }
      if (!scn_.forcing) continue;
      const auto& g = geo_.elements[e];
      for (auto& f : forcing) std::fill(f.begin(), f.end(), 0.0);
      for (std::size_t q = 0; q < vol_.weights.size(); ++q) {
        auto x = g.map(vol_.points[q][0], vol_.points[q][1]);
        Triple F = scn_.forcing(x[0], x[1], t);
        double w = vol_.weights[q] * g.sqrtDetB;
        const double* phi = &vol_phi_[q * K];
        for (std::size_t p = 0; p < K; ++p) {
          forcing[0][p] += w * F.xi * phi[p];
          forcing[1][p] += w * F.U * phi[p];
          forcing[2][p] += w * F.V * phi[p];
        }
      }
      for (int j = 0; j < 3; ++j) {
        double* o = &out[(e * 3 + static_cast<std::size_t>(j)) * K];
        for (std::size_t p = 0; p < K; ++p) o[p] += forcing[static_cast<std::size_t>(j)][p];
      }
    }
  }

  // -------------------------------------------------------------------------
  // Time stepping

  /// Stage count of the integrator used for this order.
  int stages() const { return k_ == 0 ? 1 : (k_ == 1 ? 2 : 3); }

  /// Substeps needed for a step of length dt given the stiffness of the
  /// first stage; 1 when substepping is off.
  int substeps_for(double stiffness, double dt) const {
    if (!opt_.substeps) return 1;
    double m = std::ceil(dt * stiffness / kStableCourant[static_cast<std::size_t>(std::min(k_, 3))]);
    return std::max(1, static_cast<int>(std::min(m, 1e6)));
  }

  /// Advances by dt with forward Euler (k = 0), Heun (k = 1) or Shu-Osher
  /// SSP-RK3 (k >= 2), written in increment form so a zero RHS leaves c
  /// unchanged. When dt exceeds the stable Courant number of the order the
  /// step is split into equal substeps of the same integrator.
  void step(State& s, double t, double dt) const {
    StepStats stats;
    rhs(s, t, stage_[0], nullptr, &stats);
    const int m = substeps_for(stats.stiffness, dt);
    const double h = dt / m;
    last_substeps_ = m;
    check_cfl(stats.lambda_max, h);
    for (int j = 0; j < m; ++j) {
      const double tj = t + j * h;
      if (j > 0) rhs(s, tj, stage_[0]);
      substep(s, tj, h);
    }
    for (double v : s.c) {
      if (!std::isfinite(v)) throw NonFiniteState("non-finite coefficient after step at t = " + std::to_string(t));
    }
  }

  /// Steps from t0 until t1 with the scenario time step; the last step is
  /// shortened to land on t1. Returns the step count.
  std::size_t run(State& s, double t0, double t1,
                  const std::function<void(const State&, double, std::size_t)>& observer = {}) const {
    const double dt = scn_.dt;
    auto n = static_cast<std::size_t>(std::ceil((t1 - t0) / dt - 1e-9));
    for (std::size_t i = 0; i < n; ++i) {
      double t = t0 + static_cast<double>(i) * dt;
      double h = std::min(dt, t1 - t);
      step(s, t, h);
      if (observer) observer(s, t + h, i + 1);
    }
    return n;
  }

 private:
  /// One integrator step from s with stage_[0] already holding L(s, t).
  void substep(State& s, double t, double dt) const {
    const State s0 = s;
    const std::vector<double>& L0 = stage_[0];
    std::vector<double>& L1 = stage_[1];
    std::vector<double>& L2 = stage_[2];
    auto advance = [&](std::initializer_list<std::pair<double, const std::vector<double>*>> terms) {
      for (std::size_t r = 0; r < s.c.size(); ++r) {
        double inc = 0.0;
        for (const auto& [w, Lv] : terms) inc += w * (*Lv)[r];
        s.c[r] = s0.c[r] + dt * inc;
      }
      solve_velocity(s);
    };
    if (k_ == 0) {
      advance({{1.0, &L0}});
    } else if (k_ == 1) {
      advance({{1.0, &L0}});
      rhs(s, t + dt, L1);
      advance({{0.5, &L0}, {0.5, &L1}});
    } else {
      advance({{1.0, &L0}});
      rhs(s, t + dt, L1);
      advance({{0.25, &L0}, {0.25, &L1}});
      rhs(s, t + 0.5 * dt, L2);
      advance({{1.0 / 6.0, &L0}, {1.0 / 6.0, &L1}, {2.0 / 3.0, &L2}});
    }
  }

  codegen::KernelArgs element_args(const State& s, std::size_t e) const {
    using codegen::Field;
    using codegen::Symbol;
    const auto& g = geo_.elements[e];
    codegen::KernelArgs a;
    a[Field::xi] = s.conserved(e, kXi);
    a[Field::U] = s.conserved(e, kU);
    a[Field::V] = s.conserved(e, kV);
    a[Field::u] = s.velocity(e, kVelU);
    a[Field::v] = s.velocity(e, kVelV);
    a[Field::hb] = bathymetry(e);
    a[Symbol::detB] = g.detB;
    a[Symbol::sqrtDetB] = g.sqrtDetB;
    a[Symbol::B11] = g.B11;
    a[Symbol::B12] = g.B12;
    a[Symbol::B21] = g.B21;
    a[Symbol::B22] = g.B22;
    a[Symbol::g] = scn_.phys.g;
    return a;
  }

  void tabulate() {
    const auto K = static_cast<std::size_t>(K_);
    const auto L = static_cast<std::size_t>(L_);
    vol_phi_.resize(vol_.weights.size() * K);
    for (std::size_t q = 0; q < vol_.weights.size(); ++q) {
      basis_.values(vol_.points[q][0], vol_.points[q][1], std::span<double>(&vol_phi_[q * K], K));
    }
    line_legendre_.resize(line_.points.size() * L);
    for (std::size_t q = 0; q < line_.points.size(); ++q) {
      basis_.legendre(line_.points[q], std::span<double>(&line_legendre_[q * L], L));
    }
    const std::array<double, 3> samples{0.0, 0.5, 1.0};
    sample_trace_.resize(3 * 3 * K);
    sample_legendre_.resize(3 * L);
    for (int j = 0; j < 3; ++j) {
      for (std::size_t q = 0; q < 3; ++q) {
        auto p = EdgeParam{j}.point(samples[q]);
        basis_.values(p[0], p[1], std::span<double>(&sample_trace_[(static_cast<std::size_t>(j) * 3 + q) * K], K));
      }
    }
    for (std::size_t q = 0; q < 3; ++q) {
      basis_.legendre(samples[q], std::span<double>(&sample_legendre_[q * L], L));
    }
  }

  /// hb projected to degree min(k, 1) (or 0 in Const mode). The source term
  /// uses the gradient of the P1 projection, constant per element.
  void project_bathymetry() {
    const auto K = static_cast<std::size_t>(K_);
    const int modes = opt_.hb_mode == HbMode::Const ? 1 : num_basis(std::min(k_, 1));
    const NumericBasis p1(1);
    const TriangleRule rule = triangle_rule(std::max(2 * k_ + 2, 4));
    hb_.assign(mesh_.num_elements() * K, 0.0);
    hb_grad_.assign(mesh_.num_elements(), {0.0, 0.0});
    std::array<double, 3> d1{}, d2{}, phi{};
    p1.gradients(0.0, 0.0, d1, d2);  // constant for P1
    for (std::size_t e = 0; e < mesh_.num_elements(); ++e) {
      const auto& g = geo_.elements[e];
      std::array<double, 3> b{};
      for (std::size_t q = 0; q < rule.weights.size(); ++q) {
        auto x = g.map(rule.points[q][0], rule.points[q][1]);
        double w = rule.weights[q] * scn_.bathymetry(x[0], x[1]) * g.sqrtDetB;
        p1.values(rule.points[q][0], rule.points[q][1], phi);
        for (std::size_t m = 0; m < 3; ++m) b[m] += w * phi[m];
      }
      for (int m = 0; m < std::min(modes, 3); ++m) {
        hb_[e * K + static_cast<std::size_t>(m)] = b[static_cast<std::size_t>(m)];
      }
      double r1 = 0.0, r2 = 0.0;
      for (std::size_t m = 0; m < 3; ++m) {
        r1 += b[m] * d1[m];
        r2 += b[m] * d2[m];
      }
      double s = 1.0 / (g.sqrtDetB * g.detB);
      hb_grad_[e] = {(g.B22 * r1 - g.B21 * r2) * s, (-g.B12 * r1 + g.B11 * r2) * s};
    }
  }

  void check_cfl(double lambda_max, double dt) const {
    double c = dt * lambda_max / geo_.min_edge;
    if (c > opt_.cfl_warn && opt_.warn && !cfl_warned_) {
      cfl_warned_ = true;
      opt_.warn("CFL number dt*lambda/h_min = " + std::to_string(c) + " exceeds " +
                std::to_string(opt_.cfl_warn));
    }
  }

  Mesh mesh_;
  Connectivity conn_;
  Geometry geo_;
  Scenario scn_;
  SolverOptions opt_;
  int k_;
  int K_;
  int L_;
  std::shared_ptr<const RefTensors> tensors_;
  SweKernels kernels_;
  NumericBasis basis_;
  TriangleRule vol_;
  LineRule line_;
  std::vector<double> vol_phi_;          // [q][i]
  std::vector<double> line_legendre_;    // [q][r]
  std::vector<double> sample_trace_;     // [j][q][i] at s = 0, 1/2, 1
  std::vector<double> sample_legendre_;  // [q][r]
  std::vector<double> hb_;               // [e][i]
  std::vector<std::array<double, 2>> hb_grad_;
  std::vector<int> boundary_edges_;
  std::vector<int> boundary_slot_;
  std::vector<double> inradius_;

  // Workspace; a Solver is not safe for concurrent RHS evaluations.
  mutable std::vector<double> flux_;  // [edge][side][eq][p]
  mutable std::vector<double> ext_;   // [boundary edge][field][r]
  mutable std::vector<double> lambda_;
  mutable std::array<std::vector<double>, 3> stage_;
  mutable bool cfl_warned_ = false;
  mutable int last_substeps_ = 0;
};

}  // namespace qfdg
