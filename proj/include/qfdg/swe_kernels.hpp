#pragma once

// Contraction specs of the mixed shallow water scheme and their compiled
// evaluators. Coefficients are taken with respect to the normalized physical
// basis phi_i o F^-1 / sqrt(detB), so pair terms carry 1/detB and triple terms
// 1/detB^{3/2}. Physical x- and y-derivatives combine the reference ones as
//   d/dx ~ (B22 d1 - B21 d2) / detB,   d/dy ~ (-B12 d1 + B11 d2) / detB.
//
// Edge kernels return F_p = <A_hat . n, phi_p> for one side; the solver
// subtracts it. A_hat is the Lax-Friedrichs flux
//   1/2 (A(own) + A(other)) . n + lambda/2 (c_own - c_other)
// with A = [(U, V); (U u + g/2 xi xi + g xi hb, U v); (V u, V v + g/2 ...)].

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qfdg/codegen.hpp"

namespace qfdg {

namespace swe {

using codegen::ContractionSpec;
using codegen::ContractionTerm;
using codegen::Field;
using codegen::Scalar;
using codegen::Symbol;

enum class Eq { xi, U, V };
inline constexpr std::array<const char*, 3> kEqName{"xi", "U", "V"};

namespace detail {

struct Fields {
  Field xi, U, V, u, v, hb;
};
inline constexpr Fields kOwn{Field::xi, Field::U, Field::V, Field::u, Field::v, Field::hb};
inline constexpr Fields kNb{Field::xi_nb, Field::U_nb, Field::V_nb,
                            Field::u_nb,  Field::v_nb, Field::hb_nb};
inline constexpr Fields kExt{Field::xi_ext, Field::U_ext, Field::V_ext,
                             Field::u_ext,  Field::v_ext, Field::hb_ext};

inline ContractionTerm term(TensorId id, std::vector<int> fixed, std::vector<Field> f, Scalar s) {
  return {codegen::TensorRef{id, std::move(fixed)}, std::move(f), std::move(s)};
}

/// Flux row of equation q dotted with (cx, cy). Pair terms go on `pair`,
/// triple terms on `triple`, both scaled by `ps` and `ts` respectively.
inline void flux_terms(Eq q, const Fields& f, TensorId pair, TensorId triple,
                       const std::vector<int>& fixed, const Scalar& cx, const Scalar& cy,
                       const Scalar& ps, const Scalar& ts, std::vector<ContractionTerm>& out) {
  const Scalar g = Symbol::g;
  switch (q) {
    case Eq::xi:
      out.push_back(term(pair, fixed, {f.U}, cx * ps));
      out.push_back(term(pair, fixed, {f.V}, cy * ps));
      break;
    case Eq::U:
      out.push_back(term(triple, fixed, {f.U, f.u}, cx * ts));
      out.push_back(term(triple, fixed, {f.U, f.v}, cy * ts));
      out.push_back(term(triple, fixed, {f.xi, f.xi}, Scalar(0.5) * g * cx * ts));
      out.push_back(term(triple, fixed, {f.xi, f.hb}, g * cx * ts));
      break;
    case Eq::V:
      out.push_back(term(triple, fixed, {f.V, f.u}, cx * ts));
      out.push_back(term(triple, fixed, {f.V, f.v}, cy * ts));
      out.push_back(term(triple, fixed, {f.xi, f.xi}, Scalar(0.5) * g * cy * ts));
      out.push_back(term(triple, fixed, {f.xi, f.hb}, g * cy * ts));
      break;
  }
}

inline Field conserved(Eq q, const Fields& f) {
  return q == Eq::xi ? f.xi : (q == Eq::U ? f.U : f.V);
}

}  // namespace detail

/// (A(c), grad phi_p) on one element.
inline ContractionSpec element_spec(Eq q) {
  using namespace detail;
  const Scalar D = Symbol::detB;
  const Scalar D32 = Scalar(Symbol::detB) * Symbol::sqrtDetB;
  const Scalar B11 = Symbol::B11, B12 = Symbol::B12, B21 = Symbol::B21, B22 = Symbol::B22;
  ContractionSpec s;
  s.name = std::string("elem_") + kEqName[static_cast<std::size_t>(q)];
  const TensorId pair = TensorId::Stiff;
  const TensorId triple = TensorId::StiffTriple;
  // x-flux against d1 and d2, then y-flux.
  for (int l = 0; l < 2; ++l) {
    Scalar wx = l == 0 ? B22 : -B21;
    Scalar wy = l == 0 ? -B12 : B11;
    flux_terms(q, kOwn, pair, triple, {l}, wx, wy, Scalar(1.0) / D, Scalar(1.0) / D32, s.terms);
  }
  return s;
}

/// A[p][m] = sum_i H_i G[p][i][m] / sqrt(detB).
inline ContractionSpec velocity_matrix_spec() {
  ContractionSpec s;
  s.name = "vel_matrix";
  s.free_indices = 2;
  s.terms.push_back(detail::term(TensorId::VolTriple, {}, {Field::H},
                                 Scalar(1.0) / Scalar(Symbol::sqrtDetB)));
  return s;
}

/// Own-side half of the flux on local edge j, including +lambda/2 c_own.
inline ContractionSpec edge_own_spec(Eq q, int j) {
  using namespace detail;
  const Scalar len = Symbol::len;
  const Scalar ps = Scalar(0.5) * len / Scalar(Symbol::detB);
  const Scalar ts = Scalar(0.5) * len / (Scalar(Symbol::detB) * Symbol::sqrtDetB);
  ContractionSpec s;
  s.name = std::string("edge_own_") + kEqName[static_cast<std::size_t>(q)] + "_e" +
           std::to_string(j);
  flux_terms(q, kOwn, TensorId::EdgePair, TensorId::EdgeTriple, {j}, Symbol::nx, Symbol::ny, ps,
             ts, s.terms);
  s.terms.push_back(term(TensorId::EdgePair, {j}, {conserved(q, kOwn)}, ps * Symbol::lambda));
  return s;
}

/// Neighbour half across an interior edge: own local edge j, neighbour
/// local edge jn. Includes -lambda/2 c_nb.
inline ContractionSpec edge_nb_spec(Eq q, int j, int jn) {
  using namespace detail;
  const Scalar len = Symbol::len;
  const Scalar sL = Symbol::sqrtDetB;
  const Scalar ps = Scalar(0.5) * len / (sL * Symbol::sqrtDetB_nb);
  const Scalar ts = Scalar(0.5) * len / (sL * Symbol::detB_nb);
  ContractionSpec s;
  s.name = std::string("edge_nb_") + kEqName[static_cast<std::size_t>(q)] + "_e" +
           std::to_string(j) + "_n" + std::to_string(jn);
  flux_terms(q, kNb, TensorId::EdgePairX, TensorId::EdgeTripleX, {j, jn}, Symbol::nx, Symbol::ny,
             ps, ts, s.terms);
  s.terms.push_back(
      term(TensorId::EdgePairX, {j, jn}, {conserved(q, kNb)}, -(ps * Symbol::lambda)));
  return s;
}

/// Exterior half on a Dirichlet edge. Exterior fields are Legendre
/// coefficients in the own edge parameter s, unnormalized by geometry.
inline ContractionSpec edge_ext_spec(Eq q, int j) {
  using namespace detail;
  const Scalar ps = Scalar(0.5) * Scalar(Symbol::len) / Scalar(Symbol::sqrtDetB);
  ContractionSpec s;
  s.name = std::string("edge_ext_") + kEqName[static_cast<std::size_t>(q)] + "_e" +
           std::to_string(j);
  flux_terms(q, kExt, TensorId::BndPair, TensorId::BndTriple, {j}, Symbol::nx, Symbol::ny, ps, ps,
             s.terms);
  s.terms.push_back(term(TensorId::BndPair, {j}, {conserved(q, kExt)}, -(ps * Symbol::lambda)));
  return s;
}

/// Every kernel of the scheme for one order, in a fixed order.
inline std::vector<ContractionSpec> all_specs() {
  std::vector<ContractionSpec> out;
  for (Eq q : {Eq::xi, Eq::U, Eq::V}) out.push_back(element_spec(q));
  out.push_back(velocity_matrix_spec());
  for (Eq q : {Eq::xi, Eq::U, Eq::V}) {
    for (int j = 0; j < 3; ++j) out.push_back(edge_own_spec(q, j));
  }
  for (Eq q : {Eq::xi, Eq::U, Eq::V}) {
    for (int j = 0; j < 3; ++j) {
      for (int jn = 0; jn < 3; ++jn) out.push_back(edge_nb_spec(q, j, jn));
    }
  }
  for (Eq q : {Eq::xi, Eq::U, Eq::V}) {
    for (int j = 0; j < 3; ++j) out.push_back(edge_ext_spec(q, j));
  }
  return out;
}

}  // namespace swe

enum class KernelBackend { Direct, Interpreted };

/// Compiled kernels of one order. Direct uses grouped dense loops; Interpreted
/// runs the lowered IR.
class SweKernels {
 public:
  SweKernels(std::shared_ptr<const RefTensors> tensors, KernelBackend backend)
      : tensors_(std::move(tensors)), backend_(backend) {
    using swe::Eq;
    for (int q = 0; q < 3; ++q) {
      auto eq = static_cast<Eq>(q);
      elem_[q] = add(swe::element_spec(eq));
      for (int j = 0; j < 3; ++j) {
        own_[q][j] = add(swe::edge_own_spec(eq, j));
        ext_[q][j] = add(swe::edge_ext_spec(eq, j));
        for (int jn = 0; jn < 3; ++jn) nb_[q][j][jn] = add(swe::edge_nb_spec(eq, j, jn));
      }
    }
    vel_ = add(swe::velocity_matrix_spec());
  }

  const RefTensors& tensors() const { return *tensors_; }
  KernelBackend backend() const { return backend_; }

  void element(int q, const codegen::KernelArgs& a, std::span<double> out) const {
    run(elem_[q], a, out);
  }
  void velocity_matrix(const codegen::KernelArgs& a, std::span<double> out) const {
    run(vel_, a, out);
  }
  void edge_own(int q, int j, const codegen::KernelArgs& a, std::span<double> out) const {
    run(own_[q][j], a, out);
  }
  void edge_nb(int q, int j, int jn, const codegen::KernelArgs& a, std::span<double> out) const {
    run(nb_[q][j][jn], a, out);
  }
  void edge_ext(int q, int j, const codegen::KernelArgs& a, std::span<double> out) const {
    run(ext_[q][j], a, out);
  }

 private:
  struct Entry {
    codegen::Contraction direct;
    codegen::KernelIR ir;
  };

  std::size_t add(const codegen::ContractionSpec& spec) {
    Entry e;
    if (backend_ == KernelBackend::Direct) {
      e.direct = codegen::Contraction(spec, *tensors_);
    } else {
      e.ir = codegen::lower(spec, *tensors_);
    }
    entries_.push_back(std::move(e));
    return entries_.size() - 1;
  }

  void run(std::size_t id, const codegen::KernelArgs& a, std::span<double> out) const {
    const Entry& e = entries_[id];
    if (backend_ == KernelBackend::Direct) {
      e.direct.evaluate(a, out);
    } else {
      auto r = codegen::interpret(e.ir, a);
      std::copy(r.begin(), r.end(), out.begin());
    }
  }

  std::shared_ptr<const RefTensors> tensors_;
  KernelBackend backend_;
  std::vector<Entry> entries_;
  std::array<std::size_t, 3> elem_{};
  std::array<std::array<std::size_t, 3>, 3> own_{};
  std::array<std::array<std::size_t, 3>, 3> ext_{};
  std::array<std::array<std::array<std::size_t, 3>, 3>, 3> nb_{};
  std::size_t vel_ = 0;
};

}  // namespace qfdg
