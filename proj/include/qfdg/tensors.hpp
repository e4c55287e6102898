#pragma once

// Reference-element and reference-edge contraction tensors. Every entry is an
// exact integral of a product of basis functions (and gradients / edge
// traces), computed by the symbolic engine and rounded to double once.
//
// Index conventions (all 0-based):
//   l      reference derivative direction (0: x1, 1: x2)
//   e, en  local edge of the own / neighbouring element (edge j is opposite
//          vertex j); neighbour traces are taken at 1 - s
//   p      test function
//   i, m   trial functions
//   r, t   orthonormal Legendre modes of an edge trace (Dirichlet data)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qfdg/quadrature.hpp"
#include "qfdg/symbolic.hpp"

namespace qfdg {

template <typename T>
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(std::vector<int> extents) : extents_(std::move(extents)) {
    std::size_t n = 1;
    for (int e : extents_) n *= static_cast<std::size_t>(e);
    data_.assign(n, T{});
  }

  const std::vector<int>& extents() const noexcept { return extents_; }
  int rank() const noexcept { return static_cast<int>(extents_.size()); }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }

  std::size_t offset(std::span<const int> idx) const {
    if (idx.size() > extents_.size()) throw IndexOutOfRange("too many tensor indices");
    std::size_t off = 0;
    for (std::size_t d = 0; d < extents_.size(); ++d) {
      int i = d < idx.size() ? idx[d] : 0;
      if (i < 0 || i >= extents_[d]) {
        throw IndexOutOfRange("tensor index " + std::to_string(i) + " out of range [0, " +
                              std::to_string(extents_[d]) + ")");
      }
      off = off * static_cast<std::size_t>(extents_[d]) + static_cast<std::size_t>(i);
    }
    return off;
  }

  template <typename... I>
  T& operator()(I... i) {
    std::array<int, sizeof...(I)> idx{static_cast<int>(i)...};
    return data_[offset(idx)];
  }
  template <typename... I>
  const T& operator()(I... i) const {
    std::array<int, sizeof...(I)> idx{static_cast<int>(i)...};
    return data_[offset(idx)];
  }

  /// Contiguous block selected by fixing the leading indices.
  std::span<const T> slice(std::span<const int> leading) const {
    std::size_t block = 1;
    for (std::size_t d = leading.size(); d < extents_.size(); ++d) {
      block *= static_cast<std::size_t>(extents_[d]);
    }
    return std::span<const T>(data_).subspan(offset(leading), block);
  }

 private:
  std::vector<int> extents_;
  std::vector<T> data_;
};

enum class TensorId {
  Mass,
  Stiff,
  StiffTriple,
  VolTriple,
  EdgePair,
  EdgePairX,
  EdgeTriple,
  EdgeTripleX,
  BndPair,
  BndTriple,
};

inline constexpr std::array<TensorId, 10> kAllTensors{
    TensorId::Mass,     TensorId::Stiff,     TensorId::StiffTriple, TensorId::VolTriple,
    TensorId::EdgePair, TensorId::EdgePairX, TensorId::EdgeTriple,  TensorId::EdgeTripleX,
    TensorId::BndPair,  TensorId::BndTriple,
};

struct TensorInfo {
  std::string_view name;
  int fixed;  // leading indices that select a block (l, e, en)
  std::vector<std::string_view> index_names;
};

inline TensorInfo tensor_info(TensorId id) {
  switch (id) {
    case TensorId::Mass: return {"mass", 0, {"p", "i"}};
    case TensorId::Stiff: return {"stiff", 1, {"l", "p", "i"}};
    case TensorId::StiffTriple: return {"stiff_triple", 1, {"l", "p", "i", "m"}};
    case TensorId::VolTriple: return {"vol_triple", 0, {"p", "i", "m"}};
    case TensorId::EdgePair: return {"edge_pair", 1, {"e", "p", "i"}};
    case TensorId::EdgePairX: return {"edge_pair_x", 2, {"e", "en", "p", "i"}};
    case TensorId::EdgeTriple: return {"edge_triple", 1, {"e", "p", "i", "m"}};
    case TensorId::EdgeTripleX: return {"edge_triple_x", 2, {"e", "en", "p", "i", "m"}};
    case TensorId::BndPair: return {"bnd_pair", 1, {"e", "p", "r"}};
    case TensorId::BndTriple: return {"bnd_triple", 1, {"e", "p", "r", "t"}};
  }
  return {"?", 0, {}};
}

template <typename T>
struct TensorSet {
  int order = 0;
  DenseTensor<T> mass;          // [p][i]
  DenseTensor<T> stiff;         // [l][p][i]       d_l phi_p * phi_i
  DenseTensor<T> stiff_triple;  // [l][p][i][m]    d_l phi_p * phi_i * phi_m
  DenseTensor<T> vol_triple;    // [p][i][m]
  DenseTensor<T> edge_pair;     // [e][p][i]
  DenseTensor<T> edge_pair_x;   // [e][en][p][i]   phi_i taken from edge en at 1 - s
  DenseTensor<T> edge_triple;   // [e][p][i][m]
  DenseTensor<T> edge_triple_x; // [e][en][p][i][m]
  DenseTensor<T> bnd_pair;      // [e][p][r]
  DenseTensor<T> bnd_triple;    // [e][p][r][t]

  int basis_size() const { return num_basis(order); }
  int trace_size() const { return order + 1; }

  const DenseTensor<T>& get(TensorId id) const {
    switch (id) {
      case TensorId::Mass: return mass;
      case TensorId::Stiff: return stiff;
      case TensorId::StiffTriple: return stiff_triple;
      case TensorId::VolTriple: return vol_triple;
      case TensorId::EdgePair: return edge_pair;
      case TensorId::EdgePairX: return edge_pair_x;
      case TensorId::EdgeTriple: return edge_triple;
      case TensorId::EdgeTripleX: return edge_triple_x;
      case TensorId::BndPair: return bnd_pair;
      case TensorId::BndTriple: return bnd_triple;
    }
    return mass;
  }
  DenseTensor<T>& get(TensorId id) {
    return const_cast<DenseTensor<T>&>(std::as_const(*this).get(id));
  }
};

using ExactTensors = TensorSet<RootCoeff>;
using RefTensors = TensorSet<double>;

/// Exact tensors of order k. Symmetric index groups are integrated once and
/// mirrored.
inline ExactTensors build_exact_tensors(int k) {
  if (k < 0 || k > kMaxOrder) throw UnsupportedOrder(k);
  const RefBasis basis = build_basis(k);
  const int K = basis.size();
  const int L = k + 1;
  const auto legendre = edge_legendre(L);

  ExactTensors t;
  t.order = k;
  t.mass = DenseTensor<RootCoeff>({K, K});
  t.stiff = DenseTensor<RootCoeff>({2, K, K});
  t.stiff_triple = DenseTensor<RootCoeff>({2, K, K, K});
  t.vol_triple = DenseTensor<RootCoeff>({K, K, K});
  t.edge_pair = DenseTensor<RootCoeff>({3, K, K});
  t.edge_pair_x = DenseTensor<RootCoeff>({3, 3, K, K});
  t.edge_triple = DenseTensor<RootCoeff>({3, K, K, K});
  t.edge_triple_x = DenseTensor<RootCoeff>({3, 3, K, K, K});
  t.bnd_pair = DenseTensor<RootCoeff>({3, K, L});
  t.bnd_triple = DenseTensor<RootCoeff>({3, K, L, L});

  const auto& phi = basis.functions;
  std::vector<std::vector<Poly2>> prod(K, std::vector<Poly2>(K));
  for (int i = 0; i < K; ++i) {
    for (int m = i; m < K; ++m) prod[i][m] = phi[i] * phi[m];
  }

  for (int p = 0; p < K; ++p) {
    for (int i = p; i < K; ++i) {
      auto v = integrate_triangle(prod[p][i]);
      t.mass(p, i) = v;
      t.mass(i, p) = v;
    }
  }
  for (int l = 0; l < 2; ++l) {
    for (int p = 0; p < K; ++p) {
      const Poly2& d = basis.gradients[p][l];
      for (int i = 0; i < K; ++i) t.stiff(l, p, i) = integrate_triangle(d * phi[i]);
      for (int i = 0; i < K; ++i) {
        for (int m = i; m < K; ++m) {
          auto v = integrate_triangle(d * prod[i][m]);
          t.stiff_triple(l, p, i, m) = v;
          t.stiff_triple(l, p, m, i) = v;
        }
      }
    }
  }
  for (int p = 0; p < K; ++p) {
    for (int i = p; i < K; ++i) {
      for (int m = i; m < K; ++m) {
        auto v = integrate_triangle(phi[p] * prod[i][m]);
        for (auto [a, b, c] : {std::array{p, i, m}, std::array{p, m, i}, std::array{i, p, m},
                               std::array{i, m, p}, std::array{m, p, i}, std::array{m, i, p}}) {
          t.vol_triple(a, b, c) = v;
        }
      }
    }
  }

  // Edge traces, own orientation and reversed (neighbour) orientation.
  std::array<std::vector<Poly1>, 3> tr;
  std::array<std::vector<Poly1>, 3> tr_rev;
  for (int e = 0; e < 3; ++e) {
    for (int i = 0; i < K; ++i) {
      tr[e].push_back(phi[i].trace(EdgeParam{e}));
      tr_rev[e].push_back(tr[e].back().reflected());
    }
  }

  for (int e = 0; e < 3; ++e) {
    for (int p = 0; p < K; ++p) {
      for (int i = p; i < K; ++i) {
        auto v = integrate_edge(tr[e][p] * tr[e][i]);
        t.edge_pair(e, p, i) = v;
        t.edge_pair(e, i, p) = v;
        for (int m = i; m < K; ++m) {
          auto w = integrate_edge(tr[e][p] * tr[e][i] * tr[e][m]);
          for (auto [a, b, c] :
               {std::array{p, i, m}, std::array{p, m, i}, std::array{i, p, m},
                std::array{i, m, p}, std::array{m, p, i}, std::array{m, i, p}}) {
            t.edge_triple(e, a, b, c) = w;
          }
        }
      }
      for (int r = 0; r < L; ++r) {
        t.bnd_pair(e, p, r) = integrate_edge(tr[e][p] * legendre[r]);
        for (int s = r; s < L; ++s) {
          auto v = integrate_edge(tr[e][p] * legendre[r] * legendre[s]);
          t.bnd_triple(e, p, r, s) = v;
          t.bnd_triple(e, p, s, r) = v;
        }
      }
    }
    for (int en = 0; en < 3; ++en) {
      for (int p = 0; p < K; ++p) {
        for (int i = 0; i < K; ++i) {
          t.edge_pair_x(e, en, p, i) = integrate_edge(tr[e][p] * tr_rev[en][i]);
          for (int m = i; m < K; ++m) {
            auto v = integrate_edge(tr[e][p] * tr_rev[en][i] * tr_rev[en][m]);
            t.edge_triple_x(e, en, p, i, m) = v;
            t.edge_triple_x(e, en, p, m, i) = v;
          }
        }
      }
    }
  }
  return t;
}

/// Rounds every exact entry to the nearest double.
inline RefTensors freeze(const ExactTensors& exact) {
  RefTensors t;
  t.order = exact.order;
  for (TensorId id : kAllTensors) {
    const auto& src = exact.get(id);
    DenseTensor<double> dst(src.extents());
    auto in = src.data();
    auto out = dst.data();
    for (std::size_t n = 0; n < in.size(); ++n) out[n] = in[n].to_double();
    t.get(id) = std::move(dst);
  }
  return t;
}

inline RefTensors build_ref_tensors(int k) { return freeze(build_exact_tensors(k)); }

struct TensorReport {
  double max_abs = 0.0;
  double max_rel = 0.0;  // |approx - exact| / max(|exact|, 1)
  std::string worst;
};

/// Recomputes every entry with Gauss quadrature (64-point collapsed rule on
/// the triangle, 8-point rule on edges; exact to degrees 14 and 15) and
/// reports the largest deviation.
inline TensorReport verify_tensors(const RefTensors& t) {
  const int k = t.order;
  const RefBasis basis = build_basis(k);
  const int K = basis.size();
  const int L = k + 1;
  const auto legendre = edge_legendre(L);
  const TriangleRule tri = collapsed_triangle_rule(8);
  const LineRule line = gauss_legendre(8);

  // Basis values and gradients at the triangle points.
  const std::size_t nq = tri.weights.size();
  std::vector<double> phi(nq * K);
  std::array<std::vector<double>, 2> dphi{std::vector<double>(nq * K),
                                          std::vector<double>(nq * K)};
  for (std::size_t q = 0; q < nq; ++q) {
    auto [x, y] = tri.points[q];
    for (int i = 0; i < K; ++i) {
      phi[q * K + i] = basis.functions[i].evaluate(x, y);
      dphi[0][q * K + i] = basis.gradients[i][0].evaluate(x, y);
      dphi[1][q * K + i] = basis.gradients[i][1].evaluate(x, y);
    }
  }
  // Edge trace values at the line points, own and reversed orientation.
  const std::size_t ns = line.weights.size();
  // tv[e][i * ns + q] at s_q, tv_rev at 1 - s_q
  std::array<std::vector<double>, 3> tv;
  std::array<std::vector<double>, 3> tv_rev;
  std::vector<double> leg(static_cast<std::size_t>(L) * ns);
  for (int e = 0; e < 3; ++e) {
    for (int i = 0; i < K; ++i) {
      for (std::size_t q = 0; q < ns; ++q) {
        auto pt = EdgeParam{e}.point(line.points[q]);
        auto pr = EdgeParam{e}.point(1.0 - line.points[q]);
        tv[e].push_back(basis.functions[i].evaluate(pt[0], pt[1]));
        tv_rev[e].push_back(basis.functions[i].evaluate(pr[0], pr[1]));
      }
    }
  }
  for (int r = 0; r < L; ++r) {
    for (std::size_t q = 0; q < ns; ++q) leg[r * ns + q] = legendre[r].evaluate(line.points[q]);
  }
  auto own = [&](int e, int i, std::size_t q) { return tv[e][i * ns + q]; };
  auto rev = [&](int e, int i, std::size_t q) { return tv_rev[e][i * ns + q]; };

  TensorReport report;
  auto check = [&](std::string_view name, double approx, double exact) {
    double a = std::abs(approx - exact);
    double r = a / std::max(std::abs(exact), 1.0);
    report.max_abs = std::max(report.max_abs, a);
    if (r > report.max_rel) {
      report.max_rel = r;
      report.worst = std::string(name);
    }
  };

  for (int p = 0; p < K; ++p) {
    for (int i = 0; i < K; ++i) {
      double mass = 0.0;
      std::array<double, 2> st{0.0, 0.0};
      for (std::size_t q = 0; q < nq; ++q) {
        double w = tri.weights[q];
        mass += w * phi[q * K + p] * phi[q * K + i];
        for (int l = 0; l < 2; ++l) st[l] += w * dphi[l][q * K + p] * phi[q * K + i];
      }
      check("mass", mass, t.mass(p, i));
      for (int l = 0; l < 2; ++l) check("stiff", st[l], t.stiff(l, p, i));
      for (int m = 0; m < K; ++m) {
        double g = 0.0;
        std::array<double, 2> tt{0.0, 0.0};
        for (std::size_t q = 0; q < nq; ++q) {
          double w = tri.weights[q] * phi[q * K + i] * phi[q * K + m];
          g += w * phi[q * K + p];
          for (int l = 0; l < 2; ++l) tt[l] += w * dphi[l][q * K + p];
        }
        check("vol_triple", g, t.vol_triple(p, i, m));
        for (int l = 0; l < 2; ++l) check("stiff_triple", tt[l], t.stiff_triple(l, p, i, m));
      }
    }
  }

  for (int e = 0; e < 3; ++e) {
    for (int p = 0; p < K; ++p) {
      for (int i = 0; i < K; ++i) {
        double ep = 0.0;
        for (std::size_t q = 0; q < ns; ++q) {
          ep += line.weights[q] * own(e, p, q) * own(e, i, q);
        }
        check("edge_pair", ep, t.edge_pair(e, p, i));
        for (int m = 0; m < K; ++m) {
          double et = 0.0;
          for (std::size_t q = 0; q < ns; ++q) {
            et += line.weights[q] * own(e, p, q) * own(e, i, q) * own(e, m, q);
          }
          check("edge_triple", et, t.edge_triple(e, p, i, m));
        }
        for (int en = 0; en < 3; ++en) {
          double ex = 0.0;
          for (std::size_t q = 0; q < ns; ++q) {
            ex += line.weights[q] * own(e, p, q) * rev(en, i, q);
          }
          check("edge_pair_x", ex, t.edge_pair_x(e, en, p, i));
          for (int m = 0; m < K; ++m) {
            double etx = 0.0;
            for (std::size_t q = 0; q < ns; ++q) {
              etx += line.weights[q] * own(e, p, q) * rev(en, i, q) * rev(en, m, q);
            }
            check("edge_triple_x", etx, t.edge_triple_x(e, en, p, i, m));
          }
        }
      }
      for (int r = 0; r < L; ++r) {
        double bp = 0.0;
        for (std::size_t q = 0; q < ns; ++q) {
          bp += line.weights[q] * own(e, p, q) * leg[r * ns + q];
        }
        check("bnd_pair", bp, t.bnd_pair(e, p, r));
        for (int u = 0; u < L; ++u) {
          double bt = 0.0;
          for (std::size_t q = 0; q < ns; ++q) {
            bt += line.weights[q] * own(e, p, q) * leg[r * ns + q] * leg[u * ns + q];
          }
          check("bnd_triple", bt, t.bnd_triple(e, p, r, u));
        }
      }
    }
  }
  return report;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// One CSV per tensor: header of index names then "value"; rows in
/// row-major index order.
inline void write_tensors_csv(const RefTensors& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (TensorId id : kAllTensors) {
    const auto info = tensor_info(id);
    const auto& tensor = t.get(id);
    std::ofstream os(dir / (std::string(info.name) + ".csv"));
    if (!os) throw Error("cannot write tensor file in " + dir.string());
    for (auto n : info.index_names) os << n << ',';
    os << "value\n";
    const auto& ext = tensor.extents();
    std::vector<int> idx(ext.size(), 0);
    auto data = tensor.data();
    for (std::size_t n = 0; n < data.size(); ++n) {
      for (int i : idx) os << i << ',';
      os << detail::format_double(data[n]) << '\n';
      for (int d = static_cast<int>(idx.size()) - 1; d >= 0; --d) {
        if (++idx[d] < ext[d]) break;
        idx[d] = 0;
      }
    }
  }
}

}  // namespace qfdg
