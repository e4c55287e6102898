#pragma once

// Triangular meshes from split quadrilateral grids, connectivity, geometry
// and the `ghoddess-mesh 1` text format.
//
// Local edge j of a triangle (v0, v1, v2) is opposite vertex j and runs
//   edge 0: v1 -> v2,  edge 1: v2 -> v0,  edge 2: v0 -> v1,
// matching the reference parameterizations (1-s, s), (0, 1-s), (s, 0).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qfdg/errors.hpp"

namespace qfdg {

using Vec2 = std::array<double, 2>;

inline constexpr int kDirichlet = 1;

struct BoundaryEdge {
  int v0 = 0;
  int v1 = 0;
  int marker = kDirichlet;
  friend bool operator==(const BoundaryEdge&, const BoundaryEdge&) = default;
};

struct Mesh {
  std::vector<Vec2> vertices;
  std::vector<std::array<int, 3>> triangles;  // counterclockwise
  std::vector<BoundaryEdge> boundary;         // explicit markers

  std::size_t num_elements() const { return triangles.size(); }
  friend bool operator==(const Mesh&, const Mesh&) = default;
};

inline constexpr std::array<std::array<int, 2>, 3> kLocalEdgeVertices{{{1, 2}, {2, 0}, {0, 1}}};

struct Edge {
  int v0 = 0;  // traversal direction of the left element
  int v1 = 0;
  int left = -1;
  int right = -1;  // -1 on the boundary
  int left_local = 0;
  int right_local = -1;
  int marker = 0;  // 0 interior

  bool boundary() const { return right < 0; }
};

struct Connectivity {
  std::vector<Edge> edges;
  std::vector<std::array<int, 3>> element_edges;  // edge id per local edge
};

/// Builds the edge list. Every edge is shared by at most two triangles that
/// traverse it in opposite directions.
inline Connectivity build_connectivity(const Mesh& m) {
  Connectivity c;
  c.element_edges.assign(m.triangles.size(), {-1, -1, -1});
  std::map<std::pair<int, int>, int> lookup;
  const auto nv = static_cast<int>(m.vertices.size());
  for (std::size_t e = 0; e < m.triangles.size(); ++e) {
    const auto& tri = m.triangles[e];
    for (int j = 0; j < 3; ++j) {
      int a = tri[static_cast<std::size_t>(kLocalEdgeVertices[j][0])];
      int b = tri[static_cast<std::size_t>(kLocalEdgeVertices[j][1])];
      if (a < 0 || a >= nv || b < 0 || b >= nv) {
        throw ConnectivityError("triangle " + std::to_string(e) + " references missing vertex");
      }
      if (a == b) throw ConnectivityError("triangle " + std::to_string(e) + " repeats a vertex");
      auto key = std::minmax(a, b);
      auto it = lookup.find(key);
      if (it == lookup.end()) {
        Edge ed;
        ed.v0 = a;
        ed.v1 = b;
        ed.left = static_cast<int>(e);
        ed.left_local = j;
        lookup.emplace(key, static_cast<int>(c.edges.size()));
        c.element_edges[e][static_cast<std::size_t>(j)] = static_cast<int>(c.edges.size());
        c.edges.push_back(ed);
        continue;
      }
      Edge& ed = c.edges[static_cast<std::size_t>(it->second)];
      if (ed.right >= 0) {
        throw ConnectivityError("edge (" + std::to_string(key.first) + ", " +
                                std::to_string(key.second) + ") shared by more than two triangles");
      }
      if (ed.v0 != b || ed.v1 != a) {
        throw ConnectivityError("edge (" + std::to_string(key.first) + ", " +
                                std::to_string(key.second) + ") has inconsistent orientation");
      }
      ed.right = static_cast<int>(e);
      ed.right_local = j;
      c.element_edges[e][static_cast<std::size_t>(j)] = it->second;
    }
  }
  for (auto& ed : c.edges) {
    if (ed.boundary()) ed.marker = kDirichlet;
  }
  for (const auto& b : m.boundary) {
    auto it = lookup.find(std::minmax(b.v0, b.v1));
    if (it == lookup.end() || !c.edges[static_cast<std::size_t>(it->second)].boundary()) {
      throw ConnectivityError("boundary entry (" + std::to_string(b.v0) + ", " +
                              std::to_string(b.v1) + ") is not a boundary edge");
    }
    c.edges[static_cast<std::size_t>(it->second)].marker = b.marker;
  }
  return c;
}

struct ElementGeometry {
  std::array<Vec2, 3> a{};  // vertices
  double B11 = 0, B12 = 0, B21 = 0, B22 = 0;
  double detB = 0;
  double sqrtDetB = 0;

  Vec2 map(double x1, double x2) const {
    return {a[0][0] + B11 * x1 + B12 * x2, a[0][1] + B21 * x1 + B22 * x2};
  }
};

struct EdgeGeometry {
  double len = 0;
  Vec2 normal{};  // outward from the left element
};

struct Geometry {
  std::vector<ElementGeometry> elements;
  std::vector<EdgeGeometry> edges;
  double min_edge = 0;
};

inline ElementGeometry element_geometry(const Vec2& a0, const Vec2& a1, const Vec2& a2) {
  ElementGeometry g;
  g.a = {a0, a1, a2};
  g.B11 = a1[0] - a0[0];
  g.B12 = a2[0] - a0[0];
  g.B21 = a1[1] - a0[1];
  g.B22 = a2[1] - a0[1];
  g.detB = g.B11 * g.B22 - g.B12 * g.B21;
  g.sqrtDetB = std::sqrt(std::max(g.detB, 0.0));
  return g;
}

inline Geometry compute_geometry(const Mesh& m, const Connectivity& c) {
  Geometry geo;
  geo.elements.reserve(m.triangles.size());
  for (std::size_t e = 0; e < m.triangles.size(); ++e) {
    const auto& t = m.triangles[e];
    auto g = element_geometry(m.vertices[static_cast<std::size_t>(t[0])],
                              m.vertices[static_cast<std::size_t>(t[1])],
                              m.vertices[static_cast<std::size_t>(t[2])]);
    if (!(g.detB > 0.0)) {
      throw DegenerateElement("element " + std::to_string(e) + " has detB = " +
                              std::to_string(g.detB));
    }
    geo.elements.push_back(g);
  }
  geo.edges.reserve(c.edges.size());
  geo.min_edge = std::numeric_limits<double>::infinity();
  for (const auto& ed : c.edges) {
    const Vec2& p = m.vertices[static_cast<std::size_t>(ed.v0)];
    const Vec2& q = m.vertices[static_cast<std::size_t>(ed.v1)];
    double dx = q[0] - p[0];
    double dy = q[1] - p[1];
    EdgeGeometry g;
    g.len = std::hypot(dx, dy);
    g.normal = {dy / g.len, -dx / g.len};
    geo.min_edge = std::min(geo.min_edge, g.len);
    geo.edges.push_back(g);
  }
  return geo;
}

// ---------------------------------------------------------------------------
// Generators

/// SplitMix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based uniform draw in [0, 1) keyed by (seed, vertex, coordinate,
/// attempt): u = top 53 bits of
///   splitmix64(splitmix64(splitmix64(seed) ^ vertex) ^ (4 attempt + coord)).
inline double vertex_uniform(std::uint64_t seed, std::uint64_t vertex, int coord, int attempt) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ vertex);
  h = splitmix64(h ^ (4ULL * static_cast<std::uint64_t>(attempt) + static_cast<std::uint64_t>(coord)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

namespace detail {

/// Splits quad (SW, SE, NE, NW) along SW-NE when `even`, else along NW-SE.
inline void split_quad(int sw, int se, int ne, int nw, bool even,
                       std::vector<std::array<int, 3>>& out) {
  if (even) {
    out.push_back({sw, se, ne});
    out.push_back({sw, ne, nw});
  } else {
    out.push_back({sw, se, nw});
    out.push_back({se, ne, nw});
  }
}

inline void mark_boundary(Mesh& m) {
  Mesh tmp{m.vertices, m.triangles, {}};
  auto c = build_connectivity(tmp);
  m.boundary.clear();
  for (const auto& ed : c.edges) {
    if (ed.boundary()) m.boundary.push_back({ed.v0, ed.v1, kDirichlet});
  }
}

inline double signed_det(const Mesh& m, const std::array<int, 3>& t) {
  const Vec2& a = m.vertices[static_cast<std::size_t>(t[0])];
  const Vec2& b = m.vertices[static_cast<std::size_t>(t[1])];
  const Vec2& c = m.vertices[static_cast<std::size_t>(t[2])];
  return (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
}

}  // namespace detail

inline constexpr int kMaxLevel = 8;

/// (2^level)^2 quads over [0, 1000]^2, two triangles each. Every vertex is
/// moved by independent uniform offsets in [-perturb h, perturb h].
inline Mesh build_square_mesh(int level, double perturb, std::uint64_t seed) {
  if (level < 1 || level > kMaxLevel) {
    throw ConfigError("square mesh level must be in 1.." + std::to_string(kMaxLevel));
  }
  if (!(perturb >= 0.0 && perturb <= 0.2)) {
    throw ConfigError("perturbation must be in [0, 0.2]");
  }
  const int n = 1 << level;
  const double h = 1000.0 / n;
  Mesh m;
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) m.vertices.push_back({i * h, j * h});
  }
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      detail::split_quad(id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1), (i + j) % 2 == 0,
                         m.triangles);
    }
  }
  detail::mark_boundary(m);
  if (perturb == 0.0) return m;

  const std::vector<Vec2> base = m.vertices;
  std::vector<int> attempt(base.size(), 0);
  auto place = [&](std::size_t v) {
    for (int d = 0; d < 2; ++d) {
      double u = vertex_uniform(seed, v, d, attempt[v]);
      m.vertices[v][static_cast<std::size_t>(d)] =
          base[v][static_cast<std::size_t>(d)] + perturb * h * (2.0 * u - 1.0);
    }
  };
  for (std::size_t v = 0; v < base.size(); ++v) place(v);
  for (int round = 0;; ++round) {
    std::vector<std::size_t> bad;
    for (const auto& t : m.triangles) {
      if (detail::signed_det(m, t) <= 0.0) {
        for (int v : t) bad.push_back(static_cast<std::size_t>(v));
      }
    }
    if (bad.empty()) break;
    if (round >= 100) throw DegenerateElement("perturbed mesh stays degenerate after 100 redraws");
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    for (std::size_t v : bad) {
      ++attempt[v];
      place(v);
    }
  }
  return m;
}

/// Annulus 500 <= r <= 1000 made of 8 sectors of 45 degrees, each a
/// (2^level)^2 grid uniform in radius and angle.
inline Mesh build_ring_mesh(int level) {
  if (level < 1 || level > kMaxLevel) {
    throw ConfigError("ring mesh level must be in 1.." + std::to_string(kMaxLevel));
  }
  const int n = 1 << level;
  const int na = 8 * n;
  Mesh m;
  // vertex (b radial, a angular)
  auto id = [na](int b, int a) { return b * na + (a % na); };
  for (int b = 0; b <= n; ++b) {
    double r = 500.0 + 500.0 * b / n;
    for (int a = 0; a < na; ++a) {
      double th = 2.0 * std::numbers::pi * a / na;
      m.vertices.push_back({r * std::cos(th), r * std::sin(th)});
    }
  }
  // (r, theta) is positively oriented, so the square split stays CCW.
  for (int a = 0; a < na; ++a) {
    for (int b = 0; b < n; ++b) {
      detail::split_quad(id(b, a), id(b + 1, a), id(b + 1, a + 1), id(b, a + 1), (a + b) % 2 == 0,
                         m.triangles);
    }
  }
  detail::mark_boundary(m);
  return m;
}

// ---------------------------------------------------------------------------
// Text format

inline void write_mesh(const Mesh& m, std::ostream& os) {
  char buf[64];
  os << "ghoddess-mesh 1\n";
  os << "vertices " << m.vertices.size() << "\n";
  for (const auto& v : m.vertices) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v[0], v[1]);
    os << buf;
  }
  os << "triangles " << m.triangles.size() << "\n";
  for (const auto& t : m.triangles) os << t[0] << " " << t[1] << " " << t[2] << "\n";
  os << "boundary " << m.boundary.size() << "\n";
  for (const auto& b : m.boundary) os << b.v0 << " " << b.v1 << " " << b.marker << "\n";
}

inline void save_mesh(const Mesh& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_mesh(m, os);
  if (!os) throw Error("write failed: " + path);
}

inline Mesh read_mesh(std::istream& is) {
  std::size_t lineno = 0;
  std::string line;
  // Next non-empty line with comments stripped.
  auto next = [&](const char* what) -> std::istringstream {
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      if (line.find_first_not_of(" \t\r") != std::string::npos) return std::istringstream(line);
    }
    throw ParseError(lineno + 1, std::string("unexpected end of file, expected ") + what);
  };
  auto finish = [&](std::istringstream& ss) {
    std::string extra;
    if (ss >> extra) throw ParseError(lineno, "unexpected trailing token '" + extra + "'");
  };
  auto section = [&](const std::string& name) -> std::size_t {
    auto ss = next(name.c_str());
    std::string word;
    long long count = -1;
    if (!(ss >> word) || word != name || !(ss >> count) || count < 0) {
      throw ParseError(lineno, "expected '" + name + " <count>'");
    }
    finish(ss);
    return static_cast<std::size_t>(count);
  };

  {
    auto ss = next("header");
    std::string magic;
    int version = 0;
    if (!(ss >> magic >> version) || magic != "ghoddess-mesh" || version != 1) {
      throw ParseError(lineno, "expected header 'ghoddess-mesh 1'");
    }
    finish(ss);
  }
  Mesh m;
  std::size_t nv = section("vertices");
  m.vertices.resize(nv);
  for (auto& v : m.vertices) {
    auto ss = next("vertex");
    if (!(ss >> v[0] >> v[1]) || !std::isfinite(v[0]) || !std::isfinite(v[1])) {
      throw ParseError(lineno, "expected two finite coordinates");
    }
    finish(ss);
  }
  auto index = [&](std::istringstream& ss) {
    long long i = 0;
    if (!(ss >> i)) throw ParseError(lineno, "expected vertex index");
    if (i < 0 || static_cast<std::size_t>(i) >= nv) {
      throw ParseError(lineno, "vertex index " + std::to_string(i) + " out of range");
    }
    return static_cast<int>(i);
  };
  std::size_t nt = section("triangles");
  m.triangles.resize(nt);
  for (auto& t : m.triangles) {
    auto ss = next("triangle");
    for (int& v : t) v = index(ss);
    finish(ss);
  }
  std::size_t nb = section("boundary");
  m.boundary.resize(nb);
  for (auto& b : m.boundary) {
    auto ss = next("boundary edge");
    b.v0 = index(ss);
    b.v1 = index(ss);
    if (!(ss >> b.marker)) throw ParseError(lineno, "expected boundary marker");
    finish(ss);
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw ParseError(lineno, "unexpected content after boundary section");
    }
  }
  build_connectivity(m);  // ConnectivityError on non-manifold input
  return m;
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_mesh(is);
}

}  // namespace qfdg
