#pragma once

// Exact bivariate polynomial algebra on the reference triangle
//   T = {(0,0), (1,0), (0,1)}
// with rational coefficients and a single square-root prefactor per
// polynomial. This is the setup-time engine that turns every element and
// edge integral of the scheme into an exact number.

#include <array>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "qfdg/errors.hpp"

namespace qfdg {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

namespace detail {

/// Writes n = s^2 * m with m square-free and returns {s, m}.
inline std::pair<std::uint64_t, std::uint64_t> split_square(std::uint64_t n) {
  std::uint64_t s = 1;
  for (std::uint64_t f = 2; f * f <= n; ++f) {
    while (n % (f * f) == 0) {
      n /= f * f;
      s *= f;
    }
  }
  return {s, n};
}

inline BigInt factorial(unsigned n) {
  BigInt r = 1;
  for (unsigned i = 2; i <= n; ++i) r *= i;
  return r;
}

inline BigInt binomial(unsigned n, unsigned k) {
  return factorial(n) / (factorial(k) * factorial(n - k));
}

inline std::string rational_str(const Rational& r) {
  std::ostringstream os;
  os << boost::multiprecision::numerator(r);
  if (boost::multiprecision::denominator(r) != 1) {
    os << '/' << boost::multiprecision::denominator(r);
  }
  return os.str();
}

/// Correctly rounded double of r * sqrt(m).
inline double to_double(const Rational& r, std::uint64_t m) {
  using Float = boost::multiprecision::cpp_bin_float_100;
  if (r == 0) return 0.0;
  Float v = Float(boost::multiprecision::numerator(r)) /
            Float(boost::multiprecision::denominator(r));
  if (m != 1) v *= boost::multiprecision::sqrt(Float(m));
  return static_cast<double>(v);
}

}  // namespace detail

/// Exact number of the form rational * sqrt(radicand), radicand square-free.
class RootCoeff {
 public:
  RootCoeff() = default;
  RootCoeff(Rational r, std::uint64_t radicand = 1) : rational_(std::move(r)) {  // NOLINT
    if (radicand == 0) rational_ = 0;
    if (rational_ == 0) return;
    auto [s, m] = detail::split_square(radicand);
    rational_ *= s;
    radicand_ = m;
  }

  const Rational& rational() const noexcept { return rational_; }
  std::uint64_t radicand() const noexcept { return radicand_; }
  bool is_zero() const noexcept { return rational_ == 0; }
  bool is_rational() const noexcept { return radicand_ == 1; }
  double to_double() const { return detail::to_double(rational_, radicand_); }

  friend RootCoeff operator*(const RootCoeff& a, const RootCoeff& b) {
    if (a.is_zero() || b.is_zero()) return {};
    return RootCoeff(a.rational_ * b.rational_, a.radicand_ * b.radicand_);
  }
  friend RootCoeff operator*(const Rational& a, const RootCoeff& b) {
    return RootCoeff(a * b.rational_, b.radicand_);
  }
  friend RootCoeff operator+(const RootCoeff& a, const RootCoeff& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    if (a.radicand_ != b.radicand_) {
      throw IncompatibleRoots("cannot add sqrt(" + std::to_string(a.radicand_) +
                              ") and sqrt(" + std::to_string(b.radicand_) + ") terms");
    }
    return RootCoeff(a.rational_ + b.rational_, a.radicand_);
  }
  friend RootCoeff operator-(const RootCoeff& a) { return RootCoeff(-a.rational_, a.radicand_); }
  friend RootCoeff operator-(const RootCoeff& a, const RootCoeff& b) { return a + (-b); }
  friend bool operator==(const RootCoeff& a, const RootCoeff& b) {
    return a.rational_ == b.rational_ && (a.is_zero() || a.radicand_ == b.radicand_);
  }

  std::string str() const {
    std::string s = detail::rational_str(rational_);
    if (radicand_ != 1) s += "*sqrt(" + std::to_string(radicand_) + ")";
    return s;
  }

 private:
  Rational rational_ = 0;
  std::uint64_t radicand_ = 1;
};

enum class Var { x1, x2 };

class Poly1;

/// Edge j of the reference triangle is opposite vertex j (0-based) and is
/// traversed counterclockwise:
///   edge 0: (1,0) -> (0,1),  (x1, x2) = (1 - s, s)
///   edge 1: (0,1) -> (0,0),  (x1, x2) = (0, 1 - s)
///   edge 2: (0,0) -> (1,0),  (x1, x2) = (s, 0)
/// The neighbour across a shared edge traverses it as s -> 1 - s.
struct EdgeParam {
  int local_edge = 0;

  static constexpr std::array<std::array<int, 2>, 3> kOrigin{{{1, 0}, {0, 1}, {0, 0}}};
  static constexpr std::array<std::array<int, 2>, 3> kDirection{{{-1, 1}, {0, -1}, {1, 0}}};

  std::array<int, 2> origin() const { return kOrigin.at(static_cast<std::size_t>(local_edge)); }
  std::array<int, 2> direction() const {
    return kDirection.at(static_cast<std::size_t>(local_edge));
  }
  std::array<double, 2> point(double s) const {
    auto o = origin();
    auto d = direction();
    return {o[0] + s * d[0], o[1] + s * d[1]};
  }
};

/// Univariate polynomial in the edge parameter s with one root prefactor.
class Poly1 {
 public:
  using TermMap = std::map<int, Rational>;

  Poly1() = default;
  Poly1(TermMap terms, std::uint64_t radicand) : terms_(std::move(terms)) {
    normalize(radicand);
  }

  static Poly1 monomial(int n, Rational c = 1) { return Poly1(TermMap{{n, std::move(c)}}, 1); }

  const TermMap& terms() const noexcept { return terms_; }
  std::uint64_t radicand() const noexcept { return radicand_; }
  bool is_zero() const noexcept { return terms_.empty(); }
  int degree() const { return terms_.empty() ? -1 : terms_.rbegin()->first; }

  RootCoeff coeff(int n) const {
    auto it = terms_.find(n);
    return it == terms_.end() ? RootCoeff{} : RootCoeff(it->second, radicand_);
  }

  Poly1 times_root(std::uint64_t m) const { return Poly1(terms_, radicand_ * m); }

  /// q(s) -> q(1 - s)
  Poly1 reflected() const {
    TermMap out;
    for (const auto& [n, c] : terms_) {
      for (int r = 0; r <= n; ++r) {
        Rational b(detail::binomial(static_cast<unsigned>(n), static_cast<unsigned>(r)));
        out[r] += ((r % 2) ? -c : c) * b;
      }
    }
    return Poly1(std::move(out), radicand_);
  }

  double evaluate(double s) const {
    double scale = detail::to_double(Rational(1), radicand_);
    double sum = 0.0;
    for (const auto& [n, c] : terms_) {
      double p = 1.0;
      for (int i = 0; i < n; ++i) p *= s;
      sum += detail::to_double(c, 1) * p;
    }
    return scale * sum;
  }

  friend Poly1 operator*(const Poly1& p, const Poly1& q) {
    if (p.is_zero() || q.is_zero()) return {};
    TermMap out;
    for (const auto& [a, ca] : p.terms_) {
      for (const auto& [b, cb] : q.terms_) out[a + b] += ca * cb;
    }
    return Poly1(std::move(out), p.radicand_ * q.radicand_);
  }
  friend Poly1 operator+(const Poly1& p, const Poly1& q) {
    if (p.is_zero()) return q;
    if (q.is_zero()) return p;
    if (p.radicand_ != q.radicand_) {
      throw IncompatibleRoots("edge polynomials carry different root factors");
    }
    TermMap out = p.terms_;
    for (const auto& [n, c] : q.terms_) out[n] += c;
    return Poly1(std::move(out), p.radicand_);
  }
  friend bool operator==(const Poly1& p, const Poly1& q) {
    return p.terms_ == q.terms_ && (p.is_zero() || p.radicand_ == q.radicand_);
  }

  std::string str() const;

 private:
  void normalize(std::uint64_t radicand) {
    for (auto it = terms_.begin(); it != terms_.end();) {
      it = (it->second == 0) ? terms_.erase(it) : std::next(it);
    }
    radicand_ = 1;
    if (terms_.empty() || radicand == 0) {
      terms_.clear();
      return;
    }
    auto [s, m] = detail::split_square(radicand);
    if (s != 1) {
      for (auto& [n, c] : terms_) c *= s;
    }
    radicand_ = m;
  }

  TermMap terms_;
  std::uint64_t radicand_ = 1;
};

/// Bivariate polynomial sqrt(radicand) * sum q_ab x1^a x2^b, q_ab rational.
class Poly2 {
 public:
  using Exponents = std::pair<int, int>;
  using TermMap = std::map<Exponents, Rational>;

  Poly2() = default;
  Poly2(TermMap terms, std::uint64_t radicand = 1) : terms_(std::move(terms)) {  // NOLINT
    normalize(radicand);
  }

  static Poly2 constant(Rational c) { return Poly2(TermMap{{{0, 0}, std::move(c)}}); }
  static Poly2 monomial(int a, int b, Rational c = 1) {
    return Poly2(TermMap{{{a, b}, std::move(c)}});
  }
  static Poly2 x1() { return monomial(1, 0); }
  static Poly2 x2() { return monomial(0, 1); }

  const TermMap& terms() const noexcept { return terms_; }
  std::uint64_t radicand() const noexcept { return radicand_; }
  bool is_zero() const noexcept { return terms_.empty(); }

  int degree() const {
    int d = -1;
    for (const auto& [e, c] : terms_) d = std::max(d, e.first + e.second);
    return d;
  }

  RootCoeff coeff(int a, int b) const {
    auto it = terms_.find({a, b});
    return it == terms_.end() ? RootCoeff{} : RootCoeff(it->second, radicand_);
  }

  Poly2 times_root(std::uint64_t m) const { return Poly2(terms_, radicand_ * m); }

  Poly2 scaled(const Rational& s) const {
    TermMap out = terms_;
    for (auto& [e, c] : out) c *= s;
    return Poly2(std::move(out), radicand_);
  }

  Poly2 diff(Var v) const {
    TermMap out;
    for (const auto& [e, c] : terms_) {
      int n = (v == Var::x1) ? e.first : e.second;
      if (n == 0) continue;
      Exponents d = (v == Var::x1) ? Exponents{e.first - 1, e.second}
                                   : Exponents{e.first, e.second - 1};
      out[d] += c * n;
    }
    return Poly2(std::move(out), radicand_);
  }

  /// Composition with the affine edge parameterization.
  Poly1 trace(const EdgeParam& edge) const {
    auto o = edge.origin();
    auto d = edge.direction();
    // (o + d s)^n expanded once per variable.
    auto power = [](int origin, int dir, int n) {
      Poly1 base(Poly1::TermMap{{0, Rational(origin)}, {1, Rational(dir)}}, 1);
      Poly1 r = Poly1::monomial(0);
      for (int i = 0; i < n; ++i) r = r * base;
      return r;
    };
    Poly1 sum;
    for (const auto& [e, c] : terms_) {
      Poly1 t = power(o[0], d[0], e.first) * power(o[1], d[1], e.second);
      if (t.is_zero()) continue;
      Poly1::TermMap scaled = t.terms();
      for (auto& [n, tc] : scaled) tc *= c;
      sum = sum + Poly1(std::move(scaled), 1);
    }
    return sum.times_root(radicand_);
  }

  double evaluate(double x, double y) const {
    double sum = 0.0;
    for (const auto& [e, c] : terms_) {
      double p = detail::to_double(c, 1);
      for (int i = 0; i < e.first; ++i) p *= x;
      for (int i = 0; i < e.second; ++i) p *= y;
      sum += p;
    }
    return radicand_ == 1 ? sum : sum * detail::to_double(Rational(1), radicand_);
  }

  friend Poly2 operator*(const Poly2& p, const Poly2& q) {
    if (p.is_zero() || q.is_zero()) return {};
    TermMap out;
    for (const auto& [a, ca] : p.terms_) {
      for (const auto& [b, cb] : q.terms_) {
        out[{a.first + b.first, a.second + b.second}] += ca * cb;
      }
    }
    return Poly2(std::move(out), p.radicand_ * q.radicand_);
  }
  friend Poly2 operator+(const Poly2& p, const Poly2& q) {
    if (p.is_zero()) return q;
    if (q.is_zero()) return p;
    if (p.radicand_ != q.radicand_) {
      throw IncompatibleRoots("cannot add polynomials with root factors sqrt(" +
                              std::to_string(p.radicand_) + ") and sqrt(" +
                              std::to_string(q.radicand_) + ")");
    }
    TermMap out = p.terms_;
    for (const auto& [e, c] : q.terms_) out[e] += c;
    return Poly2(std::move(out), p.radicand_);
  }
  friend Poly2 operator-(const Poly2& p) { return p.scaled(Rational(-1)); }
  friend Poly2 operator-(const Poly2& p, const Poly2& q) { return p + (-q); }
  friend bool operator==(const Poly2& p, const Poly2& q) {
    return p.terms_ == q.terms_ && (p.is_zero() || p.radicand_ == q.radicand_);
  }

  /// Human-readable form in canonical term order, e.g. "sqrt(3)*(1 - x1 - 2*x2)".
  std::string str() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& [e, c] : terms_) {
      Rational mag = c < 0 ? Rational(-c) : c;
      if (first) {
        if (c < 0) os << '-';
      } else {
        os << (c < 0 ? " - " : " + ");
      }
      first = false;
      bool unit = (mag == 1);
      bool has_var = e.first + e.second > 0;
      if (!unit || !has_var) os << detail::rational_str(mag);
      auto var = [&](const char* name, int n, bool need_star) {
        if (n == 0) return;
        if (need_star) os << '*';
        os << name;
        if (n > 1) os << '^' << n;
      };
      var("x1", e.first, !unit);
      var("x2", e.second, !unit || e.first > 0);
    }
    if (radicand_ == 1) return os.str();
    return "sqrt(" + std::to_string(radicand_) + ")*(" + os.str() + ")";
  }

 private:
  void normalize(std::uint64_t radicand) {
    for (auto it = terms_.begin(); it != terms_.end();) {
      it = (it->second == 0) ? terms_.erase(it) : std::next(it);
    }
    radicand_ = 1;
    if (terms_.empty() || radicand == 0) {
      terms_.clear();
      return;
    }
    auto [s, m] = detail::split_square(radicand);
    if (s != 1) {
      for (auto& [e, c] : terms_) c *= s;
    }
    radicand_ = m;
  }

  TermMap terms_;
  std::uint64_t radicand_ = 1;
};

inline std::string Poly1::str() const {
  if (terms_.empty()) return "0";
  std::ostringstream os;
  bool first = true;
  for (const auto& [n, c] : terms_) {
    if (!first) os << " + ";
    first = false;
    os << '(' << detail::rational_str(c) << ')';
    if (n > 0) os << "*s^" << n;
  }
  if (radicand_ == 1) return os.str();
  return "sqrt(" + std::to_string(radicand_) + ")*(" + os.str() + ")";
}

/// a! b! / (a + b + 2)!, the integral of x1^a x2^b over the reference triangle.
inline Rational monomial_integral(int a, int b) {
  auto ua = static_cast<unsigned>(a);
  auto ub = static_cast<unsigned>(b);
  return Rational(detail::factorial(ua) * detail::factorial(ub),
                  detail::factorial(ua + ub + 2));
}

inline RootCoeff integrate_triangle(const Poly2& p) {
  Rational sum = 0;
  for (const auto& [e, c] : p.terms()) sum += c * monomial_integral(e.first, e.second);
  return RootCoeff(sum, p.radicand());
}

inline Poly2 poly_mul(const Poly2& p, const Poly2& q) { return p * q; }
inline Poly2 poly_diff(const Poly2& p, Var v) { return p.diff(v); }
inline Poly1 trace_on_edge(const Poly2& p, const EdgeParam& e) { return p.trace(e); }

/// Integral over s in [0, 1].
inline RootCoeff integrate_edge(const Poly1& q) {
  Rational sum = 0;
  for (const auto& [n, c] : q.terms()) sum += c / (n + 1);
  return RootCoeff(sum, q.radicand());
}

constexpr int num_basis(int k) { return (k + 1) * (k + 2) / 2; }
constexpr int kMaxOrder = 3;

/// Orthonormal modal basis of P_k on the reference triangle.
struct RefBasis {
  int order = 0;
  std::vector<Poly2> functions;
  std::vector<std::array<Poly2, 2>> gradients;

  int size() const { return static_cast<int>(functions.size()); }
};

namespace detail {

struct BasisEntry {
  std::uint64_t radicand;
  std::vector<std::array<int, 3>> terms;  // {a, b, integer coefficient}
};

// Hierarchical order: the first num_basis(k) entries span P_k.
inline const std::array<BasisEntry, 10>& basis_table() {
  static const std::array<BasisEntry, 10> table{{
      {2, {{0, 0, 1}}},
      {1, {{0, 0, 2}, {1, 0, -6}}},
      {12, {{0, 0, 1}, {1, 0, -1}, {0, 1, -2}}},
      {6, {{0, 0, 1}, {1, 0, -8}, {2, 0, 10}}},
      {3, {{0, 0, -1}, {1, 0, -4}, {2, 0, 5}, {0, 1, 12}, {0, 2, -15}}},
      {45, {{0, 0, 1}, {1, 0, -4}, {2, 0, 3}, {0, 1, -4}, {1, 1, 8}, {0, 2, 3}}},
      {8, {{0, 0, -1}, {1, 0, 15}, {2, 0, -45}, {3, 0, 35}}},
      {24,
       {{0, 0, -1}, {1, 0, 13}, {2, 0, -33}, {3, 0, 21}, {0, 1, 2}, {1, 1, -24}, {2, 1, 42}}},
      {40,
       {{0, 0, -1},
        {1, 0, 9},
        {2, 0, -15},
        {3, 0, 7},
        {0, 1, 6},
        {1, 1, -48},
        {2, 1, 42},
        {0, 2, -6},
        {1, 2, 42}}},
      {56,
       {{0, 0, -1},
        {1, 0, 3},
        {2, 0, -3},
        {3, 0, 1},
        {0, 1, 12},
        {1, 1, -24},
        {2, 1, 12},
        {0, 2, -30},
        {1, 2, 30},
        {0, 3, 20}}},
  }};
  return table;
}

}  // namespace detail

inline RefBasis build_basis(int k) {
  if (k < 0 || k > kMaxOrder) throw UnsupportedOrder(k);
  RefBasis basis;
  basis.order = k;
  const auto& table = detail::basis_table();
  for (int i = 0; i < num_basis(k); ++i) {
    const auto& entry = table[static_cast<std::size_t>(i)];
    Poly2::TermMap terms;
    for (const auto& t : entry.terms) terms[{t[0], t[1]}] = t[2];
    Poly2 phi(std::move(terms), entry.radicand);
    basis.gradients.push_back({phi.diff(Var::x1), phi.diff(Var::x2)});
    basis.functions.push_back(std::move(phi));
  }
  return basis;
}

/// Orthonormal shifted Legendre polynomials on [0, 1]:
/// sqrt(2r + 1) * P_r(2s - 1), r = 0..n-1. These span the edge trace space
/// used for Dirichlet exterior data.
inline std::vector<Poly1> edge_legendre(int n) {
  std::vector<Poly1> out;
  for (int r = 0; r < n; ++r) {
    Poly1::TermMap terms;
    auto ur = static_cast<unsigned>(r);
    for (unsigned j = 0; j <= ur; ++j) {
      BigInt c = detail::binomial(ur, j) * detail::binomial(ur + j, j);
      terms[static_cast<int>(j)] = ((ur + j) % 2) ? Rational(-c) : Rational(c);
    }
    out.emplace_back(std::move(terms), 2 * ur + 1);
  }
  return out;
}

}  // namespace qfdg
