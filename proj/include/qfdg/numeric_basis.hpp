#pragma once

// Double-precision evaluation of the reference basis and edge Legendre
// polynomials, for quadrature-side work (projection, forcing, errors, output).

#include <cmath>
#include <span>
#include <vector>

#include "qfdg/symbolic.hpp"

namespace qfdg {

class NumericPoly2 {
 public:
  NumericPoly2() = default;
  explicit NumericPoly2(const Poly2& p) {
    for (const auto& [e, c] : p.terms()) {
      terms_.push_back({e.first, e.second, detail::to_double(c, p.radicand())});
    }
  }

  double operator()(double x1, double x2) const {
    double v = 0.0;
    for (const auto& t : terms_) v += t.c * std::pow(x1, t.a) * std::pow(x2, t.b);
    return v;
  }

 private:
  struct Term {
    int a, b;
    double c;
  };
  std::vector<Term> terms_;
};

class NumericBasis {
 public:
  explicit NumericBasis(int k) : k_(k) {
    RefBasis b = build_basis(k);
    for (std::size_t i = 0; i < b.functions.size(); ++i) {
      phi_.emplace_back(b.functions[i]);
      d1_.emplace_back(b.gradients[i][0]);
      d2_.emplace_back(b.gradients[i][1]);
    }
    for (const auto& l : edge_legendre(k + 1)) {
      std::vector<double> coef;
      for (const auto& [n, c] : l.terms()) {
        if (static_cast<std::size_t>(n) >= coef.size()) coef.resize(static_cast<std::size_t>(n) + 1);
        coef[static_cast<std::size_t>(n)] = detail::to_double(c, l.radicand());
      }
      legendre_.push_back(std::move(coef));
    }
  }

  int order() const { return k_; }
  int size() const { return static_cast<int>(phi_.size()); }
  int edge_size() const { return static_cast<int>(legendre_.size()); }

  void values(double x1, double x2, std::span<double> out) const {
    for (std::size_t i = 0; i < phi_.size(); ++i) out[i] = phi_[i](x1, x2);
  }
  void gradients(double x1, double x2, std::span<double> d1, std::span<double> d2) const {
    for (std::size_t i = 0; i < phi_.size(); ++i) {
      d1[i] = d1_[i](x1, x2);
      d2[i] = d2_[i](x1, x2);
    }
  }
  /// Orthonormal shifted Legendre polynomials on [0, 1].
  void legendre(double s, std::span<double> out) const {
    for (std::size_t r = 0; r < legendre_.size(); ++r) {
      double v = 0.0;
      for (std::size_t n = legendre_[r].size(); n-- > 0;) v = v * s + legendre_[r][n];
      out[r] = v;
    }
  }

 private:
  int k_;
  std::vector<NumericPoly2> phi_, d1_, d2_;
  std::vector<std::vector<double>> legendre_;
};

}  // namespace qfdg
