#pragma once

// Numerical quadrature. Used only outside the interior scheme: initial and
// boundary-data projection, manufactured forcing, error measurement and the
// oracle that checks the exact reference tensors.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace qfdg {

struct LineRule {
  std::vector<double> points;  // in [0, 1]
  std::vector<double> weights;
};

struct TriangleRule {
  std::vector<std::array<double, 2>> points;  // on the reference triangle
  std::vector<double> weights;                // sum to 1/2
};

/// n-point Gauss-Legendre rule mapped to [0, 1]; exact to degree 2n - 1.
inline LineRule gauss_legendre(int n) {
  // Legendre P_n(x) and P_{n-1}(x) by the three-term recurrence.
  auto legendre = [n](double x) {
    double p0 = 1.0;
    double p1 = x;
    for (int j = 2; j <= n; ++j) {
      double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
      p0 = p1;
      p1 = p2;
    }
    return std::array<double, 2>{p1, p0};
  };
  LineRule rule;
  rule.points.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int iter = 0; iter < 100; ++iter) {
      auto [pn, pm] = legendre(x);
      double dx = pn / (n * (x * pn - pm) / (x * x - 1.0));
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    auto [pn, pm] = legendre(x);
    double dp = n * (x * pn - pm) / (x * x - 1.0);
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    auto lo = static_cast<std::size_t>(i);
    auto hi = static_cast<std::size_t>(n - 1 - i);
    rule.points[lo] = 0.5 * (1.0 - x);
    rule.points[hi] = 0.5 * (1.0 + x);
    rule.weights[lo] = 0.5 * w;
    rule.weights[hi] = 0.5 * w;
  }
  return rule;
}

/// Line rule exact for polynomials of the given degree.
inline LineRule line_rule(int degree) { return gauss_legendre(degree / 2 + 1); }

/// Collapsed (Duffy) tensor rule: x1 = a, x2 = (1 - a) b. With n points per
/// direction it is exact to degree 2n - 2.
inline TriangleRule collapsed_triangle_rule(int n) {
  LineRule g = gauss_legendre(n);
  TriangleRule rule;
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    for (std::size_t j = 0; j < g.points.size(); ++j) {
      double a = g.points[i];
      double b = g.points[j];
      rule.points.push_back({a, (1.0 - a) * b});
      rule.weights.push_back(g.weights[i] * g.weights[j] * (1.0 - a));
    }
  }
  return rule;
}

/// Triangle rule exact for polynomials of the given degree.
inline TriangleRule triangle_rule(int degree) {
  return collapsed_triangle_rule((degree + 2 + 1) / 2);
}

}  // namespace qfdg
