#pragma once

// Physical setup: constants, bathymetry, analytic solution, forcing and
// Dirichlet data.

#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "qfdg/errors.hpp"

namespace qfdg {

struct Physics {
  double g = 9.81;
  double f_c = 0.0;    // Coriolis, 1/s
  double tau = 0.0;    // bottom friction, 1/s
  double h_min = 1e-3; // admissible total depth, m
};

/// (xi, U, V) or the matching forcing components (F_xi, F_x, F_y).
struct Triple {
  double xi = 0.0;
  double U = 0.0;
  double V = 0.0;
};

using SpaceTimeField = std::function<Triple(double x, double y, double t)>;
using SpaceField = std::function<double(double x, double y)>;

struct Scenario {
  std::string name;
  Physics phys;
  SpaceField bathymetry;
  SpaceTimeField exact;     // optional; needed for errors and initial data
  SpaceTimeField boundary;  // Dirichlet data
  SpaceTimeField forcing;   // optional
  double dt = 0.5;
  double t_end = 1500.0;
};

/// Travelling sine wave over a tilted bottom:
///   xi = 2 + ya - 2 Ca sin(th), U = 2 ya + Ca Ct sin(th), V = ya + Ca Ct sin(th),
///   th = pi (x + y + Ct t) / 600, hb = 1 + x/1000 + 2 y/1000.
struct Manufactured {
  double Ca = 0.2;
  double Ct = 0.2;
  double ya = 0.3;

  static double bathymetry(double x, double y) { return 1.0 + x / 1000.0 + 2.0 * y / 1000.0; }

  Triple solution(double x, double y, double t) const {
    double s = std::sin(std::numbers::pi * (x + y + Ct * t) / 600.0);
    return {2.0 + ya - 2.0 * Ca * s, 2.0 * ya + Ca * Ct * s, ya + Ca * Ct * s};
  }

  /// F = d_t c + div A - r(c) without F, from the closed-form derivatives.
  Triple forcing(const Physics& p, double x, double y, double t) const {
    const double w = std::numbers::pi / 600.0;
    const double th = w * (x + y + Ct * t);
    const double s = std::sin(th);
    const double c = std::cos(th);
    const double xi = 2.0 + ya - 2.0 * Ca * s;
    const double U = 2.0 * ya + Ca * Ct * s;
    const double V = ya + Ca * Ct * s;
    const double xi_d = -2.0 * Ca * w * c;  // d/dx = d/dy
    const double q_d = Ca * Ct * w * c;     // U and V share it
    const double H = bathymetry(x, y) + xi;
    const double Hx = 1e-3 + xi_d;
    const double Hy = 2e-3 + xi_d;

    const double xi_t = Ct * xi_d;
    const double q_t = Ct * q_d;
    const double UU_x = (2.0 * U * q_d) / H - U * U * Hx / (H * H);
    const double UV_x = (q_d * V + U * q_d) / H - U * V * Hx / (H * H);
    const double UV_y = (q_d * V + U * q_d) / H - U * V * Hy / (H * H);
    const double VV_y = (2.0 * V * q_d) / H - V * V * Hy / (H * H);

    Triple f;
    f.xi = xi_t + q_d + q_d;
    f.U = q_t + UU_x + UV_y + p.tau * U - p.f_c * V + p.g * H * xi_d;
    f.V = q_t + UV_x + VV_y + p.tau * V + p.f_c * U + p.g * H * xi_d;
    return f;
  }
};

/// Square or ring runs with the manufactured solution.
inline Scenario manufactured_scenario(const std::string& name, Physics phys = {},
                                      Manufactured m = {}) {
  Scenario s;
  s.name = name;
  s.phys = phys;
  s.bathymetry = &Manufactured::bathymetry;
  s.exact = [m](double x, double y, double t) { return m.solution(x, y, t); };
  s.boundary = s.exact;
  s.forcing = [m, phys](double x, double y, double t) { return m.forcing(phys, x, y, t); };
  return s;
}

/// Still water over a linear bottom hb = h0 + sx x + sy y.
inline Scenario lake_at_rest_scenario(double xi0 = 0.25, double h0 = 1.0, double sx = 1e-3,
                                      double sy = 2e-3, double g = 9.81) {
  Scenario s;
  s.name = "lake-at-rest";
  s.phys.g = g;
  s.bathymetry = [h0, sx, sy](double x, double y) { return h0 + sx * x + sy * y; };
  s.exact = [xi0](double, double, double) { return Triple{xi0, 0.0, 0.0}; };
  s.boundary = s.exact;
  return s;
}

/// Constant state (xi0, U0, V0) over a linear bottom; unforced.
inline Scenario constant_scenario(Triple c0, double h0, double sx, double sy, Physics phys) {
  Scenario s;
  s.name = "custom";
  s.phys = phys;
  s.bathymetry = [h0, sx, sy](double x, double y) { return h0 + sx * x + sy * y; };
  s.exact = [c0](double, double, double) { return c0; };
  s.boundary = s.exact;
  return s;
}

}  // namespace qfdg
