// Kepler/Delaunay machinery for the planar problem: two-sided Kepler-equation
// solvers, the elliptic and (left/right frame) hyperbolic coordinate maps,
// their inverses, and analytic derivatives through the implicit anomaly.
//
// Conventions (mk = 1 unless a gravitational parameter k is passed):
//   elliptic   u - e sin u  = ell,  E = -1/(2L^2),  e = sqrt(1 - (G/L)^2)
//   hyperbolic u - e sinh u = ell,  E = +k^2/(2L^2), e = sqrt(1 + (G/L)^2)
// The right frame reflects the base hyperbola about the y-axis before the
// rotation by g (focus at Q2, opening left); the left frame keeps the base
// orientation (focus at Q1, opening right).
#pragma once

#include <array>
#include <stdexcept>

#include "tctb/vec.hpp"

namespace tctb {

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Frame { RightAtQ2, LeftAtQ1 };

struct DelaunayElliptic {
    double L = 1.0;   // action, a = L^2
    double ell = 0.0; // mean anomaly
    double G = 1.0;   // angular momentum (signed)
    double g = 0.0;   // argument of periapsis

    double eccentricity() const { return std::sqrt(std::max(0.0, 1.0 - (G * G) / (L * L))); }
    double energy() const { return -1.0 / (2.0 * L * L); }
    double semimajor() const { return L * L; }
    double semiminor() const { return std::abs(L * G); }
};

struct DelaunayHyperbolic {
    double L = 1.0;
    double ell = 0.0;
    double G = 1.0;
    double g = 0.0;
    Frame frame = Frame::RightAtQ2;

    double eccentricity() const { return std::sqrt(1.0 + (G * G) / (L * L)); }
    double energy(double k = 1.0) const { return k * k / (2.0 * L * L); }
};

struct CartesianOrbitState {
    Vec2 q;  // position
    Vec2 p;  // velocity (unit mass)
};

// Kepler equation solvers (safeguarded Newton, bisection fallback).
double solve_kepler_elliptic(double ell, double e);
double solve_kepler_hyperbolic(double ell, double e);

CartesianOrbitState elliptic_to_cartesian(const DelaunayElliptic& el, double k = 1.0);
CartesianOrbitState hyperbolic_to_cartesian(const DelaunayHyperbolic& hy, double k = 1.0);

DelaunayElliptic elliptic_from_cartesian(const CartesianOrbitState& s, double k = 1.0);
DelaunayHyperbolic hyperbolic_from_cartesian(const CartesianOrbitState& s, Frame frame,
                                             double k = 1.0);

// Analytic derivatives of position (and velocity) with respect to
// (L, ell, G, g), chain rule through u(ell, L, G) included.  Index order of
// the derivative slots is fixed as {L, ell, G, g}.
struct StateDerivatives {
    Vec2 q, p;
    std::array<Vec2, 4> dq{};   // dq/d(L,ell,G,g)
    std::array<Vec2, 4> dp{};   // dp/d(L,ell,G,g)
    std::array<std::array<Vec2, 4>, 4> d2q{};  // order 2 only
    int order = 1;
};

StateDerivatives delaunay_derivatives(const DelaunayHyperbolic& hy, int order, double k = 1.0);
StateDerivatives delaunay_derivatives(const DelaunayElliptic& el, int order, double k = 1.0);

}  // namespace tctb
