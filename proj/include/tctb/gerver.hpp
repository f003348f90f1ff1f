// Idealized two-body collision mechanism in the mu = 0, chi = infinity limit:
// elastic velocity exchange, orbit intersection geometry in polar form, the
// energy-pumping two-collision map, its fixed-point family, and the 2x2
// derivative of the composed map via the implicit function theorem.
//
// Polar conventions (psi = 0 on the +y axis, increasing counterclockwise):
//   point(psi)   = r(psi) * (-sin psi, cos psi)
//   ellipse      r = G^2 / (1 - e sin(psi + g)),  rdot = (e/G) cos(psi + g)
//   hyperbola    r = G^2 / (1 - e sin(psi - g)),  rdot = (e/G) cos(psi - g)
//   velocity     v = rdot * er + (G/r) * epsi
// Asymptote headings: theta = psi_asym + pi/2 (outgoing), psi_asym + 3*pi/2
// (incoming); a horizontal incoming asymptote means g = -arctan(G/L).
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tctb/vec.hpp"

namespace tctb {

struct GerverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Slow variables transported by the collision map.  G3's sign is a branch
// choice; the canonical cycle has G3 > 0 entering collision 1 and G3 < 0
// entering collision 2 (helper gerver_g3_sign).
struct OrbitTriple {
    double E3;  // energy of the bound body, < 0
    double e3;  // eccentricity in (0,1)
    double g3;  // argument of periapsis
};

inline int gerver_g3_sign(int j) { return j == 1 ? +1 : -1; }

// One conic in the polar form above.  `hyperbolic` selects the sign rule in
// the denominator argument (psi - g vs psi + g).
struct PolarConic {
    double G;
    double e;
    double g;
    bool hyperbolic;

    static PolarConic ellipse(double E3, double G3, double g3);
    static PolarConic hyperbola(double E4, double G4, double g4);

    double denominator(double psi) const;
    double radius(double psi) const;       // throws GerverError on wrong branch
    double radial_velocity(double psi) const;
    Vec2 point(double psi) const;
    Vec2 velocity(double psi) const;
};

struct Intersection {
    double psi;
    bool tangent;  // set when the two roots coincide to tolerance
};

// Geometry of one idealized collision.
struct CollisionEvent {
    double psi;    // polar angle of the intersection
    double alpha;  // relative-velocity rotation angle
    Vec2 v3_minus, v4_minus, v3_plus, v4_plus;
    int j = 1;       // which intersection (1 or 2)
    int omega = 4;   // which body travels afterwards
    // post-collision elements of both bodies (single-center limit, k = 1)
    double E3_plus, G3_plus, g3_plus;
    double E4_plus, G4_plus, g4_plus;
};

// Elastic exchange: rotate the relative velocity by alpha about its pre-
// collision direction, keeping the center-of-mass velocity.
std::pair<Vec2, Vec2> elastic_collision(Vec2 v3m, Vec2 v4m, double alpha);

double polar_radius(const PolarConic& c, double psi);

// All polar angles where the two conics coincide (0, 1 or 2 of them),
// sorted ascending in [0, 2*pi); closed form, residual <= 1e-12.
std::vector<Intersection> orbit_intersections(const PolarConic& ellipse,
                                              const PolarConic& hyperbola);

// Outgoing-asymptote polar angle: first root of sin(psi - g) = 1/e along the
// direction of motion (sign G) starting from psi_now.  theta arises as
// psi_asym + pi/2.
double outgoing_asymptote_psi(double e, double G, double g, double psi_now);
double incoming_asymptote_psi(double e, double G, double g, double psi_now);

// The collision map.  The free parameter may be given either as the incoming
// hyperbola eccentricity e4 (> 1) or directly as the intersection angle psi.
struct GerverOptions {
    std::optional<double> alpha_hint;  // root chosen nearest to the hint
    int g3_sign = 0;                   // 0: derive from j
};

OrbitTriple gerver_map(const OrbitTriple& x, double e4, int j, int omega,
                       const GerverOptions& opts = {}, CollisionEvent* event = nullptr);

// psi-parametrized form: the incoming hyperbola (horizontal incoming
// asymptote, G4 > 0 branch) is solved to pass through the ellipse point at
// polar angle psi.
OrbitTriple gerver_map_psi(const OrbitTriple& x, double psi, int g3_sign, int omega,
                           double G4_guess, const GerverOptions& opts = {},
                           CollisionEvent* event = nullptr);

// Fixed-point family data, closed forms from the two-collision table.
struct GerverFixedPoint {
    double eps0, eps1;
    double lambda0;            // energy multiplier eps1^2/eps0^2
    double p1, p2;             // first-collision hyperbola angular momenta
    Vec2 collision_point[2];
    double psi[2];             // intersection angles of the two collisions
    double alpha[2];           // exchange rotation at each collision
    Vec2 v3m[2], v4m[2], v3p[2], v4p[2];
    double e4_star, e4_starstar;
    double E3_star;            // -1/2
    // Delaunay rows (L, u, G, g) per body/side, indexed [collision][side]
    // side 0 = before, 1 = after
    struct Row { double L, u, G, g; };
    Row q3[2][2], q4[2][2];
};

GerverFixedPoint fixed_point(double eps0);

// 2x2 derivative of (final e3, final g3) of the composed two-collision map
// with respect to the two intersection angles, implicit function theorem
// route with analytic partials.  Row i = d/d(psi_i), columns (e3, g3).
struct GerverDerivative {
    double m[2][2];
    double condition;  // worst condition number among the linear solves
};

GerverDerivative gerver_derivative(double eps0);

// Single-collision implicit systems, exposed for the hyperbolicity module
// (bordered solves) and for oracles.  Unknowns Z+ = (E3,G3,g3,G4,g4)+,
// inputs Zm = (E3,G3,g3)-, Zt = (G4,g4)-, and the intersection angle psi.
struct CollisionJacobians {
    Eigen::Matrix<double, 5, 5> dF_dZp;
    Eigen::Matrix<double, 5, 4> dF_dZm;  // columns (E3m, G3m, g3m, psi)
    Eigen::Matrix<double, 5, 2> dF_dZt;
    Eigen::Matrix<double, 2, 2> dI_dZt;
    Eigen::Matrix<double, 2, 4> dI_dZm;
};

struct CollisionSystems {
    // F: angular momentum conservation, radial momentum balance, position
    // continuity for the bound body, post-collision position match, and the
    // horizontal outgoing asymptote; I: horizontal incoming asymptote and the
    // pre-collision position match.
    static void F(const double Zm[3], const double Zt[2], const double Zp[5], double psi,
                  double out[5]);
    static void I(const double Zm[3], const double Zt[2], double psi, double out[2]);
    // analytic partials of both systems
    static CollisionJacobians jacobians(const double Zm[3], const double Zt[2],
                                        const double Zp[5], double psi);
};

}  // namespace tctb
