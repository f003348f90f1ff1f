#include "tctb/gerver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "tctb/kepler.hpp"

namespace tctb {

PolarConic PolarConic::ellipse(double E3, double G3, double g3) {
    double e = std::sqrt(std::max(0.0, 1.0 + 2.0 * E3 * G3 * G3));
    return {G3, e, g3, false};
}

PolarConic PolarConic::hyperbola(double E4, double G4, double g4) {
    double e = std::sqrt(1.0 + 2.0 * E4 * G4 * G4);
    return {G4, e, g4, true};
}

double PolarConic::denominator(double psi) const {
    return hyperbolic ? 1.0 - e * std::sin(psi - g) : 1.0 - e * std::sin(psi + g);
}

double PolarConic::radius(double psi) const {
    double d = denominator(psi);
    if (d <= 0.0) throw GerverError("polar_radius: wrong branch (nonpositive denominator)");
    return G * G / d;
}

double PolarConic::radial_velocity(double psi) const {
    return hyperbolic ? (e / G) * std::cos(psi - g) : (e / G) * std::cos(psi + g);
}

Vec2 PolarConic::point(double psi) const {
    double r = radius(psi);
    return {-r * std::sin(psi), r * std::cos(psi)};
}

Vec2 PolarConic::velocity(double psi) const {
    double r = radius(psi);
    Vec2 er{-std::sin(psi), std::cos(psi)};
    Vec2 epsi{-std::cos(psi), -std::sin(psi)};
    return radial_velocity(psi) * er + (G / r) * epsi;
}

double polar_radius(const PolarConic& c, double psi) { return c.radius(psi); }

std::pair<Vec2, Vec2> elastic_collision(Vec2 v3m, Vec2 v4m, double alpha) {
    Vec2 d = v3m - v4m;
    double nd = norm(d);
    if (nd == 0.0) throw GerverError("elastic_collision: zero relative velocity");
    Vec2 n = rotate(d / nd, alpha);
    Vec2 c = (v3m + v4m) / 2.0;
    return {c + (nd / 2.0) * n, c - (nd / 2.0) * n};
}

std::vector<Intersection> orbit_intersections(const PolarConic& ell, const PolarConic& hyp) {
    // 1/r3 - 1/r4 = 0 is K + S sin(psi) + C cos(psi) = 0
    double S = -(ell.e / (ell.G * ell.G)) * std::cos(ell.g) +
               (hyp.e / (hyp.G * hyp.G)) * std::cos(hyp.g);
    double C = -(ell.e / (ell.G * ell.G)) * std::sin(ell.g) -
               (hyp.e / (hyp.G * hyp.G)) * std::sin(hyp.g);
    double K = 1.0 / (ell.G * ell.G) - 1.0 / (hyp.G * hyp.G);
    double A = std::hypot(S, C);
    std::vector<Intersection> out;
    if (A < std::abs(K)) return out;
    double phi = std::atan2(C, S);
    double x = std::asin(std::clamp(-K / A, -1.0, 1.0));
    bool tangent = (A - std::abs(K)) <= 1e-12 * A;
    for (double root : {x, kPi - x}) {
        double psi = wrap_positive(root - phi);
        if (hyp.denominator(psi) <= 0.0) continue;
        out.push_back({psi, tangent});
        if (tangent) break;
    }
    std::sort(out.begin(), out.end(),
              [](const Intersection& a, const Intersection& b) { return a.psi < b.psi; });
    return out;
}

double outgoing_asymptote_psi(double e, double G, double g, double psi_now) {
    double x1 = std::asin(1.0 / e), x2 = kPi - std::asin(1.0 / e);
    double best = 0.0;
    bool have = false;
    for (double x : {x1, x2}) {
        double base = g + x, cand;
        if (G > 0) {
            double n = std::ceil((psi_now - base) / kTwoPi - 1e-12);
            cand = base + kTwoPi * n;
            if (!have || cand < best) { best = cand; have = true; }
        } else {
            double n = std::floor((psi_now - base) / kTwoPi + 1e-12);
            cand = base + kTwoPi * n;
            if (!have || cand > best) { best = cand; have = true; }
        }
    }
    return best;
}

double incoming_asymptote_psi(double e, double G, double g, double psi_now) {
    // first asymptote against the direction of motion
    return outgoing_asymptote_psi(e, -G, g, psi_now);
}

namespace {

struct HyperElements {
    double E, G, g, e;
};

// instantaneous conic through (P, v) about the single center at the origin
HyperElements conic_from_state(Vec2 P, Vec2 v) {
    double r = norm(P);
    double E = dot(v, v) / 2.0 - 1.0 / r;
    double G = cross(P, v);
    double e2 = 1.0 + 2.0 * E * G * G;
    double e = std::sqrt(std::max(0.0, e2));
    double psi = std::atan2(-P.x, P.y);
    double rdot = dot(P, v) / r;
    double s = (1.0 - G * G / r) / e;
    double c = rdot * G / e;
    double g = E > 0 ? psi - std::atan2(s, c)   // r = G^2/(1 - e sin(psi - g))
                     : std::atan2(s, c) - psi;  // r = G^2/(1 - e sin(psi + g))
    return {E, G, wrap_angle(g), e};
}

// wrapped theta+ - pi for the traveler candidate; NaN if not hyperbolic
double exit_defect(Vec2 P, Vec2 v) {
    double r = norm(P);
    double E = dot(v, v) / 2.0 - 1.0 / r;
    if (E <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    HyperElements h = conic_from_state(P, v);
    if (h.e <= 1.0) return std::numeric_limits<double>::quiet_NaN();
    double psi = std::atan2(-P.x, P.y);
    double psio = outgoing_asymptote_psi(h.e, h.G, h.g, psi);
    return wrap_angle(psio - kPi / 2.0);
}

double solve_alpha(Vec2 P, Vec2 v3m, Vec2 v4m, int omega,
                   const std::optional<double>& hint) {
    auto defect = [&](double a) {
        auto [v3p, v4p] = elastic_collision(v3m, v4m, a);
        return exit_defect(P, omega == 4 ? v4p : v3p);
    };
    std::vector<double> roots;
    const int n = 1440;
    double prev_a = 0.0, prev_f = std::numeric_limits<double>::quiet_NaN();
    for (int i = 0; i <= n; ++i) {
        double a = 0.001 + (kTwoPi - 0.002) * i / n;
        double f = defect(a);
        if (std::isfinite(prev_f) && std::isfinite(f) && prev_f * f < 0 &&
            std::abs(prev_f - f) < kPi) {
            double lo = prev_a, hi = a, flo = prev_f;
            for (int it = 0; it < 200; ++it) {
                double mid = 0.5 * (lo + hi), fm = defect(mid);
                if (flo * fm <= 0) hi = mid;
                else { lo = mid; flo = fm; }
                if (hi - lo < 1e-15) break;
            }
            roots.push_back(0.5 * (lo + hi));
        }
        prev_a = a;
        prev_f = f;
    }
    if (roots.empty())
        throw GerverError("gerver_map: no exchange angle gives a horizontal exit asymptote");
    if (!hint) return roots.front();
    double best = roots.front();
    for (double r : roots)
        if (std::abs(wrap_angle(r - *hint)) < std::abs(wrap_angle(best - *hint))) best = r;
    return best;
}

OrbitTriple collision_at_psi(const PolarConic& ell, const PolarConic& hyp, double psi,
                             int j, int omega, const GerverOptions& opts,
                             CollisionEvent* event) {
    Vec2 P = ell.point(psi);
    {
        double r4 = hyp.radius(psi);
        double r3 = norm(P);
        if (std::abs(r4 - r3) > 1e-9 * std::max(1.0, r3))
            throw GerverError("gerver_map: orbits do not meet at the requested angle");
    }
    Vec2 v3m = ell.velocity(psi);
    Vec2 v4m = hyp.velocity(psi);
    double alpha = solve_alpha(P, v3m, v4m, omega, opts.alpha_hint);
    auto [v3p, v4p] = elastic_collision(v3m, v4m, alpha);
    Vec2 vcap = (omega == 4) ? v3p : v4p;
    Vec2 vtrav = (omega == 4) ? v4p : v3p;
    HyperElements cap = conic_from_state(P, vcap);
    HyperElements trav = conic_from_state(P, vtrav);
    if (cap.E >= 0.0)
        throw GerverError("gerver_map: captured body is not elliptic after the exchange");
    if (trav.E <= 0.0)
        throw GerverError("gerver_map: traveler is not hyperbolic after the exchange");
    if (event) {
        event->psi = psi;
        event->alpha = alpha;
        event->v3_minus = v3m;
        event->v4_minus = v4m;
        event->v3_plus = v3p;
        event->v4_plus = v4p;
        event->j = j;
        event->omega = omega;
        // relabel so the captured particle is always exposed as body 3
        event->E3_plus = cap.E;
        event->G3_plus = cap.G;
        event->g3_plus = cap.g;
        event->E4_plus = trav.E;
        event->G4_plus = trav.G;
        event->g4_plus = trav.g;
    }
    return {cap.E, cap.e, cap.g};
}

double solve_incoming_G4(const PolarConic& ell, double psi, double E4, double G4_guess) {
    double L4 = 1.0 / std::sqrt(2.0 * E4);
    double r = ell.radius(psi);
    auto f = [&](double G4) {
        double g4 = -std::atan(G4 / L4);
        PolarConic h = PolarConic::hyperbola(E4, G4, g4);
        return h.denominator(psi) - G4 * G4 / r;
    };
    double G = G4_guess;
    for (int it = 0; it < 100; ++it) {
        double h = 1e-7 * std::max(1.0, std::abs(G));
        double d = (f(G + h) - f(G - h)) / (2.0 * h);
        double step = f(G) / d;
        G -= step;
        if (std::abs(step) < 1e-14 * std::max(1.0, std::abs(G))) return G;
    }
    throw GerverError("gerver_map: incoming hyperbola through the collision point not found");
}

}  // namespace

OrbitTriple gerver_map(const OrbitTriple& x, double e4, int j, int omega,
                       const GerverOptions& opts, CollisionEvent* event) {
    if (!(x.E3 < 0.0)) throw GerverError("gerver_map: need E3 < 0");
    if (!(e4 > 1.0)) throw GerverError("gerver_map: need e4 > 1");
    double L3 = 1.0 / std::sqrt(-2.0 * x.E3);
    int s3 = opts.g3_sign ? opts.g3_sign : gerver_g3_sign(j);
    double G3 = s3 * L3 * std::sqrt(std::max(0.0, 1.0 - x.e3 * x.e3));
    double E4 = -x.E3;
    double L4 = 1.0 / std::sqrt(2.0 * E4);
    double G4 = L4 * std::sqrt(e4 * e4 - 1.0);
    PolarConic ell = PolarConic::ellipse(x.E3, G3, x.g3);
    PolarConic hyp = PolarConic::hyperbola(E4, G4, -std::atan(G4 / L4));
    auto inter = orbit_intersections(ell, hyp);
    if ((int)inter.size() < j)
        throw GerverError("gerver_map: requested intersection does not exist");
    return collision_at_psi(ell, hyp, inter[j - 1].psi, j, omega, opts, event);
}

OrbitTriple gerver_map_psi(const OrbitTriple& x, double psi, int g3_sign, int omega,
                           double G4_guess, const GerverOptions& opts,
                           CollisionEvent* event) {
    double L3 = 1.0 / std::sqrt(-2.0 * x.E3);
    double G3 = g3_sign * L3 * std::sqrt(std::max(0.0, 1.0 - x.e3 * x.e3));
    PolarConic ell = PolarConic::ellipse(x.E3, G3, x.g3);
    double E4 = -x.E3;
    double G4 = solve_incoming_G4(ell, psi, E4, G4_guess);
    double L4 = 1.0 / std::sqrt(2.0 * E4);
    PolarConic hyp = PolarConic::hyperbola(E4, G4, -std::atan(G4 / L4));
    return collision_at_psi(ell, hyp, psi, 0, omega, opts, event);
}

namespace {
GerverFixedPoint::Row delaunay_row_elliptic(Vec2 P, Vec2 v) {
    DelaunayElliptic el = elliptic_from_cartesian({P, v});
    double e = el.eccentricity();
    double u = solve_kepler_elliptic(el.ell, e);
    return {el.L, u, el.G, el.g};
}
GerverFixedPoint::Row delaunay_row_hyperbolic(Vec2 P, Vec2 v) {
    DelaunayHyperbolic hy = hyperbolic_from_cartesian({P, v}, Frame::RightAtQ2);
    double e = hy.eccentricity();
    double u = solve_kepler_hyperbolic(hy.ell, e);
    return {hy.L, u, hy.G, hy.g};
}
}  // namespace

GerverFixedPoint fixed_point(double eps0) {
    if (!(eps0 > 0.0 && eps0 < std::sqrt(0.5)))
        throw GerverError("fixed_point: eps0 must lie in (0, sqrt(2)/2)");
    GerverFixedPoint fp;
    fp.eps0 = eps0;
    fp.eps1 = std::sqrt(1.0 - eps0 * eps0);
    fp.lambda0 = (fp.eps1 * fp.eps1) / (eps0 * eps0);
    fp.E3_star = -0.5;
    double X = -eps0 * fp.eps1, Y = eps0 + fp.eps1;
    double R = std::hypot(X, Y);  // equals 1 + eps0*eps1
    double disc = std::sqrt(Y * Y + 4.0 * (X + R));
    fp.p1 = (-Y + disc) / 2.0;
    fp.p2 = (-Y - disc) / 2.0;
    fp.collision_point[0] = {X, Y};
    fp.collision_point[1] = {eps0 * eps0, 0.0};
    fp.psi[0] = wrap_positive(std::atan2(-X, Y));
    fp.psi[1] = 1.5 * kPi;
    fp.e4_star = std::sqrt(1.0 + fp.p1 * fp.p1);
    fp.e4_starstar = std::sqrt(1.0 + 2.0 * eps0 * eps0);

    double d1 = eps0 * fp.eps1 + 1.0;
    fp.v3m[0] = {-fp.eps1 * fp.eps1 / d1, -eps0 / d1};
    fp.v4m[0] = {1.0 - Y / (R * fp.p1), 1.0 / (R * fp.p1)};
    fp.v3p[0] = {eps0 * eps0 / d1, fp.eps1 / d1};
    fp.v4p[0] = {-1.0 + Y / (R * fp.p2), -1.0 / (R * fp.p2)};
    fp.v3m[1] = {-fp.eps1 / eps0, -1.0 / eps0};
    fp.v4m[1] = {1.0, std::sqrt(2.0) / eps0};
    fp.v3p[1] = {1.0, -1.0 / eps0};
    fp.v4p[1] = {-fp.eps1 / eps0, std::sqrt(2.0) / eps0};

    for (int c = 0; c < 2; ++c) {
        Vec2 dm = fp.v3m[c] - fp.v4m[c];
        Vec2 dp = fp.v3p[c] - fp.v4p[c];
        fp.alpha[c] = wrap_positive(std::atan2(cross(dm, dp), dot(dm, dp)));
        fp.q3[c][0] = delaunay_row_elliptic(fp.collision_point[c], fp.v3m[c]);
        fp.q3[c][1] = delaunay_row_elliptic(fp.collision_point[c], fp.v3p[c]);
        fp.q4[c][0] = delaunay_row_hyperbolic(fp.collision_point[c], fp.v4m[c]);
        fp.q4[c][1] = delaunay_row_hyperbolic(fp.collision_point[c], fp.v4p[c]);
    }
    return fp;
}

// ---------------------------------------------------------------------------
// implicit systems of one collision and the composed-map derivative

namespace {
// (e/G) cos(psi +/- gamma) with e = sqrt(1 + 2 E G^2); value and partials
struct FluxTerm {
    double val, dE, dG, dgam, dpsi;
    FluxTerm(double E, double G, double gam, double psi, int sgn) {
        double e = std::sqrt(1.0 + 2.0 * E * G * G);
        double arg = psi + sgn * gam;
        double c = std::cos(arg), s = std::sin(arg);
        double de_dE = G * G / e;
        double de_dG = 2.0 * E * G / e;
        val = (e / G) * c;
        dE = (de_dE / G) * c;
        dG = ((de_dG * G - e) / (G * G)) * c;
        dgam = -sgn * (e / G) * s;
        dpsi = -(e / G) * s;
    }
};

// G^2 / (1 - e sin(psi +/- gamma)); value and partials
struct RadiusTerm {
    double val, dE, dG, dgam, dpsi;
    RadiusTerm(double E, double G, double gam, double psi, int sgn) {
        double e = std::sqrt(1.0 + 2.0 * E * G * G);
        double arg = psi + sgn * gam;
        double s = std::sin(arg), c = std::cos(arg);
        double D = 1.0 - e * s;
        double de_dE = G * G / e;
        double de_dG = 2.0 * E * G / e;
        val = G * G / D;
        dE = G * G * s * de_dE / (D * D);
        dG = 2.0 * G / D + G * G * s * de_dG / (D * D);
        dgam = sgn * G * G * e * c / (D * D);
        dpsi = G * G * e * c / (D * D);
    }
};

inline double L_of_E4(double E4) { return 1.0 / std::sqrt(2.0 * E4); }
}  // namespace

void CollisionSystems::F(const double Zm[3], const double Zt[2], const double Zp[5],
                         double psi, double out[5]) {
    double E3m = Zm[0], G3m = Zm[1], g3m = Zm[2];
    double G4m = Zt[0], g4m = Zt[1];
    double E3p = Zp[0], G3p = Zp[1], g3p = Zp[2], G4p = Zp[3], g4p = Zp[4];
    FluxTerm f3p(E3p, G3p, g3p, psi, +1), f4p(-E3p, G4p, -g4p, psi, +1);
    FluxTerm f3m(E3m, G3m, g3m, psi, +1), f4m(-E3m, G4m, -g4m, psi, +1);
    RadiusTerm r3p(E3p, G3p, g3p, psi, +1), r3m(E3m, G3m, g3m, psi, +1);
    RadiusTerm r4p(-E3p, G4p, -g4p, psi, +1);
    double L4p = L_of_E4(-E3p);
    out[0] = G3p + G4p - G3m - G4m;
    out[1] = f3p.val + f4p.val - f3m.val - f4m.val;
    out[2] = r3p.val - r3m.val;
    out[3] = r3p.val - r4p.val;
    out[4] = g4p - std::atan(G4p / L4p);
}

void CollisionSystems::I(const double Zm[3], const double Zt[2], double psi, double out[2]) {
    double E3m = Zm[0], G3m = Zm[1], g3m = Zm[2];
    double G4m = Zt[0], g4m = Zt[1];
    double L4m = L_of_E4(-E3m);
    RadiusTerm r3m(E3m, G3m, g3m, psi, +1), r4m(-E3m, G4m, -g4m, psi, +1);
    out[0] = g4m + std::atan(G4m / L4m);
    out[1] = r3m.val - r4m.val;
}

// Analytic Jacobians of F and I.  A hyperbola term written as
// T(-E3, G4, -g4, psi, +1) has dT/dE3 = -T.dE and dT/dg4 = -T.dgam.
CollisionJacobians CollisionSystems::jacobians(const double Zm[3], const double Zt[2],
                                               const double Zp[5], double psi) {
    double E3m = Zm[0], G3m = Zm[1], g3m = Zm[2];
    double G4m = Zt[0], g4m = Zt[1];
    double E3p = Zp[0], G3p = Zp[1], g3p = Zp[2], G4p = Zp[3], g4p = Zp[4];
    FluxTerm f3p(E3p, G3p, g3p, psi, +1), f4p(-E3p, G4p, -g4p, psi, +1);
    FluxTerm f3m(E3m, G3m, g3m, psi, +1), f4m(-E3m, G4m, -g4m, psi, +1);
    RadiusTerm r3p(E3p, G3p, g3p, psi, +1), r3m(E3m, G3m, g3m, psi, +1);
    RadiusTerm r4p(-E3p, G4p, -g4p, psi, +1), r4m(-E3m, G4m, -g4m, psi, +1);
    double L4p = L_of_E4(-E3p), L4m = L_of_E4(-E3m);
    double den_p = L4p * L4p + G4p * G4p;
    double den_m = L4m * L4m + G4m * G4m;
    // d arctan(G/L(E4))/dE3: dL/dE4 = -L^3, E4 = -E3
    double datan_dE3p = (G4p * L4p * L4p * L4p) / den_p;   // via dL4/dE3 = +L^3
    double datan_dE3m = (G4m * L4m * L4m * L4m) / den_m;

    CollisionJacobians J;
    J.dF_dZp.setZero();
    J.dF_dZm.setZero();
    J.dF_dZt.setZero();
    // row 0: G3p + G4p - G3m - G4m
    J.dF_dZp(0, 1) = 1.0;
    J.dF_dZp(0, 3) = 1.0;
    J.dF_dZm(0, 1) = -1.0;
    J.dF_dZt(0, 0) = -1.0;
    // row 1: flux balance
    J.dF_dZp(1, 0) = f3p.dE - f4p.dE;
    J.dF_dZp(1, 1) = f3p.dG;
    J.dF_dZp(1, 2) = f3p.dgam;
    J.dF_dZp(1, 3) = f4p.dG;
    J.dF_dZp(1, 4) = -f4p.dgam;
    J.dF_dZm(1, 0) = -(f3m.dE - f4m.dE);
    J.dF_dZm(1, 1) = -f3m.dG;
    J.dF_dZm(1, 2) = -f3m.dgam;
    J.dF_dZm(1, 3) = f3p.dpsi + f4p.dpsi - f3m.dpsi - f4m.dpsi;
    J.dF_dZt(1, 0) = -f4m.dG;
    J.dF_dZt(1, 1) = f4m.dgam;
    // row 2: r3p - r3m
    J.dF_dZp(2, 0) = r3p.dE;
    J.dF_dZp(2, 1) = r3p.dG;
    J.dF_dZp(2, 2) = r3p.dgam;
    J.dF_dZm(2, 0) = -r3m.dE;
    J.dF_dZm(2, 1) = -r3m.dG;
    J.dF_dZm(2, 2) = -r3m.dgam;
    J.dF_dZm(2, 3) = r3p.dpsi - r3m.dpsi;
    // row 3: r3p - r4p
    J.dF_dZp(3, 0) = r3p.dE + r4p.dE;  // -d r4p/dE3p = +r4p.dE
    J.dF_dZp(3, 1) = r3p.dG;
    J.dF_dZp(3, 2) = r3p.dgam;
    J.dF_dZp(3, 3) = -r4p.dG;
    J.dF_dZp(3, 4) = r4p.dgam;
    J.dF_dZm(3, 3) = r3p.dpsi - r4p.dpsi;
    // row 4: g4p - arctan(G4p/L4p)
    J.dF_dZp(4, 0) = datan_dE3p;  // -(d arctan/dE3) with dL4/dE3 = L^3 gives +...
    J.dF_dZp(4, 3) = -L4p / den_p;
    J.dF_dZp(4, 4) = 1.0;

    J.dI_dZt.setZero();
    J.dI_dZm.setZero();
    // row 0: g4m + arctan(G4m/L4m)
    J.dI_dZt(0, 0) = L4m / den_m;
    J.dI_dZt(0, 1) = 1.0;
    J.dI_dZm(0, 0) = -datan_dE3m;
    // row 1: r3m - r4m
    J.dI_dZt(1, 0) = -r4m.dG;
    J.dI_dZt(1, 1) = r4m.dgam;
    J.dI_dZm(1, 0) = r3m.dE + r4m.dE;
    J.dI_dZm(1, 1) = r3m.dG;
    J.dI_dZm(1, 2) = r3m.dgam;
    J.dI_dZm(1, 3) = r3m.dpsi - r4m.dpsi;
    return J;
}

GerverDerivative gerver_derivative(double eps0) {
    GerverFixedPoint fp = fixed_point(eps0);
    Eigen::Matrix<double, 5, 4> D[2];
    double worst_cond = 0.0;
    for (int c = 0; c < 2; ++c) {
        CollisionEvent ev;
        OrbitTriple in{-0.5, 0.0, kPi / 2.0};
        if (c == 0) {
            in.e3 = eps0;
        } else {
            in.e3 = fp.eps1;
        }
        GerverOptions opts;
        opts.alpha_hint = fp.alpha[c];
        opts.g3_sign = gerver_g3_sign(c + 1);
        gerver_map_psi(in, fp.psi[c], opts.g3_sign, 4,
                       c == 0 ? fp.p1 : std::sqrt(2.0) * eps0, opts, &ev);
        double Zm[3] = {in.E3, gerver_g3_sign(c + 1) *
                                   std::sqrt((1.0 - in.e3 * in.e3) / (-2.0 * in.E3)),
                        in.g3};
        double Zt[2] = {c == 0 ? fp.q4[0][0].G : fp.q4[1][0].G,
                        c == 0 ? fp.q4[0][0].g : fp.q4[1][0].g};
        double Zp[5] = {ev.E3_plus, ev.G3_plus, ev.g3_plus, ev.G4_plus, ev.g4_plus};
        CollisionJacobians J = CollisionSystems::jacobians(Zm, Zt, Zp, fp.psi[c]);
        Eigen::JacobiSVD<Eigen::Matrix<double, 5, 5>> svd(J.dF_dZp);
        worst_cond = std::max(worst_cond, svd.singularValues()(0) /
                                              svd.singularValues()(4));
        if (svd.singularValues()(4) < 1e-12 * svd.singularValues()(0))
            throw GerverError("gerver_derivative: degenerate configuration");
        Eigen::Matrix<double, 2, 4> S =
            -J.dI_dZt.inverse() * J.dI_dZm;  // d(G4m,g4m)/d(E3m,G3m,g3m,psi)
        D[c] = -J.dF_dZp.colPivHouseholderQr().solve(J.dF_dZm + J.dF_dZt * S);
    }
    // map (dE3, dG3, dg3) -> (de3, dg3) at the final ellipse
    GerverFixedPoint fpd = fp;
    CollisionEvent ev2;
    OrbitTriple mid{-0.5, fpd.eps1, kPi / 2.0};
    GerverOptions o2;
    o2.alpha_hint = fpd.alpha[1];
    o2.g3_sign = -1;
    gerver_map_psi(mid, fpd.psi[1], -1, 4, std::sqrt(2.0) * eps0, o2, &ev2);
    double Ef = ev2.E3_plus, Gf = ev2.G3_plus;
    double ef = std::sqrt(1.0 + 2.0 * Ef * Gf * Gf);
    auto to_eg = [&](double dE, double dG, double dg) {
        double de = (2.0 * Gf * Ef * dG + Gf * Gf * dE) / ef;
        return std::pair<double, double>{de, dg};
    };
    GerverDerivative out;
    out.condition = worst_cond;
    // direct second-collision response to psi2
    auto [de2, dg2] = to_eg(D[1](0, 3), D[1](1, 3), D[1](2, 3));
    out.m[1][0] = de2;
    out.m[1][1] = dg2;
    // chained response to psi1 through (E3, G3, g3)
    Eigen::Vector3d first = D[0].block<3, 1>(0, 3);
    Eigen::Vector3d chained = D[1].block<3, 3>(0, 0) * first;
    auto [de1, dg1] = to_eg(chained(0), chained(1), chained(2));
    out.m[0][0] = de1;
    out.m[0][1] = dg1;
    return out;
}

}  // namespace tctb
