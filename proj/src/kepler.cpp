#include "tctb/kepler.hpp"

#include <algorithm>
#include <cmath>

#include "tctb/jet.hpp"

namespace tctb {

namespace {
constexpr int kMaxIter = 100;

// Safeguarded Newton: keeps a bracket [lo, hi] with f(lo) <= 0 <= f(hi) and
// falls back to bisection whenever the Newton step leaves the bracket.
template <typename F, typename DF>
double newton_bracketed(double x0, double lo, double hi, F f, DF df, double tol,
                        const char* what) {
    double flo = f(lo), fhi = f(hi);
    if (flo > 0 || fhi < 0) throw SolverError(std::string(what) + ": invalid bracket");
    double x = std::clamp(x0, lo, hi);
    for (int it = 0; it < kMaxIter; ++it) {
        double fx = f(x);
        if (std::abs(fx) <= tol) return x;
        if (fx < 0) lo = x; else hi = x;
        double d = df(x);
        double xn = x - fx / d;
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        if (xn == x) return x;
        x = xn;
    }
    double fx = f(x);
    if (std::abs(fx) <= tol * 16) return x;  // last resort after cap
    throw SolverError(std::string(what) + ": no convergence");
}
}  // namespace

double solve_kepler_elliptic(double ell, double e) {
    if (!(e >= 0.0 && e < 1.0)) throw DomainError("solve_kepler_elliptic: need e in [0,1)");
    // reduce to the principal interval; u(ell + 2*pi*n) = u(ell) + 2*pi*n
    double n = std::floor((ell + kPi) / kTwoPi);
    double m = ell - kTwoPi * n;  // in (-pi, pi]
    auto f = [&](double u) { return u - e * std::sin(u) - m; };
    auto df = [&](double u) { return 1.0 - e * std::cos(u); };
    double u = newton_bracketed(m, -kPi, kPi + 1e-12, f, df, 1e-14, "kepler elliptic");
    // polish once; residual target 1e-13
    u -= f(u) / df(u);
    return u + kTwoPi * n;
}

double solve_kepler_hyperbolic(double ell, double e) {
    if (!(e > 1.0)) throw DomainError("solve_kepler_hyperbolic: need e > 1");
    if (ell == 0.0) return 0.0;
    auto f = [&](double u) { return u - e * std::sinh(u) - ell; };
    auto df = [&](double u) { return 1.0 - e * std::cosh(u); };
    // f is strictly decreasing; root has sign of -ell
    double guess = (ell > 0 ? -1.0 : 1.0) * std::log(2.0 * std::abs(ell) / e + 1.8);
    double lo, hi;  // want f(lo) <= 0 <= f(hi): f decreasing => lo right of root
    double span = std::max(1.0, std::abs(guess));
    lo = guess; hi = guess;
    for (int it = 0; it < 200 && f(lo) > 0; ++it) lo += span;
    for (int it = 0; it < 200 && f(hi) < 0; ++it) hi -= span;
    if (f(lo) > 0 || f(hi) < 0) throw SolverError("kepler hyperbolic: bracket failed");
    // note bracket is [hi, lo] in coordinate order
    double tol = 1e-14 * std::max(1.0, std::abs(ell));
    double x = std::clamp(guess, std::min(lo, hi), std::max(lo, hi));
    for (int it = 0; it < kMaxIter; ++it) {
        double fx = f(x);
        if (std::abs(fx) <= tol) return x;
        if (fx > 0) hi = x; else lo = x;
        double xn = x - fx / df(x);
        double a = std::min(lo, hi), b = std::max(lo, hi);
        if (!(xn > a && xn < b)) xn = 0.5 * (a + b);
        if (xn == x) return x;
        x = xn;
    }
    if (std::abs(f(x)) <= tol * 16) return x;
    throw SolverError("kepler hyperbolic: no convergence");
}

CartesianOrbitState elliptic_to_cartesian(const DelaunayElliptic& el, double k) {
    double e = el.eccentricity();
    double u = solve_kepler_elliptic(el.ell, e);
    double cu = std::cos(u), su = std::sin(u);
    double A = el.L * el.L * (cu - e) / k;
    double B = el.L * el.G * su / k;
    double cg = std::cos(el.g), sg = std::sin(el.g);
    double den = 1.0 - e * cu;
    double pA = -k * su / (el.L * den);
    double pB = k * el.G * cu / (el.L * el.L * den);
    // clockwise rotation of the g = 0 picture
    return {{cg * A + sg * B, -sg * A + cg * B},
            {cg * pA + sg * pB, -sg * pA + cg * pB}};
}

CartesianOrbitState hyperbolic_to_cartesian(const DelaunayHyperbolic& hy, double k) {
    double e = hy.eccentricity();
    double u = solve_kepler_hyperbolic(hy.ell, e);
    double cu = std::cosh(u), su = std::sinh(u);
    double A = hy.L * hy.L * (cu - e) / k;
    double B = hy.L * hy.G * su / k;
    double cg = std::cos(hy.g), sg = std::sin(hy.g);
    double den = 1.0 - e * cu;
    double pA = k * su / (hy.L * den);
    double pB = -k * hy.G * cu / (hy.L * hy.L * den);
    if (hy.frame == Frame::RightAtQ2) {
        // reflect about the y-axis, then rotate by g
        return {{-(cg * A + sg * B), -sg * A + cg * B},
                {cg * pA - sg * pB, sg * pA + cg * pB}};
    }
    // left frame: plain rotation by g, origin at Q1
    return {{cg * A - sg * B, sg * A + cg * B},
            {cg * (-pA) - sg * pB, sg * (-pA) + cg * pB}};
}

namespace {
// eccentricity vector (points to pericenter), k = gravitational parameter
Vec2 ecc_vector(const CartesianOrbitState& s, double k) {
    double r = norm(s.q);
    double v2 = dot(s.p, s.p);
    return ((v2 - k / r) * s.q - dot(s.q, s.p) * s.p) / k;
}
}  // namespace

DelaunayElliptic elliptic_from_cartesian(const CartesianOrbitState& s, double k) {
    double r = norm(s.q);
    if (r <= 0) throw DomainError("elliptic_from_cartesian: collision point");
    double E = dot(s.p, s.p) / 2.0 - k / r;
    if (E >= 0) throw DomainError("elliptic_from_cartesian: nonnegative energy");
    DelaunayElliptic el;
    el.L = k / std::sqrt(-2.0 * E);
    el.G = cross(s.q, s.p);
    double e = el.eccentricity();
    double a = el.L * el.L / k;
    if (e < 1e-12) {
        el.g = 0.0;
        el.ell = std::atan2(s.q.y, s.q.x);
        return el;
    }
    Vec2 ev = ecc_vector(s, k);
    el.g = -std::atan2(ev.y, ev.x);
    double cu = std::clamp((1.0 - r / a) / e, -1.0, 1.0);
    double su = std::sqrt(1.0 - cu * cu);
    if (dot(s.q, s.p) < 0) su = -su;
    double u = std::atan2(su, cu);
    el.ell = u - e * su;
    return el;
}

DelaunayHyperbolic hyperbolic_from_cartesian(const CartesianOrbitState& s, Frame frame,
                                             double k) {
    double r = norm(s.q);
    if (r <= 0) throw DomainError("hyperbolic_from_cartesian: collision point");
    double E = dot(s.p, s.p) / 2.0 - k / r;
    if (E <= 0) throw DomainError("hyperbolic_from_cartesian: nonpositive energy");
    DelaunayHyperbolic hy;
    hy.frame = frame;
    hy.L = k / std::sqrt(2.0 * E);
    hy.G = (frame == Frame::RightAtQ2) ? cross(s.q, s.p) : -cross(s.q, s.p);
    double e = hy.eccentricity();
    double a = hy.L * hy.L / k;
    Vec2 ev = ecc_vector(s, k);
    hy.g = (frame == Frame::RightAtQ2) ? std::atan2(ev.y, ev.x)
                                       : std::atan2(-ev.y, -ev.x);
    double cu = std::max(1.0, (1.0 + r / a) / e);
    double u = std::acosh(cu);
    if (dot(s.q, s.p) < 0) u = -u;
    hy.ell = u - e * std::sinh(u);
    return hy;
}

namespace {
// u as a jet in (L, ell, G): value solved, derivatives by implicit
// differentiation of F(u; L, ell, G) = u - e*sn(u) - ell = 0.
// `hyper` selects sn = sinh (else sin).
Jet anomaly_jet(double uval, const Jet& e, bool hyper) {
    double sn = hyper ? std::sinh(uval) : std::sin(uval);
    double cn = hyper ? std::cosh(uval) : std::cos(uval);
    double Fu = 1.0 - e.v * cn;
    double Fuu = hyper ? -e.v * sn : e.v * sn;
    Jet u(uval);
    for (int i = 0; i < 4; ++i) {
        double Fi = -e.d[i] * sn - (i == 1 ? 1.0 : 0.0);
        u.d[i] = -Fi / Fu;
    }
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double Fui = -e.d[i] * cn;
            double Fuj = -e.d[j] * cn;
            double Fij = -e.h[i][j] * sn;
            u.h[i][j] = -(Fuu * u.d[i] * u.d[j] + Fui * u.d[j] + Fuj * u.d[i] + Fij) / Fu;
        }
    return u;
}

struct JetVec {
    Jet x, y;
};

StateDerivatives pack(const JetVec& q, const JetVec& p, int order) {
    StateDerivatives out;
    out.order = order;
    out.q = {q.x.v, q.y.v};
    out.p = {p.x.v, p.y.v};
    for (int i = 0; i < 4; ++i) {
        out.dq[i] = {q.x.d[i], q.y.d[i]};
        out.dp[i] = {p.x.d[i], p.y.d[i]};
    }
    if (order >= 2)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) out.d2q[i][j] = {q.x.h[i][j], q.y.h[i][j]};
    return out;
}
}  // namespace

StateDerivatives delaunay_derivatives(const DelaunayHyperbolic& hy, int order, double k) {
    Jet L = Jet::variable(hy.L, 0);
    Jet G = Jet::variable(hy.G, 2);
    Jet g = Jet::variable(hy.g, 3);
    Jet e = sqrt(1.0 + (G * G) / (L * L));
    double uval = solve_kepler_hyperbolic(hy.ell, e.v);
    Jet u = anomaly_jet(uval, e, true);
    Jet cu = cosh(u), su = sinh(u);
    Jet A = L * L * (cu - e) / k;
    Jet B = L * G * su / k;
    Jet cg = cos(g), sg = sin(g);
    Jet den = 1.0 - e * cu;
    Jet pA = k * su / (L * den);
    Jet pB = -1.0 * k * G * cu / (L * L * den);
    JetVec q, p;
    if (hy.frame == Frame::RightAtQ2) {
        q = {-(cg * A + sg * B), cg * B - sg * A};
        p = {cg * pA - sg * pB, sg * pA + cg * pB};
    } else {
        q = {cg * A - sg * B, sg * A + cg * B};
        p = {-(cg * pA) - sg * pB, cg * pB - sg * pA};
    }
    return pack(q, p, order);
}

StateDerivatives delaunay_derivatives(const DelaunayElliptic& el, int order, double k) {
    Jet L = Jet::variable(el.L, 0);
    Jet G = Jet::variable(el.G, 2);
    Jet g = Jet::variable(el.g, 3);
    Jet e = sqrt(1.0 - (G * G) / (L * L));
    double uval = solve_kepler_elliptic(el.ell, e.v);
    Jet u = anomaly_jet(uval, e, false);
    Jet cu = cos(u), su = sin(u);
    Jet A = L * L * (cu - e) / k;
    Jet B = L * G * su / k;
    Jet cg = cos(g), sg = sin(g);
    Jet den = 1.0 - e * cu;
    Jet pA = -1.0 * k * su / (L * den);
    Jet pB = k * G * cu / (L * L * den);
    JetVec q{cg * A + sg * B, cg * B - sg * A};
    JetVec p{cg * pA + sg * pB, cg * pB - sg * pA};
    return pack(q, p, order);
}

}  // namespace tctb
