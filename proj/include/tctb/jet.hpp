// Second-order forward jets over the four Delaunay variables (L, ell, G, g).
// Used to carry analytic first/second derivatives through the coordinate
// formulas, with the Kepler-equation root injected by implicit differentiation.
#pragma once

#include <array>
#include <cmath>

namespace tctb {

struct Jet {
    double v = 0.0;
    std::array<double, 4> d{};                   // gradient
    std::array<std::array<double, 4>, 4> h{};    // Hessian (symmetric)

    Jet() = default;
    explicit Jet(double value) : v(value) {}

    static Jet variable(double value, int index) {
        Jet j(value);
        j.d[index] = 1.0;
        return j;
    }
};

inline Jet operator+(const Jet& a, const Jet& b) {
    Jet r(a.v + b.v);
    for (int i = 0; i < 4; ++i) {
        r.d[i] = a.d[i] + b.d[i];
        for (int j = 0; j < 4; ++j) r.h[i][j] = a.h[i][j] + b.h[i][j];
    }
    return r;
}

inline Jet operator-(const Jet& a, const Jet& b) {
    Jet r(a.v - b.v);
    for (int i = 0; i < 4; ++i) {
        r.d[i] = a.d[i] - b.d[i];
        for (int j = 0; j < 4; ++j) r.h[i][j] = a.h[i][j] - b.h[i][j];
    }
    return r;
}

inline Jet operator-(const Jet& a) {
    Jet r(-a.v);
    for (int i = 0; i < 4; ++i) {
        r.d[i] = -a.d[i];
        for (int j = 0; j < 4; ++j) r.h[i][j] = -a.h[i][j];
    }
    return r;
}

inline Jet operator*(const Jet& a, const Jet& b) {
    Jet r(a.v * b.v);
    for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            r.h[i][j] = a.h[i][j] * b.v + a.d[i] * b.d[j] + a.d[j] * b.d[i] + a.v * b.h[i][j];
    return r;
}

inline Jet operator*(double s, const Jet& a) {
    Jet r(s * a.v);
    for (int i = 0; i < 4; ++i) {
        r.d[i] = s * a.d[i];
        for (int j = 0; j < 4; ++j) r.h[i][j] = s * a.h[i][j];
    }
    return r;
}
inline Jet operator*(const Jet& a, double s) { return s * a; }
inline Jet operator+(const Jet& a, double s) { Jet r = a; r.v += s; return r; }
inline Jet operator+(double s, const Jet& a) { return a + s; }
inline Jet operator-(const Jet& a, double s) { Jet r = a; r.v -= s; return r; }
inline Jet operator-(double s, const Jet& a) { return (-a) + s; }

// chain rule for a scalar function f with derivatives f', f''
inline Jet compose(const Jet& u, double f, double fp, double fpp) {
    Jet r(f);
    for (int i = 0; i < 4; ++i) r.d[i] = fp * u.d[i];
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            r.h[i][j] = fpp * u.d[i] * u.d[j] + fp * u.h[i][j];
    return r;
}

inline Jet sin(const Jet& u)  { double s = std::sin(u.v), c = std::cos(u.v); return compose(u, s, c, -s); }
inline Jet cos(const Jet& u)  { double s = std::sin(u.v), c = std::cos(u.v); return compose(u, c, -s, -c); }
inline Jet sinh(const Jet& u) { double s = std::sinh(u.v), c = std::cosh(u.v); return compose(u, s, c, s); }
inline Jet cosh(const Jet& u) { double s = std::sinh(u.v), c = std::cosh(u.v); return compose(u, c, s, c); }
inline Jet sqrt(const Jet& u) {
    double s = std::sqrt(u.v);
    return compose(u, s, 0.5 / s, -0.25 / (s * u.v));
}
inline Jet inverse(const Jet& u) {
    double iv = 1.0 / u.v;
    return compose(u, iv, -iv * iv, 2.0 * iv * iv * iv);
}
inline Jet operator/(const Jet& a, const Jet& b) { return a * inverse(b); }
inline Jet operator/(double s, const Jet& b) { return s * inverse(b); }
inline Jet operator/(const Jet& a, double s) { return a * (1.0 / s); }

}  // namespace tctb
