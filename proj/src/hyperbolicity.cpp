#include "tctb/hyperbolicity.hpp"

#include <boost/numeric/odeint.hpp>
#include <cmath>

#include "tctb/gerver.hpp"
#include "tctb/kepler.hpp"
#include "tctb/vec.hpp"

namespace tctb {

namespace {

struct CollisionGeometry {
    Vec2 P;                       // collision point
    Vec2 v3, v4;                  // velocities of the relevant side
    StateDerivatives ell, hyp;    // analytic derivatives at the point
    double psi;
};

// side 0: before collision, side 1: after
CollisionGeometry geometry(const GerverFixedPoint& fp, int j, int side) {
    CollisionGeometry geo;
    int c = j - 1;
    geo.P = fp.collision_point[c];
    geo.psi = fp.psi[c];
    geo.v3 = side == 0 ? fp.v3m[c] : fp.v3p[c];
    geo.v4 = side == 0 ? fp.v4m[c] : fp.v4p[c];
    auto r3 = fp.q3[c][side];
    auto r4 = fp.q4[c][side];
    DelaunayElliptic el{r3.L, 0.0, r3.G, r3.g};
    el.ell = r3.u - el.eccentricity() * std::sin(r3.u);
    DelaunayHyperbolic hy{r4.L, 0.0, r4.G, r4.g, Frame::RightAtQ2};
    hy.ell = r4.u - hy.eccentricity() * std::sinh(r4.u);
    geo.ell = delaunay_derivatives(el, 1);
    geo.hyp = delaunay_derivatives(hy, 1);
    return geo;
}

}  // namespace

TangentVector6 l_hat(int j, double eps0) {
    if (j != 1 && j != 2) throw HyperbolicityError("l_hat: j must be 1 or 2");
    GerverFixedPoint fp = fixed_point(eps0);
    CollisionGeometry geo = geometry(fp, j, 0);
    Vec2 vm = geo.v3 - geo.v4;
    Vec2 dQ3l = geo.ell.dq[1];
    Vec2 dQ4l = geo.hyp.dq[1];
    double den = dot(vm, dQ4l);
    if (std::abs(den) < 1e-10)
        throw HyperbolicityError("l_hat: degenerate section geometry");
    auto eliminated = [&](Vec2 dQ4dir) {
        return cross(vm, dQ4dir) - cross(vm, dQ4l) * dot(vm, dQ4dir) / den;
    };
    TangentVector6 out;
    // published entries follow the source's sign conventions (see notes):
    // the phase entry carries the "+" elimination, the (G4, g4) block the
    // orientation printed alongside it.
    out.v(1) = cross(vm, dQ3l) + cross(vm, dQ4l) * dot(vm, dQ3l) / den;
    out.v(4) = eliminated(geo.hyp.dq[2]);
    out.v(5) = eliminated(geo.hyp.dq[3]);
    // remaining entries: plain section-coordinate derivative, reported only
    Vec2 dL = geo.ell.dq[0] - geo.hyp.dq[0];  // dL4/dL3 -> 1 in the limit
    out.v(0) = cross(vm, dL) - cross(vm, dQ4l) * dot(vm, dL) / den;
    out.v(2) = cross(vm, geo.ell.dq[2]) - cross(vm, dQ4l) * dot(vm, geo.ell.dq[2]) / den;
    out.v(3) = cross(vm, geo.ell.dq[3]) - cross(vm, dQ4l) * dot(vm, geo.ell.dq[3]) / den;
    out.checked = {false, true, false, false, true, true};
    return out;
}

TangentVector6 u_hat(int j, double eps0, int omega) {
    if (j != 1 && j != 2) throw HyperbolicityError("u_hat: j must be 1 or 2");
    GerverFixedPoint fp = fixed_point(eps0);
    CollisionGeometry geo = geometry(fp, j, 1);
    Vec2 vm = geo.v3 - geo.v4;

    Eigen::Matrix<double, 8, 6> M = Eigen::Matrix<double, 8, 6>::Zero();
    auto put = [&](int col, Vec2 dq3, Vec2 dp3, Vec2 dq4, Vec2 dp4) {
        M(0, col) = dq3.x; M(1, col) = dq3.y;
        M(2, col) = dp3.x; M(3, col) = dp3.y;
        M(4, col) = dq4.x; M(5, col) = dq4.y;
        M(6, col) = dp4.x; M(7, col) = dp4.y;
    };
    Vec2 z{0, 0};
    // L4 = L3 on the zero-energy shell as mu -> 0
    put(0, geo.ell.dq[0], geo.ell.dp[0], geo.hyp.dq[0], geo.hyp.dp[0]);
    put(1, geo.ell.dq[1], geo.ell.dp[1], z, z);
    put(2, geo.ell.dq[2], geo.ell.dp[2], z, z);
    put(3, geo.ell.dq[3], geo.ell.dp[3], z, z);
    put(4, z, z, geo.hyp.dq[2], geo.hyp.dp[2]);
    put(5, z, z, geo.hyp.dq[3], geo.hyp.dp[3]);
    // eliminate ell4 through the section (separation direction ~ vm)
    Eigen::Matrix<double, 8, 1> W;
    W << 0, 0, 0, 0, geo.hyp.dq[1].x, geo.hyp.dq[1].y, geo.hyp.dp[1].x, geo.hyp.dp[1].y;
    double den = dot(vm, geo.hyp.dq[1]);
    Eigen::Matrix<double, 1, 6> dl4;
    for (int i = 0; i < 6; ++i) {
        Vec2 d3{M(0, i), M(1, i)}, d4{M(4, i), M(5, i)};
        dl4(0, i) = dot(vm, d3 - d4) / den;
    }
    M += W * dl4;

    Vec2 rot = rotate(vm, kPi / 2.0);
    Eigen::Matrix<double, 8, 1> rhs;
    rhs << 0, 0, 0.5 * rot.x, 0.5 * rot.y, 0, 0, -0.5 * rot.x, -0.5 * rot.y;

    Eigen::MatrixXd Md = M;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Md, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vector6 sol = svd.solve(Eigen::VectorXd(rhs));
    if ((M * sol - rhs).norm() > 1e-7 * rhs.norm())
        throw HyperbolicityError("u_hat: inconsistent linear system");
    TangentVector6 out;
    out.v = -sol;  // orientation matching the published first-collision data
    if (omega == 3) out.v = -out.v;
    out.checked = {true, false, false, false, true, true};
    return out;
}

GlobalLimitVectors global_limit_vectors(double L4_in, double G4_in, double L4_out,
                                        double G4_out) {
    GlobalLimitVectors g;
    double din = L4_in * L4_in + G4_in * G4_in;
    double dout = L4_out * L4_out + G4_out * G4_out;
    g.lbar << -(G4_in / L4_in) / din, 0, 0, 0, 1.0 / din, -1.0 / L4_in;
    g.lbarbar << 1, 0, 0, 0, 0, 0;
    g.w << 0, 0, 0, 0, 1, -L4_out / dout;
    g.wtilde << 0, 1, 0, 0, 0, 0;
    return g;
}

NondegeneracyReport nondegeneracy_report(double eps0, double threshold) {
    GerverFixedPoint fp = fixed_point(eps0);
    TangentVector6 l1 = l_hat(1, eps0), l2 = l_hat(2, eps0);
    TangentVector6 u1 = u_hat(1, eps0), u2 = u_hat(2, eps0);
    // w_j: the global excursion following collision j, evaluated at its final
    // hyperbola (the one delivered into the next collision).
    double sq2e0 = std::sqrt(2.0) * eps0;
    Vector6 w1 = global_limit_vectors(1.0, fp.p1, 1.0, sq2e0).w;        // into collision 2
    Vector6 w2 = global_limit_vectors(1.0, fp.p1, 1.0, fp.p1).w;        // into collision 1'
    // lbar_j at the post-collision-j hyperbola
    Vector6 lb1 = global_limit_vectors(fp.q4[0][1].L, fp.q4[0][1].G, 1, 1).lbar;
    Vector6 lb2 = global_limit_vectors(fp.q4[1][1].L, fp.q4[1][1].G, 1, 1).lbar;
    GlobalLimitVectors gv = global_limit_vectors(1, 1, 1, 1);

    NondegeneracyReport rep;
    auto add = [&](std::string name, double v) {
        rep.products.push_back({std::move(name), v, threshold, std::abs(v) > threshold});
    };
    add("lhat1.wtilde", l1.v.dot(gv.wtilde));
    add("lhat2.wtilde", l2.v.dot(gv.wtilde));
    add("lhat1.w2", l1.v.dot(w2));
    add("lhat2.w1", l2.v.dot(w1));
    add("lbar1.uhat1", lb1.dot(u1.v));
    add("lbar2.uhat2", lb2.dot(u2.v));
    rep.all_pass = true;
    for (auto& p : rep.products) rep.all_pass = rep.all_pass && p.pass;
    return rep;
}

EnergyPhaseDerivative energy_phase_derivative(int j, double eps0) {
    if (j != 1 && j != 2) throw HyperbolicityError("energy_phase_derivative: j in {1,2}");
    GerverFixedPoint fp = fixed_point(eps0);
    int c = j - 1;
    // assemble base data
    double E3m = -0.5;
    double e3m = (j == 1) ? eps0 : fp.eps1;
    double G3m = gerver_g3_sign(j) * std::sqrt((1.0 - e3m * e3m) / (-2.0 * E3m));
    double Zm[3] = {E3m, G3m, kPi / 2.0};
    double Zt[2] = {fp.q4[c][0].G, fp.q4[c][0].g};
    CollisionEvent ev;
    GerverOptions opts;
    opts.alpha_hint = fp.alpha[c];
    opts.g3_sign = gerver_g3_sign(j);
    gerver_map_psi({E3m, e3m, kPi / 2.0}, fp.psi[c], opts.g3_sign, 4, Zt[0], opts, &ev);
    double Zp[5] = {ev.E3_plus, ev.G3_plus, ev.g3_plus, ev.G4_plus, ev.g4_plus};
    double psi = fp.psi[c];

    CollisionJacobians J = CollisionSystems::jacobians(Zm, Zt, Zp, psi);
    Eigen::Matrix<double, 4, 5> dF_dZp = J.dF_dZp.topRows<4>();
    Eigen::Matrix<double, 4, 1> dF_dpsi = J.dF_dZm.topRows<4>().col(3);
    Eigen::Matrix<double, 4, 2> dF_dZt = J.dF_dZt.topRows<4>();
    // Gamma: dpsi = 1 with (dG4, dg4) = c (1, a) keeping the incoming
    // asymptote horizontal and the pre-collision position match.
    double L4m = 1.0 / std::sqrt(-2.0 * E3m);
    double a = -L4m / (L4m * L4m + Zt[0] * Zt[0]);
    double c_coef = -J.dI_dZm(1, 3) / (J.dI_dZt(1, 0) + a * J.dI_dZt(1, 1));
    double L4p = 1.0 / std::sqrt(-2.0 * Zp[0]);
    double denp = L4p * L4p + Zp[3] * Zp[3];
    Eigen::Matrix<double, 5, 5> A5;
    A5.row(0) << Zp[3] * L4p * L4p * L4p / denp, 0, 0, -L4p / denp, 1.0;
    A5.block<4, 5>(1, 0) = dF_dZp;
    Eigen::Matrix<double, 5, 1> b5;
    b5(0) = 0.0;
    b5.tail(4) = -(dF_dpsi + c_coef * (dF_dZt.col(0) + a * dF_dZt.col(1)));
    Eigen::JacobiSVD<Eigen::Matrix<double, 5, 5>> svd(A5);
    double cond = svd.singularValues()(0) / svd.singularValues()(4);
    if (cond > 1e10) throw HyperbolicityError("energy_phase_derivative: singular system");
    Eigen::Matrix<double, 5, 1> sol = A5.colPivHouseholderQr().solve(b5);
    return {sol(0), cond};
}

// ---------------------------------------------------------------------------

Eigen::Matrix2d nilpotent_generator(double L4, double G4) {
    double d = L4 * L4 + G4 * G4;
    Eigen::Matrix2d A;
    A << -L4 * L4 / d, L4, -L4 * L4 * L4 / (d * d), L4 * L4 / d;
    return A;
}

VariationalLimit variational_limit(double L4, double G4, double xi) {
    if (!(xi > 0.0 && xi < 1.0))
        throw HyperbolicityError("variational_limit: xi must lie in (0,1)");
    double om = 1.0 - xi;
    return {L4, G4, nilpotent_generator(L4, G4), xi, xi * xi / (2.0 * om * om)};
}

namespace {
// coefficient generator on a leg with travel direction s = sign(xdot4);
// s = -1 reproduces the nilpotent generator A.
Eigen::Matrix2d leg_generator(double L, double G, int s) {
    double d = L * L + G * G;
    Eigen::Matrix2d B;
    B << s * L * L / d, L, -L * L * L / (d * d), -s * L * L / d;
    return B;
}
}  // namespace

Eigen::Matrix2d variational_block(VariationalMap map, double L4, double G4) {
    Eigen::Matrix2d id = Eigen::Matrix2d::Identity();
    switch (map) {
        case VariationalMap::I:
            return id - 0.5 * nilpotent_generator(L4, G4);
        case VariationalMap::V:
            return id - 0.5 * leg_generator(L4, G4, +1);
        case VariationalMap::III: {
            Eigen::Matrix2d m;
            m << 0.5, -L4 / 2.0, 1.5 / L4, 0.5;
            return m;
        }
    }
    throw HyperbolicityError("variational_block: bad map id");
}

Eigen::Vector2d variational_dY_dL3(double L4, double G4) {
    double d = L4 * L4 + G4 * G4;
    return {-G4 * L4 / (2.0 * d), -G4 * L4 * L4 / (2.0 * d * d)};
}

namespace {
using Ode4 = std::array<double, 4>;

// integrate dV/dxi = dir * (xi/(1-xi)^3) * (-B) * V from xa to xb (monotone)
Eigen::Matrix2d integrate_leg(Eigen::Matrix2d V0, const Eigen::Matrix2d& B, double xa,
                              double xb) {
    namespace od = boost::numeric::odeint;
    double dir = xb > xa ? 1.0 : -1.0;  // dtau = dir * xi dxi/(1-xi)^3
    Ode4 y{V0(0, 0), V0(0, 1), V0(1, 0), V0(1, 1)};
    auto rhs = [&](const Ode4& v, Ode4& dv, double xi) {
        double w = dir * xi / std::pow(1.0 - xi, 3);
        Eigen::Matrix2d V;
        V << v[0], v[1], v[2], v[3];
        Eigen::Matrix2d D = -w * (B * V);
        dv = {D(0, 0), D(0, 1), D(1, 0), D(1, 1)};
    };
    auto stepper = od::make_controlled(1e-13, 1e-13,
                                       od::runge_kutta_cash_karp54<Ode4>());
    double xi = xa, h = (xb - xa) / 1000.0;
    int guard = 0;
    while ((xb - xi) * dir > 1e-15) {
        if ((xi + h - xb) * dir > 0) h = xb - xi;
        if (od::controlled_step_result::success != stepper.try_step(rhs, y, xi, h)) {
            if (std::abs(h) < 1e-16)
                throw HyperbolicityError("variational_ode_oracle: step underflow");
        }
        if (++guard > 2000000)
            throw HyperbolicityError("variational_ode_oracle: too many steps");
    }
    Eigen::Matrix2d V;
    V << y[0], y[1], y[2], y[3];
    return V;
}
}  // namespace

Eigen::Matrix2d variational_ode_oracle(VariationalMap map, double L4, double G4,
                                       double chi) {
    if (!(chi > 100.0)) throw HyperbolicityError("variational_ode_oracle: chi too small");
    double xi0 = 2.0 / chi;
    Eigen::Matrix2d id = Eigen::Matrix2d::Identity();
    switch (map) {
        case VariationalMap::I:
            return integrate_leg(id, leg_generator(L4, G4, -1), xi0, 0.5);
        case VariationalMap::V:
            return integrate_leg(id, leg_generator(L4, G4, +1), 0.5, xi0);
        case VariationalMap::III: {
            // left frame: G4 is O(1/chi) there, drop it
            double xin = 1.0 / chi;
            Eigen::Matrix2d half1 =
                integrate_leg(id, leg_generator(L4, 0.0, -1), 0.5, xin);
            return integrate_leg(half1, leg_generator(L4, 0.0, +1), xin, 0.5);
        }
    }
    throw HyperbolicityError("variational_ode_oracle: bad map id");
}

Eigen::Vector2d variational_ode_dY_dL3(double L4, double G4, double chi) {
    namespace od = boost::numeric::odeint;
    if (!(chi > 100.0)) throw HyperbolicityError("variational_ode_dY_dL3: chi too small");
    Eigen::Matrix2d A = nilpotent_generator(L4, G4);
    double d = L4 * L4 + G4 * G4;
    Eigen::Vector2d c{G4 * L4 / d, G4 * L4 * L4 / (d * d)};
    std::array<double, 2> y{0.0, 0.0};
    auto rhs = [&](const std::array<double, 2>& w, std::array<double, 2>& dw, double xi) {
        double s = xi / std::pow(1.0 - xi, 3);
        Eigen::Vector2d W{w[0], w[1]};
        Eigen::Vector2d D = -s * (A * W + c);
        dw = {D(0), D(1)};
    };
    auto stepper = od::make_controlled(1e-13, 1e-13,
                                       od::runge_kutta_cash_karp54<std::array<double, 2>>());
    double xi = 2.0 / chi, h = 1e-4;
    while (xi < 0.5 - 1e-15) {
        if (xi + h > 0.5) h = 0.5 - xi;
        stepper.try_step(rhs, y, xi, h);
        if (h < 1e-16) throw HyperbolicityError("variational_ode_dY_dL3: step underflow");
    }
    return {y[0], y[1]};
}

Matrix6 renorm_derivative(double lambda) {
    if (!(lambda > 0.0)) throw HyperbolicityError("renorm_derivative: lambda > 0 required");
    double s = std::sqrt(lambda);
    Matrix6 m = Matrix6::Zero();
    m.diagonal() << s, 1.0, -s, -1.0, -s, -1.0;
    return m;
}

}  // namespace tctb
