#include "tctb/simulator.hpp"

#include <algorithm>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace tctb {

namespace od = boost::numeric::odeint;
using State8 = std::array<double, 8>;

namespace {

State8 pack(const PhaseState& s) {
    return {s.Q3.x, s.Q3.y, s.v3.x, s.v3.y, s.Q4.x, s.Q4.y, s.v4.x, s.v4.y};
}

PhaseState unpack(const State8& y, const PhaseState& like, double t) {
    PhaseState s = like;
    s.Q3 = {y[0], y[1]};
    s.v3 = {y[2], y[3]};
    s.Q4 = {y[4], y[5]};
    s.v4 = {y[6], y[7]};
    s.t = t;
    return s;
}

constexpr double kHardFloor = 1e-12;

void rhs_impl(const State8& y, State8& dydt, double mu, double chi) {
    Vec2 Q3{y[0], y[1]}, v3{y[2], y[3]}, Q4{y[4], y[5]}, v4{y[6], y[7]};
    Vec2 C1{-chi, 0.0};
    double r3 = norm(Q3), r4 = norm(Q4);
    Vec2 d31 = Q3 - C1, d41 = Q4 - C1, d34 = Q3 - Q4;
    double r31 = norm(d31), r41 = norm(d41), r34 = norm(d34);
    if (std::min({r3, r4, r31, r41, r34}) < kHardFloor)
        throw CollisionError("hamiltonian_rhs: pairwise distance below hard floor");
    Vec2 a3 = -Q3 / (r3 * r3 * r3) - d31 / (r31 * r31 * r31);
    Vec2 a4 = -Q4 / (r4 * r4 * r4) - d41 / (r41 * r41 * r41);
    if (mu > 0) {
        a3 -= mu * d34 / (r34 * r34 * r34);
        a4 += mu * d34 / (r34 * r34 * r34);
    }
    dydt = {v3.x, v3.y, a3.x, a3.y, v4.x, v4.y, a4.x, a4.y};
}

}  // namespace

double hamiltonian(const PhaseState& s) {
    Vec2 C1{-s.chi, 0.0};
    return dot(s.v3, s.v3) / 2.0 + dot(s.v4, s.v4) / 2.0 - 1.0 / norm(s.Q3) -
           1.0 / norm(s.Q4) - 1.0 / norm(s.Q3 - C1) - 1.0 / norm(s.Q4 - C1) -
           s.mu / norm(s.Q3 - s.Q4);
}

std::array<double, 8> hamiltonian_rhs(const PhaseState& s) {
    State8 y = pack(s), dydt;
    rhs_impl(y, dydt, s.mu, s.chi);
    return dydt;
}

Eigen::Matrix<double, 6, 1> delaunay_coords(const PhaseState& s) {
    DelaunayElliptic el = elliptic_from_cartesian({s.Q3, s.v3}, 1.0);
    DelaunayHyperbolic hy =
        hyperbolic_from_cartesian({s.Q4, s.v4}, Frame::RightAtQ2, 1.0 + s.mu);
    Eigen::Matrix<double, 6, 1> x;
    x << el.L, el.ell, el.G, el.g, hy.G, hy.g;
    return x;
}

PhaseState SectionChart::state(const Eigen::Matrix<double, 6, 1>& x) const {
    PhaseState s = base;
    DelaunayElliptic el{x(0), x(1), x(2), x(3)};
    CartesianOrbitState c3 = elliptic_to_cartesian(el, 1.0);
    s.Q3 = c3.q;
    s.v3 = c3.p;
    double kR = 1.0 + base.mu;
    DelaunayHyperbolic hy0 =
        hyperbolic_from_cartesian({base.Q4, base.v4}, Frame::RightAtQ2, kR);
    double L4 = hy0.L, ell4 = hy0.ell;
    for (int it = 0; it < 60; ++it) {
        auto eval = [&](double L, double l) {
            DelaunayHyperbolic hy{L, l, x(4), x(5), Frame::RightAtQ2};
            CartesianOrbitState c4 = hyperbolic_to_cartesian(hy, kR);
            PhaseState tmp = s;
            tmp.Q4 = c4.q;
            tmp.v4 = c4.p;
            return std::pair<double, double>{c4.q.x - section_x4, hamiltonian(tmp) - H0};
        };
        auto [f1, f2] = eval(L4, ell4);
        if (std::abs(f1) < 1e-13 && std::abs(f2) < 1e-13) break;
        double h1 = 1e-7 * std::max(1.0, std::abs(L4));
        double h2 = 1e-7 * std::max(1.0, std::abs(ell4));
        auto [a1, a2] = eval(L4 + h1, ell4);
        auto [b1, b2] = eval(L4, ell4 + h2);
        double j11 = (a1 - f1) / h1, j12 = (b1 - f1) / h2;
        double j21 = (a2 - f2) / h1, j22 = (b2 - f2) / h2;
        double det = j11 * j22 - j12 * j21;
        if (det == 0) throw SimulatorError("SectionChart: singular completion");
        L4 -= (j22 * f1 - j12 * f2) / det;
        ell4 -= (-j21 * f1 + j11 * f2) / det;
    }
    DelaunayHyperbolic hy{L4, ell4, x(4), x(5), Frame::RightAtQ2};
    CartesianOrbitState c4 = hyperbolic_to_cartesian(hy, kR);
    s.Q4 = c4.q;
    s.v4 = c4.p;
    return s;
}

// ---------------------------------------------------------------------------
// event-driven integration core

namespace {

struct Event {
    std::string name;
    std::function<double(const State8&, double)> phi;
    int direction = 0;     // required sign of phi_new - phi_prev; 0 = any
    bool terminal = false;
    std::function<bool(const State8&, double)> accept;  // optional veto
    std::function<void(const State8&, double)> on_cross;
    // internal
    double prev = std::numeric_limits<double>::quiet_NaN();
    bool armed = false;
};

struct CoreResult {
    State8 y;
    double t;
    std::string terminal_event;
};

// one fixed-size high-order step for event refinement
State8 micro_step(const State8& y0, double t0, double dt, double mu, double chi) {
    od::runge_kutta_fehlberg78<State8> stepper;
    State8 y = y0;
    auto f = [&](const State8& yy, State8& dydt, double) { rhs_impl(yy, dydt, mu, chi); };
    if (dt != 0.0) stepper.do_step(f, y, t0, dt);
    return y;
}

CoreResult integrate_events(const PhaseState& start, std::vector<Event>& events,
                            double t_max, const IntegrateOptions& opts) {
    const double mu = start.mu, chi = start.chi;
    auto f = [&](const State8& yy, State8& dydt, double) { rhs_impl(yy, dydt, mu, chi); };
    auto stepper = od::make_controlled(opts.abs_tol, opts.rel_tol,
                                       od::runge_kutta_fehlberg78<State8>());
    State8 y = pack(start);
    double t = 0.0, h = 1e-4;
    const double t_end = t_max;
    for (auto& e : events) {
        e.prev = e.phi(y, t);
        e.armed = std::abs(e.prev) > 1e-10;
    }
    if (opts.trajectory) {
        PhaseState s0 = unpack(y, start, start.t);
        opts.trajectory->push_back({start.t, y[0], y[1], y[2], y[3], y[4], y[5], y[6],
                                    y[7], hamiltonian(s0)});
    }
    long steps = 0;
    while (t < t_end) {
        if (opts.max_step > 0 && h > opts.max_step) h = opts.max_step;
        if (h > t_end - t) h = t_end - t;
        State8 y_prev = y;
        double t_prev = t;
        od::controlled_step_result res;
        int tries = 0;
        do {
            res = stepper.try_step(f, y, t, h);
            if (res != od::controlled_step_result::success &&
                std::abs(h) < 1e-15 * std::max(1.0, std::abs(t)))
                throw IntegrationError("integrate: step size underflow");
        } while (res != od::controlled_step_result::success && ++tries < 200);
        if (res != od::controlled_step_result::success)
            throw IntegrationError("integrate: controller failed to accept a step");
        double h_taken = t - t_prev;
        if (++steps > 200000000L) throw IntegrationError("integrate: step budget exhausted");

        Vec2 Q4{y[4], y[5]};
        if (norm(Q4) > opts.escape_factor * chi)
            throw EscapeError("integrate: traveler escaped");

        if (opts.trajectory) {
            PhaseState ss = unpack(y, start, start.t + t);
            opts.trajectory->push_back({ss.t, y[0], y[1], y[2], y[3], y[4], y[5], y[6],
                                        y[7], hamiltonian(ss)});
        }

        for (auto& e : events) {
            double cur = e.phi(y, t);
            double prev = e.prev;
            e.prev = cur;
            if (!e.armed) {
                e.armed = std::abs(cur) > 1e-10;
                continue;
            }
            bool crossed = prev * cur < 0.0;
            if (!crossed) continue;
            if (e.direction != 0 && (cur - prev) * e.direction < 0) continue;
            // refine within [0, h_taken] from the pre-step state
            double lo = 0.0, hi = h_taken;
            double flo = prev;
            State8 y_ref = y;
            double dt_ref = h_taken;
            for (int it = 0; it < 90; ++it) {
                double mid = 0.5 * (lo + hi);
                State8 ym = micro_step(y_prev, t_prev, mid, mu, chi);
                double fm = e.phi(ym, t_prev + mid);
                if (std::abs(fm) < 1e-13) { y_ref = ym; dt_ref = mid; break; }
                if (flo * fm <= 0) hi = mid;
                else { lo = mid; flo = fm; }
                y_ref = ym;
                dt_ref = mid;
                if (hi - lo < 1e-15 * std::max(1.0, t_prev)) break;
            }
            if (e.accept && !e.accept(y_ref, t_prev + dt_ref)) continue;
            if (e.on_cross) e.on_cross(y_ref, t_prev + dt_ref);
            if (e.terminal) return {y_ref, t_prev + dt_ref, e.name};
        }
    }
    throw NoCrossingError("integrate: no terminal section crossing before t_max");
}

double section_phi(const SectionSpec& sec, const State8& y, double mu, double kappa_pow) {
    switch (sec.kind) {
        case SectionKind::X4Minus2: return y[4] + 2.0;
        case SectionKind::X4HalfChi: return 0.0;  // patched by caller (needs chi)
        case SectionKind::RelDist: {
            Vec2 d{y[0] - y[4], y[1] - y[5]};
            return norm(d) - kappa_pow;
        }
        case SectionKind::X4Scaled: return y[4] + 2.0 / sec.lambda;
        case SectionKind::Pericenter3: {
            Vec2 Q{y[0], y[1]}, v{y[2], y[3]};
            return dot(Q, v);
        }
    }
    return 0.0;
}

}  // namespace

PhaseState integrate_to_section(const PhaseState& s, const SectionSpec& sec, double t_max,
                                const IntegrateOptions& opts) {
    const double kappa_pow = std::pow(s.mu, sec.kappa);
    auto phi = [&, kappa_pow](const State8& y, double) {
        if (sec.kind == SectionKind::X4HalfChi) return y[4] + s.chi / 2.0;
        return section_phi(sec, y, s.mu, kappa_pow);
    };
    // direction of the event function along the flow
    auto phidot_sign = [&](const PhaseState& st) {
        State8 y = pack(st), d;
        rhs_impl(y, d, st.mu, st.chi);
        State8 y2 = y;
        for (int i = 0; i < 8; ++i) y2[i] += 1e-8 * d[i];
        return phi(y2, 0.0) > phi(y, 0.0) ? +1 : -1;
    };
    double phi0 = phi(pack(s), 0.0);
    if (t_max == 0.0) {
        if (std::abs(phi0) <= 1e-12 && (sec.direction == 0 || phidot_sign(s) == sec.direction))
            return s;
        throw NoCrossingError("integrate_to_section: t_max = 0 off-section");
    }
    std::vector<Event> events;
    Event e;
    e.name = "section";
    e.phi = phi;
    e.direction = sec.direction;
    e.terminal = true;
    events.push_back(std::move(e));
    CoreResult r = integrate_events(s, events, t_max, opts);
    PhaseState out = unpack(r.y, s, s.t + r.t);
    if (opts.event_log) {
        EventRecord rec{"section", out.t, out, Eigen::Matrix<double, 6, 1>::Zero()};
        try { rec.delaunay = delaunay_coords(out); } catch (const DomainError&) {}
        opts.event_log->push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------

LocalMapResult local_map(const PhaseState& s, double kappa, const IntegrateOptions& opts) {
    if (norm(s.Q3) > 2.0 - 0.05)
        throw SimulatorError("local_map: captured body too far out (|Q3| > 2 - delta)");
    const double mu = s.mu;
    const double rel_radius = std::pow(mu, kappa);
    double min_dist = norm(s.Q3 - s.Q4);
    double t_in = -1.0, t_out = -1.0;
    int exited = 0;  // 3 or 4

    auto sep = [](const State8& y) {
        return norm(Vec2{y[0] - y[4], y[1] - y[5]});
    };
    auto log_event = [&](const char* kind, const State8& y, double t) {
        if (!opts.event_log) return;
        PhaseState st = unpack(y, s, s.t + t);
        EventRecord rec{kind, st.t, st, Eigen::Matrix<double, 6, 1>::Zero()};
        try { rec.delaunay = delaunay_coords(st); } catch (const std::exception&) {}
        opts.event_log->push_back(std::move(rec));
    };

    std::vector<Event> events;
    {
        Event e;  // closest-approach tracker: d/dt |Q3-Q4|^2 rises through 0
        e.name = "minimum-separation";
        e.phi = [](const State8& y, double) {
            Vec2 d{y[0] - y[4], y[1] - y[5]};
            Vec2 dv{y[2] - y[6], y[3] - y[7]};
            return dot(d, dv);
        };
        e.direction = +1;
        e.on_cross = [&](const State8& y, double) {
            min_dist = std::min(min_dist, sep(y));
        };
        events.push_back(std::move(e));
    }
    {
        Event e;
        e.name = "reldist-enter";
        e.phi = [&, rel_radius](const State8& y, double) { return sep(y) - rel_radius; };
        e.direction = -1;
        e.on_cross = [&](const State8& y, double t) {
            if (t_in < 0) t_in = t;
            log_event("reldist-enter", y, t);
        };
        events.push_back(std::move(e));
    }
    {
        Event e;
        e.name = "reldist-exit";
        e.phi = [&, rel_radius](const State8& y, double) { return sep(y) - rel_radius; };
        e.direction = +1;
        e.on_cross = [&](const State8& y, double t) {
            t_out = t;
            log_event("reldist-exit", y, t);
        };
        events.push_back(std::move(e));
    }
    auto hyperbolic_exit = [&](int body) {
        return [&, body](const State8& y, double) {
            Vec2 Q{y[body == 3 ? 0 : 4], y[body == 3 ? 1 : 5]};
            Vec2 v{y[body == 3 ? 2 : 6], y[body == 3 ? 3 : 7]};
            bool hyper = dot(v, v) / 2.0 - 1.0 / norm(Q) > 0.0;
            if (hyper) exited = body;
            return hyper;
        };
    };
    {
        Event e;
        e.name = "exit-4";
        e.phi = [](const State8& y, double) { return y[4] + 2.0; };
        e.direction = -1;
        e.terminal = true;
        e.accept = hyperbolic_exit(4);
        events.push_back(std::move(e));
    }
    {
        Event e;
        e.name = "exit-3";
        e.phi = [](const State8& y, double) { return y[0] + 2.0; };
        e.direction = -1;
        e.terminal = true;
        e.accept = hyperbolic_exit(3);
        events.push_back(std::move(e));
    }
    IntegrateOptions lo = opts;
    if (lo.max_step <= 0) lo.max_step = 0.01;  // keep encounter spheres resolved
    CoreResult r = integrate_events(s, events, 300.0, lo);
    min_dist = std::min(min_dist, sep(r.y));
    if (min_dist < mu * opts.pair_floor_factor)
        throw CollisionError("local_map: encounter below the collision floor");

    LocalMapResult out;
    out.omega = exited;
    out.out = unpack(r.y, s, s.t + r.t);
    if (exited == 3) {  // relabel: captured particle is always exposed as Q3
        std::swap(out.out.Q3, out.out.Q4);
        std::swap(out.out.v3, out.out.v4);
    }
    out.min_distance = min_dist;
    out.encounter_time = (t_in >= 0 && t_out >= t_in) ? t_out - t_in : 0.0;
    DelaunayElliptic el = elliptic_from_cartesian({out.out.Q3, out.out.v3}, 1.0);
    out.triple = {el.energy(), el.eccentricity(), el.g};
    // osculating outgoing asymptote of the traveler (k = 1 + mu right frame)
    DelaunayHyperbolic hy =
        hyperbolic_from_cartesian({out.out.Q4, out.out.v4}, Frame::RightAtQ2, 1.0 + mu);
    double psi_now = std::atan2(-out.out.Q4.x, out.out.Q4.y);
    double psio = outgoing_asymptote_psi(hy.eccentricity(), hy.G, hy.g, psi_now);
    out.theta_out = wrap_angle(psio - kPi / 2.0);
    out.G_left = cross(out.out.Q4 - Vec2{-s.chi, 0.0}, out.out.v4);
    // angular momentum about Q1 carried by the exit asymptote:
    // G_R + chi * v_inf * sin(theta), theta = pi + theta_out
    double vinf = (1.0 + mu) / hy.L;
    out.aim_far = hy.G - s.chi * vinf * std::sin(out.theta_out);
    return out;
}

GlobalMapResult global_map(const PhaseState& s, const IntegrateOptions& opts,
                           std::optional<double> target_x4) {
    const double chi = s.chi;
    const double xt = target_x4.value_or(-2.0);
    Eigen::Matrix<double, 6, 1> before = delaunay_coords(s);
    double min_q1 = norm(s.Q4 - Vec2{-chi, 0.0});
    int windings = 0;

    std::vector<Event> events;
    {
        Event e;  // closest approach to the far center
        e.name = "q1-approach";
        e.phi = [chi](const State8& y, double) {
            Vec2 d{y[4] + chi, y[5]};
            Vec2 v{y[6], y[7]};
            return dot(d, v);
        };
        e.direction = +1;
        e.on_cross = [&](const State8& y, double) {
            min_q1 = std::min(min_q1, norm(Vec2{y[4] + chi, y[5]}));
        };
        events.push_back(std::move(e));
    }
    {
        Event e;  // winding diagnostic: y4 = 0 beyond the halfway line
        e.name = "winding";
        e.phi = [](const State8& y, double) { return y[5]; };
        e.on_cross = [&](const State8&, double) { ++windings; };
        e.accept = [chi](const State8& y, double) { return y[4] < -chi / 2.0; };
        events.push_back(std::move(e));
    }
    {
        Event e;
        e.name = "halfway";
        e.phi = [chi](const State8& y, double) { return y[4] + chi / 2.0; };
        e.on_cross = [&](const State8& y, double t) {
            if (!opts.event_log) return;
            PhaseState st = unpack(y, s, s.t + t);
            opts.event_log->push_back(
                {"x4-halfchi", st.t, st, Eigen::Matrix<double, 6, 1>::Zero()});
        };
        events.push_back(std::move(e));
    }
    {
        Event e;
        e.name = "return";
        e.phi = [xt](const State8& y, double) { return y[4] - xt; };
        e.direction = +1;
        e.terminal = true;
        events.push_back(std::move(e));
    }
    CoreResult r = integrate_events(s, events, 40.0 * chi, opts);
    if (min_q1 < kHardFloor) throw CollisionError("global_map: collision with Q1");

    GlobalMapResult out;
    out.out = unpack(r.y, s, s.t + r.t);
    Eigen::Matrix<double, 6, 1> after = delaunay_coords(out.out);
    DelaunayElliptic el3 = elliptic_from_cartesian({out.out.Q3, out.out.v3}, 1.0);
    DelaunayElliptic el3b = elliptic_from_cartesian({s.Q3, s.v3}, 1.0);
    out.dE3 = el3.energy() - el3b.energy();
    out.dG3 = after(2) - before(2);
    out.dg3 = wrap_angle(after(3) - before(3));
    out.min_dist_q1 = min_q1;
    out.windings = windings;
    DelaunayHyperbolic hy =
        hyperbolic_from_cartesian({out.out.Q4, out.out.v4}, Frame::RightAtQ2, 1.0 + s.mu);
    double psi_now = std::atan2(-out.out.Q4.x, out.out.Q4.y);
    double psii = incoming_asymptote_psi(hy.eccentricity(), hy.G, hy.g, psi_now);
    out.theta_in_return = wrap_angle(psii + 1.5 * kPi);
    return out;
}

RenormResult renormalize(const PhaseState& s, std::optional<double> lambda) {
    double E3 = dot(s.v3, s.v3) / 2.0 - 1.0 / norm(s.Q3);
    double lam = lambda.value_or(2.0 * std::abs(E3));
    if (!lambda && lam <= 1.0)
        throw SimulatorError("renormalize: dilation not expanding (lambda <= 1)");
    auto refl = [](Vec2 v) { return Vec2{v.x, -v.y}; };
    double sq = std::sqrt(lam);
    PhaseState out = s;
    out.Q3 = lam * refl(s.Q3);
    out.Q4 = lam * refl(s.Q4);
    out.v3 = refl(s.v3) / sq;
    out.v4 = refl(s.v4) / sq;
    out.chi = lam * s.chi;
    out.t = s.t * lam * sq;  // Kepler time rescale
    return {out, lam};
}

Jacobian6 finite_diff_jacobian(
    const std::function<Eigen::Matrix<double, 6, 1>(const Eigen::Matrix<double, 6, 1>&)>& map,
    const Eigen::Matrix<double, 6, 1>& x0, double h) {
    auto stencil = [&](double step) {
        Eigen::Matrix<double, 6, 6> J;
        for (int i = 0; i < 6; ++i) {
            Eigen::Matrix<double, 6, 1> xp = x0, xm = x0;
            double hh = step * std::max(1.0, std::abs(x0(i)));
            xp(i) += hh;
            xm(i) -= hh;
            Eigen::Matrix<double, 6, 1> fp = map(xp), fm = map(xm);
            Eigen::Matrix<double, 6, 1> d = fp - fm;
            // angle-like coordinates compared mod 2*pi
            for (int r : {1, 3, 5}) d(r) = wrap_angle(d(r));
            J.col(i) = d / (2.0 * hh);
        }
        return J;
    };
    Eigen::Matrix<double, 6, 6> Jh = stencil(h), Jh2 = stencil(h / 2.0);
    Jacobian6 out;
    out.J = (4.0 * Jh2 - Jh) / 3.0;  // Richardson
    out.step = h;
    double scale = std::max(1.0, out.J.cwiseAbs().maxCoeff());
    out.consistency = (Jh - Jh2).cwiseAbs().maxCoeff() / scale;
    return out;
}

RelativeSplit relative_split(const PhaseState& s) {
    RelativeSplit r;
    r.vplus = s.v3 + s.v4;
    r.vminus = s.v3 - s.v4;
    r.Qplus = (s.Q3 + s.Q4) / 2.0;
    r.Qminus = (s.Q3 - s.Q4) / 2.0;
    r.G_in = 2.0 * cross(r.vminus, r.Qminus);
    double E_rel = dot(r.vminus, r.vminus) / 4.0 - s.mu / (2.0 * norm(r.Qminus));
    r.L_in = E_rel > 0 ? 0.5 / std::sqrt(E_rel) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

// ---------------------------------------------------------------------------
// Gerver lifting

namespace {
struct CollisionCourse {
    PolarConic ell, hyp;
    double psi, ell3_c, ell4_c;  // phases at the meeting point
};

CollisionCourse collision_course(const GerverFixedPoint& fp, int j,
                                 std::optional<double> e4_opt) {
    int c = j - 1;
    double G3 = (j == 1 ? fp.eps1 : -fp.eps0);
    PolarConic ell = PolarConic::ellipse(-0.5, G3, kPi / 2.0);
    double e4 = e4_opt.value_or(j == 1 ? fp.e4_star : fp.e4_starstar);
    double L4 = 1.0;
    double G4 = L4 * std::sqrt(e4 * e4 - 1.0);
    PolarConic hyp = PolarConic::hyperbola(0.5, G4, -std::atan(G4 / L4));
    auto inter = orbit_intersections(ell, hyp);
    if ((int)inter.size() < j)
        throw SimulatorError("lift: requested intersection does not exist");
    double psi = inter[c].psi;
    double r = ell.radius(psi);
    double e3 = ell.e;
    double cu3 = std::clamp((1.0 - r) / e3, -1.0, 1.0);  // L3 = 1
    double u3 = std::atan2((ell.radial_velocity(psi) >= 0 ? 1.0 : -1.0) *
                               std::sqrt(1.0 - cu3 * cu3),
                           cu3);
    double cu4 = std::max(1.0, (1.0 + r) / hyp.e);
    double u4 = std::acosh(cu4);
    if (hyp.radial_velocity(psi) < 0) u4 = -u4;
    return {ell, hyp, psi, u3 - e3 * std::sin(u3), u4 - hyp.e * std::sinh(u4)};
}

// u solving x4(u) = -2 on the requested side of u_ref (right frame, k = 1)
double section_anomaly(double L, double G, double g, double e, double u_ref, bool before) {
    auto x4 = [&](double u) {
        double A = L * L * (std::cosh(u) - e), B = L * G * std::sinh(u);
        return -(std::cos(g) * A + std::sin(g) * B);
    };
    double lo = before ? u_ref - 60.0 : u_ref;
    double hi = before ? u_ref : u_ref + 60.0;
    if ((x4(lo) + 2.0) * (x4(hi) + 2.0) > 0)
        throw SimulatorError("lift: section x4 = -2 not reached on this branch");
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if ((x4(lo) + 2.0) * (x4(mid) + 2.0) <= 0) hi = mid;
        else lo = mid;
    }
    return 0.5 * (lo + hi);
}
}  // namespace

PhaseState lift_incoming_state(const GerverFixedPoint& fp, int j, double mu, double chi,
                               double dl3, std::optional<double> e4) {
    CollisionCourse cc = collision_course(fp, j, e4);
    double us = section_anomaly(1.0, cc.hyp.G, cc.hyp.g, cc.hyp.e, 0.0, true);
    double ell4_s = us - cc.hyp.e * std::sinh(us);
    double t_travel = ell4_s - cc.ell4_c;  // dl4/dt = -1 at L4 = k = 1
    if (t_travel < 0)
        throw SimulatorError("lift: section crossing after the meeting point");
    double ell3_s = cc.ell3_c - t_travel + dl3;  // dl3/dt = +1 at L3 = 1
    PhaseState s;
    s.mu = mu;
    s.chi = chi;
    s.t = 0.0;
    CartesianOrbitState c3 =
        elliptic_to_cartesian({1.0, ell3_s, cc.ell.G, cc.ell.g}, 1.0);
    CartesianOrbitState c4 = hyperbolic_to_cartesian(
        {1.0, ell4_s, cc.hyp.G, cc.hyp.g, Frame::RightAtQ2}, 1.0);
    s.Q3 = c3.q;
    s.v3 = c3.p;
    s.Q4 = c4.q;
    s.v4 = c4.p;
    return s;
}

PhaseState lift_outgoing_state(const GerverFixedPoint& fp, int j, double mu, double chi,
                               double ell3) {
    int c = j - 1;
    auto r4 = fp.q4[c][1];
    auto r3 = fp.q3[c][1];
    double e4 = std::sqrt(1.0 + (r4.G * r4.G) / (r4.L * r4.L));
    double us = section_anomaly(r4.L, r4.G, r4.g, e4, r4.u, false);
    double ell4_s = us - e4 * std::sinh(us);
    PhaseState s;
    s.mu = mu;
    s.chi = chi;
    s.t = 0.0;
    CartesianOrbitState c4 =
        hyperbolic_to_cartesian({r4.L, ell4_s, r4.G, r4.g, Frame::RightAtQ2}, 1.0);
    CartesianOrbitState c3 = elliptic_to_cartesian({r3.L, ell3, r3.G, r3.g}, 1.0);
    s.Q3 = c3.q;
    s.v3 = c3.p;
    s.Q4 = c4.q;
    s.v4 = c4.p;
    return s;
}

// ---------------------------------------------------------------------------
// shooting

TunedLocalResult tuned_local_map(const std::function<PhaseState(double)>& make_state,
                                 double mu, double coarse_window, double kappa,
                                 const IntegrateOptions& opts, int omega_want,
                                 TuneTarget target, double aim) {
    IntegrateOptions loose = opts;
    loose.abs_tol = 1e-9;
    loose.rel_tol = 1e-9;
    loose.event_log = nullptr;
    loose.trajectory = nullptr;
    auto miss = [&](double dl3) {
        try {
            return local_map(make_state(dl3), kappa, loose).min_distance;
        } catch (const std::exception&) {
            return std::numeric_limits<double>::infinity();
        }
    };
    // stage 1: V-shaped miss distance locates the collision course
    int n = std::max(41, (int)(2.0 * coarse_window / std::max(mu, 1e-6)));
    n = std::min(n, 4001);
    double best = 0.0, best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= n; ++i) {
        double d = -coarse_window + 2.0 * coarse_window * i / n;
        double v = miss(d);
        if (v < best_val) { best_val = v; best = d; }
    }
    if (!std::isfinite(best_val)) throw SimulatorError("tuned_local_map: no encounter found");
    double step = 2.0 * coarse_window / n;
    double lo = best - step, hi = best + step;
    for (int it = 0; it < 60 && hi - lo > mu * 1e-3; ++it) {
        double m1 = lo + 0.382 * (hi - lo), m2 = lo + 0.618 * (hi - lo);
        if (miss(m1) < miss(m2)) hi = m2;
        else lo = m1;
    }
    double center = 0.5 * (lo + hi);

    // stage 2: bracket the exit-asymptote defect on the requested omega branch
    struct Probe { double theta = 0; int omega = 0; bool ok = false; };
    const bool horizontal = target == TuneTarget::ExitHorizontal;
    // the aim defect inherits the local map's 1/mu sensitivity, so those
    // probes must run at full tolerance
    IntegrateOptions ptol = horizontal ? loose : opts;
    ptol.event_log = nullptr;
    ptol.trajectory = nullptr;
    auto probe = [&](double dl3) -> Probe {
        try {
            LocalMapResult r = local_map(make_state(dl3), kappa, ptol);
            double defect;
            if (horizontal) {
                defect = r.theta_out;
            } else {
                // propagate to the halfway line and measure the angular
                // momentum about the far center there
                SectionSpec half{SectionKind::X4HalfChi, -1};
                PhaseState hw = integrate_to_section(r.out, half, 30.0 * r.out.chi, ptol);
                defect = cross(hw.Q4 - Vec2{-hw.chi, 0.0}, hw.v4) - aim;
            }
            return {defect, r.omega, true};
        } catch (const std::exception&) {
            return {};
        }
    };
    double window = 3.0 * std::max(mu, 1e-7);
    double rlo = 0, rhi = 0;
    bool found = false;
    for (int attempt = 0; attempt < 5 && !found; ++attempt, window *= 3.0) {
        const int m = 120;
        Probe prev;
        double prev_d = 0;
        for (int i = 0; i <= m; ++i) {
            double d = center - window + 2.0 * window * i / m;
            Probe p = probe(d);
            bool smooth = horizontal ? std::abs(prev.theta - p.theta) < 1.0 : true;
            if (p.ok && prev.ok && p.omega == omega_want && prev.omega == omega_want &&
                prev.theta * p.theta < 0 && smooth) {
                rlo = prev_d;
                rhi = d;
                found = true;
                break;
            }
            prev = p;
            prev_d = d;
        }
    }
    if (!found) throw SimulatorError("tuned_local_map: no horizontal-exit phase found");
    double flo = probe(rlo).theta;
    double bail = horizontal ? 1e-11 : 1e-4;
    for (int it = 0; it < 64 && rhi - rlo > 1e-17; ++it) {
        double mid = 0.5 * (rlo + rhi);
        Probe p = probe(mid);
        if (!p.ok || p.omega != omega_want) { rlo = mid; continue; }
        if (std::abs(p.theta) < bail) { rlo = rhi = mid; break; }
        if (flo * p.theta <= 0) rhi = mid;
        else { rlo = mid; flo = p.theta; }
    }
    double dl3s = 0.5 * (rlo + rhi);
    TunedLocalResult out;
    out.run = local_map(make_state(dl3s), kappa, opts);  // full tolerance
    out.dl3 = dl3s;
    out.window = window;
    return out;
}

ShootResult shoot_double_step(double eps0, double mu, double chi, double kappa,
                              const IntegrateOptions& opts) {
    GerverFixedPoint fp = fixed_point(eps0);
    double E3_start = -0.5;

    auto mk1 = [&](double dl3) { return lift_incoming_state(fp, 1, mu, chi, dl3); };
    TunedLocalResult s1 = tuned_local_map(mk1, mu, 5e-3, kappa, opts);
    GlobalMapResult g1 = global_map(s1.run.out, opts);

    // re-aim inside the second neighborhood: prescribe e4 and retune the phase
    Eigen::Matrix<double, 6, 1> cback = delaunay_coords(g1.out);
    DelaunayHyperbolic hyb =
        hyperbolic_from_cartesian({g1.out.Q4, g1.out.v4}, Frame::RightAtQ2, 1.0 + mu);
    double e4_meas = hyb.eccentricity();
    double G4_new = hyb.L * std::sqrt(fp.e4_starstar * fp.e4_starstar - 1.0) *
                    (hyb.G >= 0 ? 1.0 : -1.0);
    SectionChart chart{-2.0, hamiltonian(g1.out), g1.out};
    Eigen::Matrix<double, 6, 1> target = cback;
    target(5) = cback(5) - std::atan(G4_new / hyb.L) + std::atan(hyb.G / hyb.L);
    target(4) = G4_new;
    auto mk2 = [&](double dl3) {
        Eigen::Matrix<double, 6, 1> x = target;
        x(1) += dl3;
        return chart.state(x);
    };
    TunedLocalResult s2 = tuned_local_map(mk2, mu, kPi, kappa, opts);
    GlobalMapResult g2 = global_map(s2.run.out, opts);  // sanity leg to x4 = -2 first

    double E3_end = s2.run.triple.E3;
    double lambda = 2.0 * std::abs(E3_end);
    // continue to the scaled section and renormalize
    SectionSpec sec{SectionKind::X4Scaled, +1, kappa, lambda};
    PhaseState on_scaled = integrate_to_section(g2.out, sec, 40.0 * chi, opts);
    RenormResult rn = renormalize(on_scaled);

    ShootResult out;
    out.multiplier = E3_end / E3_start;
    DelaunayElliptic el = elliptic_from_cartesian({rn.out.Q3, rn.out.v3}, 1.0);
    out.e3_final = el.eccentricity();
    out.g3_final = el.g;
    out.dev_e3 = std::abs(out.e3_final - eps0);
    out.dev_g3 = std::abs(wrap_angle(out.g3_final - kPi / 2.0));
    out.retune_e4 = std::abs(e4_meas - fp.e4_starstar);
    out.retune_ell3 = std::abs(wrap_angle(s2.dl3));
    out.theta1 = s1.run.theta_out;
    out.theta2 = s2.run.theta_out;
    out.final_state = rn.out;
    return out;
}

// ---------------------------------------------------------------------------

void write_trajectory_csv(const std::string& path,
                          const std::vector<std::array<double, 10>>& rows) {
    std::ofstream out(path);
    if (!out) throw SimulatorError("cannot write trajectory: " + path);
    out << "t,Q3x,Q3y,v3x,v3y,Q4x,Q4y,v4x,v4y,H\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf,
                      "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9]);
        out << buf;
    }
}

void write_event_log(const std::string& path, const std::vector<EventRecord>& events) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : events) {
        nlohmann::json j;
        j["kind"] = e.kind;
        j["t"] = e.t;
        j["state"] = {e.state.Q3.x, e.state.Q3.y, e.state.v3.x, e.state.v3.y,
                      e.state.Q4.x, e.state.Q4.y, e.state.v4.x, e.state.v4.y};
        j["delaunay"] = {e.delaunay(0), e.delaunay(1), e.delaunay(2),
                         e.delaunay(3), e.delaunay(4), e.delaunay(5)};
        arr.push_back(std::move(j));
    }
    std::ofstream out(path);
    if (!out) throw SimulatorError("cannot write event log: " + path);
    out << arr.dump(2) << "\n";
}

}  // namespace tctb
