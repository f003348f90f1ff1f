// scratch smoke run for the simulator (replaced by the real suites)
#include <chrono>
#include <cstdio>

#include "tctb/gerver.hpp"
#include "tctb/hyperbolicity.hpp"
#include "tctb/kepler.hpp"
#include "tctb/simulator.hpp"

using namespace tctb;
using Clock = std::chrono::steady_clock;

static double secs(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

int main() {
    setvbuf(stdout, nullptr, _IONBF, 0);
    double mu = 1e-3, chi = 1e4;
    GerverFixedPoint fp = fixed_point(0.5);

    auto t0 = Clock::now();
    PhaseState s0 = lift_incoming_state(fp, 1, mu, chi, 0.0);
    std::printf("lifted: Q3=(%.4f,%.4f) Q4=(%.4f,%.4f) x4=%.6f H=%.3e\n", s0.Q3.x, s0.Q3.y,
                s0.Q4.x, s0.Q4.y, s0.Q4.x, hamiltonian(s0));

    auto mk = [&](double d) { return lift_incoming_state(fp, 1, mu, chi, d); };
    TunedLocalResult loc = tuned_local_map(mk, mu, 5e-3, 0.45, {}, 4,
                                           TuneTarget::AimFarCenter, 0.5 * mu);
    auto t1 = Clock::now();
    std::printf("tuned local: dl3=%.3e theta=%.2e G_left=%.2e mindist=%.2e enc_t=%.3f [%.1fs]\n",
                loc.dl3, loc.run.theta_out, loc.run.G_left, loc.run.min_distance,
                loc.run.encounter_time, secs(t0, t1));
    std::printf("triple: E=%.5f e=%.5f g=%.5f | predict (-0.5, 0.86603, 1.5708)\n",
                loc.run.triple.E3, loc.run.triple.e3, loc.run.triple.g3);

    auto t2 = Clock::now();
    GlobalMapResult g = global_map(loc.run.out);
    auto t3 = Clock::now();
    std::printf("global: dE3=%.3e dG3=%.3e dg3=%.3e theta_ret=%.3e windings=%d minQ1=%.3f [%.1fs]\n",
                g.dE3, g.dG3, g.dg3, g.theta_in_return, g.windings, g.min_dist_q1,
                secs(t2, t3));
    std::printf("H drift over excursion: %.2e\n",
                hamiltonian(g.out) - hamiltonian(loc.run.out));

    // renormalization FD
    PhaseState r0 = g.out;
    double E3 = dot(r0.v3, r0.v3) / 2 - 1.0 / norm(r0.Q3);
    double lam = 3.0;
    SectionChart chart{-2.0, hamiltonian(r0), r0};
    auto map = [&](const Eigen::Matrix<double, 6, 1>& x) {
        return delaunay_coords(renormalize(chart.state(x), lam).out);
    };
    Jacobian6 J = finite_diff_jacobian(map, delaunay_coords(r0), 1e-6);
    Matrix6 expect = renorm_derivative(lam);
    std::printf("dR gap = %.2e (consistency %.1e)  E3=%.4f\n",
                (J.J - expect).cwiseAbs().maxCoeff(), J.consistency, E3);

    // Kepler period sanity
    PhaseState kp;
    kp.mu = 0.0;
    kp.chi = 1e12;
    CartesianOrbitState c3 = elliptic_to_cartesian({1.0, 0.0, 0.8, 0.3});
    kp.Q3 = c3.q;
    kp.v3 = c3.p;
    kp.Q4 = {-5.0, 3.0};
    kp.v4 = {1.0, 0.9};
    SectionSpec per{SectionKind::Pericenter3, +1};
    auto t4 = Clock::now();
    PhaseState kret = kp;
    for (int i = 0; i < 10; ++i) kret = integrate_to_section(kret, per, 50.0);
    auto t5 = Clock::now();
    std::printf("10 periods: T/10=%.12f expect %.12f  dH=%.2e [%.1fs]\n", kret.t / 10.0,
                2 * kPi, hamiltonian(kret) - hamiltonian(kp), secs(t4, t5));
    return 0;
}
