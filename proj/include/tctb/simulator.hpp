// Direct integration of the finite-(mu, chi) four-body Hamiltonian with two
// fixed centers, Poincare-section event detection, the local and global maps,
// renormalization, finite-difference Jacobians, and the shooting harness.
//
// Fixed centers sit at Q2 = (0,0) and Q1 = (-chi, 0); the per-mass rescaled
// Hamiltonian is
//   H = v3^2/2 + v4^2/2 - 1/|Q3| - 1/|Q4| - 1/|Q3+(chi,0)| - 1/|Q4+(chi,0)|
//       - mu/|Q3-Q4|.
#pragma once

#include <array>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tctb/gerver.hpp"
#include "tctb/kepler.hpp"
#include "tctb/vec.hpp"

namespace tctb {

struct SimulatorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CollisionError : SimulatorError { using SimulatorError::SimulatorError; };
struct EscapeError : SimulatorError { using SimulatorError::SimulatorError; };
struct NoCrossingError : SimulatorError { using SimulatorError::SimulatorError; };
struct IntegrationError : SimulatorError { using SimulatorError::SimulatorError; };

struct PhaseState {
    Vec2 Q3, v3, Q4, v4;
    double mu = 1e-4;
    double chi = 1e4;
    double t = 0.0;
};

double hamiltonian(const PhaseState& s);
std::array<double, 8> hamiltonian_rhs(const PhaseState& s);

// ---------------------------------------------------------------------------
// sections and events

enum class SectionKind { X4Minus2, X4HalfChi, RelDist, X4Scaled, Pericenter3 };

struct SectionSpec {
    SectionKind kind = SectionKind::X4Minus2;
    int direction = +1;      // sign of d(event)/dt at the crossing; 0 = any
    double kappa = 0.45;     // RelDist radius exponent, in (1/3, 1/2)
    double lambda = 1.0;     // X4Scaled: x4 = -2/lambda
};

struct EventRecord {
    std::string kind;
    double t;
    PhaseState state;
    Eigen::Matrix<double, 6, 1> delaunay;
};

struct IntegrateOptions {
    double abs_tol = 1e-12;
    double rel_tol = 1e-12;
    double max_step = 0.0;            // 0 = unlimited
    double pair_floor_factor = 1e-3;  // collision if |Q3-Q4| < mu * this
    double escape_factor = 10.0;      // escape if |Q4| > chi * this
    std::vector<EventRecord>* event_log = nullptr;
    std::vector<std::array<double, 10>>* trajectory = nullptr;  // t, state, H
};

PhaseState integrate_to_section(const PhaseState& s, const SectionSpec& sec, double t_max,
                                const IntegrateOptions& opts = {});

// Section Delaunay coordinates (L3, ell3, G3, g3, G4, g4): Q3 elliptic about
// Q2 with k = 1, Q4 hyperbolic in the right frame with k = 1 + mu.
Eigen::Matrix<double, 6, 1> delaunay_coords(const PhaseState& s);

// Chart inverse on a section {x4 = section_x4}: (L4, ell4) completed from the
// section constraint and a fixed total energy.
struct SectionChart {
    double section_x4;
    double H0;
    PhaseState base;  // provides mu, chi and the Newton seed

    Eigen::Matrix<double, 6, 1> coords(const PhaseState& s) const { return delaunay_coords(s); }
    PhaseState state(const Eigen::Matrix<double, 6, 1>& x) const;
};

// ---------------------------------------------------------------------------
// maps

struct LocalMapResult {
    PhaseState out;          // on {x_traveler = -2, xdot < 0}, traveler as Q4
    int omega = 4;           // which incoming body travels afterwards
    double min_distance = 0; // closest Q3-Q4 approach
    double theta_out = 0;    // osculating outgoing asymptote direction - pi
    double G_left = 0;       // instantaneous angular momentum about the far center
    double aim_far = 0;      // asymptotic angular momentum about the far center
    double encounter_time = 0;  // time spent inside the RelDist sphere
    OrbitTriple triple{};    // captured-body (E3, e3, g3) at exit
};

LocalMapResult local_map(const PhaseState& s, double kappa = 0.45,
                         const IntegrateOptions& opts = {});

struct GlobalMapResult {
    PhaseState out;           // back on {x4 = -2, xdot4 > 0}
    double dE3, dG3, dg3;     // drift of the captured-body integrals
    double theta_in_return;   // incoming asymptote deviation at return
    double min_dist_q1;       // closest approach to the far center
    int windings;             // y4 = 0 crossings beyond -chi/2
};

GlobalMapResult global_map(const PhaseState& s, const IntegrateOptions& opts = {},
                           std::optional<double> target_x4 = {});

struct RenormResult {
    PhaseState out;
    double lambda;
};

// Rescale by lambda (default 2|E3|, making the renormalized energy -1/2),
// reflect about the x-axis, send chi -> lambda*chi.
RenormResult renormalize(const PhaseState& s, std::optional<double> lambda = {});

// ---------------------------------------------------------------------------
// derivatives and relative motion

struct Jacobian6 {
    Eigen::Matrix<double, 6, 6> J;
    double step;
    double consistency;  // max relative disagreement between h and h/2 stencils
};

Jacobian6 finite_diff_jacobian(
    const std::function<Eigen::Matrix<double, 6, 1>(const Eigen::Matrix<double, 6, 1>&)>& map,
    const Eigen::Matrix<double, 6, 1>& x0, double h);

struct RelativeSplit {
    Vec2 vplus, vminus, Qplus, Qminus;
    double G_in;   // 2 vminus x Qminus
    double L_in;   // NaN when the relative motion is not hyperbolic
};

RelativeSplit relative_split(const PhaseState& s);

// ---------------------------------------------------------------------------
// Gerver lifting and tuned runs

// State on {x4 = -2, xdot4 > 0}: traveler inbound on the collision-j
// hyperbola, captured body at the collision-course phase plus dl3.
PhaseState lift_incoming_state(const GerverFixedPoint& fp, int j, double mu, double chi,
                               double dl3 = 0.0, std::optional<double> e4 = {});

// State on {x4 = -2, xdot4 < 0}: traveler outbound on the post-collision-j
// hyperbola (for exercising the global map alone).
PhaseState lift_outgoing_state(const GerverFixedPoint& fp, int j, double mu, double chi,
                               double ell3 = 0.0);

struct TunedLocalResult {
    LocalMapResult run;
    double dl3;          // tuned phase offset
    double window;       // search window used
};

// What the phase tuning drives to zero: the exit-asymptote defect theta - pi,
// or the traveler's angular momentum about the far center minus `aim` (the
// U-turn condition for a returning excursion).
enum class TuneTarget { ExitHorizontal, AimFarCenter };

// Two-stage shooting in the captured-body phase: golden-section on the miss
// distance, then bisection on the selected defect along the omega branch.
TunedLocalResult tuned_local_map(const std::function<PhaseState(double)>& make_state,
                                 double mu, double coarse_window = 5e-3,
                                 double kappa = 0.45, const IntegrateOptions& opts = {},
                                 int omega_want = 4,
                                 TuneTarget target = TuneTarget::ExitHorizontal,
                                 double aim = 0.0);

struct ShootResult {
    double multiplier;        // energy gain across the double step
    double e3_final, g3_final;
    double dev_e3, dev_g3;    // deviation from the fixed point after renorm
    double retune_e4, retune_ell3;  // size of the U2 re-aim between the steps
    double theta1, theta2;    // exit-asymptote defects at the two encounters
    PhaseState final_state;
};

ShootResult shoot_double_step(double eps0, double mu, double chi, double kappa = 0.45,
                              const IntegrateOptions& opts = {});

// ---------------------------------------------------------------------------
// file interfaces

void write_trajectory_csv(const std::string& path,
                          const std::vector<std::array<double, 10>>& rows);
void write_event_log(const std::string& path, const std::vector<EventRecord>& events);

}  // namespace tctb
