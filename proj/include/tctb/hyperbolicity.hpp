// Singular-direction data of the local map, limiting global-map vectors,
// non-degeneracy inner products, the constrained energy-phase derivative,
// and the closed-form limiting variational blocks with an ODE oracle.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace tctb {

struct HyperbolicityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

// Tangent vector in coordinates (L3, ell3, G3, g3, G4, g4).  Components whose
// reference values were never published are computed but flagged unchecked.
struct TangentVector6 {
    Vector6 v;
    std::array<bool, 6> checked{};
};

// d(incoming relative angular momentum) of the local map, mu -> 0 limit.
TangentVector6 l_hat(int j, double eps0);

// d(outgoing Delaunay data)/d(exchange angle), mu -> 0 limit; omega = 3
// flips the sign (role swap).
TangentVector6 u_hat(int j, double eps0, int omega = 4);

struct GlobalLimitVectors {
    Vector6 lbar;     // strongest expanding functional of the global map
    Vector6 lbarbar;  // subleading functional
    Vector6 w;        // strongest expanding image direction
    Vector6 wtilde;   // phase direction d/d ell3
};

GlobalLimitVectors global_limit_vectors(double L4_in, double G4_in, double L4_out,
                                        double G4_out);

// All six transversality inner products at the fixed point, with the
// hyperbola data each one is evaluated at.
struct NondegeneracyReport {
    struct Product {
        std::string name;
        double value;
        double threshold;
        bool pass;
    };
    std::vector<Product> products;
    bool all_pass;
};

NondegeneracyReport nondegeneracy_report(double eps0, double threshold = 0.05);

// dE3+/dpsi of the collision map constrained to a fixed outgoing asymptote
// direction (bordered linear system); `condition` flags ill-conditioning.
struct EnergyPhaseDerivative {
    double value;
    double condition;
};

EnergyPhaseDerivative energy_phase_derivative(int j, double eps0);

// ---------------------------------------------------------------------------
// limiting variational blocks

enum class VariationalMap { I, III, V };

// Nilpotent generator; trace(A) = det(A) = 0 and A^2 = 0 exactly.
Eigen::Matrix2d nilpotent_generator(double L4, double G4);

struct VariationalLimit {
    double L4, G4;
    Eigen::Matrix2d A;
    double xi;   // rescaled radius |Q4|/chi
    double tau;  // xi^2 / (2 (1-xi)^2)
};

VariationalLimit variational_limit(double L4, double G4, double xi);

Eigen::Matrix2d variational_block(VariationalMap map, double L4, double G4);
Eigen::Vector2d variational_dY_dL3(double L4, double G4);

// Independent oracle: integrates the rescaled variational equation along the
// xi profile of the requested map at finite chi.
Eigen::Matrix2d variational_ode_oracle(VariationalMap map, double L4, double G4,
                                       double chi);
Eigen::Vector2d variational_ode_dY_dL3(double L4, double G4, double chi);

// Derivative of the renormalization in Delaunay coordinates.
Matrix6 renorm_derivative(double lambda);

}  // namespace tctb
