// SPDX-License-Identifier: Apache-2.0
//
// Independent checks on converged iterates: Monte Carlo Feynman-Kac values,
// the first-order equilibrium functional I(t, x, pi0), the EEHJB residual,
// the time-consistent reduction and boundary sensitivity.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eqpi/pia.hpp"
#include "eqpi/rate.hpp"

namespace eqpi {

class StateNotConverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- Monte Carlo

struct McConfig {
    std::size_t n_paths = 200000;
    std::size_t n_steps = 128;
    std::uint64_t rng_seed = 20240521;
    bool antithetic = true;
};

void validate_mc(const McConfig& mc);

struct McEstimate {
    double v1 = 0.0;
    double v2 = 0.0;
    double se1 = 0.0;
    double se2 = 0.0;
    std::size_t escaped = 0;
    std::size_t paths = 0;
    double escape_fraction() const { return paths == 0 ? 0.0 : static_cast<double>(escaped) / static_cast<double>(paths); }
    /// Above 1% escapes the estimate is not trusted.
    bool reliable() const { return escape_fraction() <= 0.01; }
};

/// Simulates dX = H_z(s, X; Z) ds + sigma dW from (t, x) under the Gibbs
/// policy of policy_z and averages the Feynman-Kac functionals of V1(tau, t,
/// y, x) and V2(t, x). Lattice quantities are interpolated bilinearly.
McEstimate mc_value(const Solver& solver, const Field1D& policy_z, double tau, double t, double y, double x,
                    const McConfig& mc);

/// The lattice with every other node in t and x. Throws std::invalid_argument
/// when n_x - 1 or n_t - 1 is odd.
GridSpec halved_grid(const GridSpec& g);

struct McPoint {
    double tau = 0.0, t = 0.0, y = 0.0, x = 0.0;
    double v1_pde = 0.0, v2_pde = 0.0;
    double floor1 = 0.0, floor2 = 0.0;  // |fine - coarse| at the node
    McEstimate estimate;
    bool passed = false;  // |V_PDE - V_MC| <= 3 SE + floor for both values, escapes <= 1%
};

/// Compares fine-lattice values with Monte Carlo at randomly drawn interior
/// nodes with tau = t and even indices, so that each node is also on the
/// coarse lattice of the coarse state. Points are drawn from mc.rng_seed.
std::vector<McPoint> mc_crosscheck(const Solver& solver, const IterateState& state, const IterateState& coarse,
                                   std::size_t points, const McConfig& mc);

// ---------------------------------------------------------------- equilibrium functional

enum class DeviationKind { uniform, dirac_lo, dirac_hi, gibbs_shift, converged };

struct Deviation {
    DeviationKind kind = DeviationKind::uniform;
    double shift = 0.0;  // gibbs_shift only

    std::string name() const;
    static Deviation parse(const std::string& text);  // "uniform", "dirac_lo", "gibbs_shift(+0.5)", ...
};

/// Default set: uniform, dirac_lo, dirac_hi, gibbs_shift(-0.5), gibbs_shift(+0.5).
std::vector<Deviation> default_deviations();

/// Density of the deviation at the quadrature nodes of (t_l, x_k).
std::vector<double> deviation_density(const Solver& solver, const IterateState& state, const Deviation& d,
                                      std::size_t l, std::size_t k);

enum class Stencil { central3, central5 };

/// I(t_l, x_k, pi0). The flow-time derivative of V1 on the diagonal comes from
/// the PDE relation with the coefficients of the policy that produced the
/// state; x-derivatives use the given stencil.
double equilibrium_residual(const Solver& solver, const IterateState& state, const Deviation& d, std::size_t l,
                            std::size_t k, Stencil stencil = Stencil::central3);

struct DeviationSummary {
    std::string name;
    double max_value = 0.0;
    std::size_t l_at = 0, k_at = 0;
};

struct ResidualSweep {
    std::vector<DeviationSummary> deviations;
    double max_over_deviations = 0.0;   // max I over points and listed deviations
    double converged_abs_max = 0.0;     // max |I(pi*)|
    double stencil_floor = 0.0;         // max |I_3 - I_5| over points and deviations
    double grid_floor = 0.0;            // max(stencil_floor, 10 tol)
    std::size_t points = 0;
    bool sign_ok = false;               // max I <= grid_floor
    bool zero_ok = false;               // |I(pi*)| <= grid_floor / 10
};

/// Evaluates I at every interior lattice point with t < T. Throws
/// StateNotConverged when the state's last increment exceeds tol.
ResidualSweep equilibrium_sweep(const Solver& solver, const IterateState& state,
                                const std::vector<Deviation>& deviations, double tol);

// ---------------------------------------------------------------- EEHJB residual

struct EehjbResidual {
    double v1_diag = 0.0;
    double v2 = 0.0;
};

/// Plugs the fields into the discrete EEHJB system. By default the
/// coefficients come from the state's own Z; z_override selects another Z,
/// e.g. the policy Z that generated the state.
EehjbResidual eehjb_residual(const Solver& solver, const IterateState& state,
                             const Field1D* z_override = nullptr);

// ---------------------------------------------------------------- time-consistent reduction

struct SuiteCheck {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string detail;
};

struct SuiteReport {
    std::string name;
    std::vector<SuiteCheck> checks;
    bool passed() const;
    const SuiteCheck* find(const std::string& name) const;
};

struct TcOptions {
    double factorization_tol = 5e-3;
    double improvement_slack = 1e-6;
    double hjb_tol = 5e-3;
    double pia_tol = 1e-9;
    std::size_t max_iters = 60;
};

/// Standard exploratory HJB  W_t + 1/2 sigma^2 W_xx - rho W + H(t, x, W_x) = 0,
/// W(T) = F(T, x, x), by implicit time stepping with a policy-iteration
/// (Howard) solve at each level.
Field1D solve_direct_hjb(const ProblemLattice& lattice, double rho);

/// Runs the reduction checks on a problem expected to be time consistent:
/// preconditions (exponential discount, y-free r and F, G = 0), exponential
/// factorization of the full V1 tensor, monotone improvement of J^n and
/// agreement with the direct HJB solve. The grid must use full_tensor storage.
SuiteReport tc_reduction_suite(const ProblemSpec& spec, const GridSpec& grid, const TcOptions& opts = {});

// ---------------------------------------------------------------- boundary sensitivity

struct BoundarySensitivity {
    double max_change = 0.0;
    double widened_x_min = 0.0;
    double widened_x_max = 0.0;
    std::size_t widened_n_x = 0;
};

/// Re-runs with the domain widened by 25% (same dx, same buffer) and reports
/// the largest change of J on the original interior lattice.
BoundarySensitivity boundary_sensitivity(const ProblemSpec& spec, const GridSpec& grid, const PiaOptions& opts,
                                         const Field1D& j_reference);

// ---------------------------------------------------------------- perturbation quotient

/// (J^{pi_eps} - J^{pi*}) / eps at (t_l, x_k), where pi_eps follows the
/// deviation on [t_l, t_l + m dt) and the state's policy afterwards, for
/// each m in steps. A slow diagnostic without threshold.
std::vector<double> perturbation_quotients(const Solver& solver, const IterateState& state, const Deviation& d,
                                           std::size_t l, std::size_t k, const std::vector<std::size_t>& steps);

}  // namespace eqpi
