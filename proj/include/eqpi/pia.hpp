// SPDX-License-Identifier: Apache-2.0
//
// Policy iteration: from Z^n build the Gibbs policy, evaluate it through the
// linear PDE family, recompute Z, repeat until the discrete C2-type increment
// of (V1, V2) falls below tol.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqpi/pde1d.hpp"
#include "eqpi/rate.hpp"

namespace eqpi {

enum class InitMode { zero, terminal, expr };

std::string to_string(InitMode m);
InitMode init_mode_from_string(const std::string& s);

struct InitSpec {
    InitMode mode = InitMode::zero;
    std::string v1_expr = "0";  // over tau, t, y, x
    std::string v2_expr = "0";  // over t, x
};

struct PiaOptions {
    double tol = 1e-7;
    std::size_t max_iters = 100;
    FamilyOptions family;
    std::size_t rate_window_lo = 2;
};

struct IterateState {
    std::size_t n = 0;
    SlabField v1;
    Field1D v2;
    /// Z^n from (V1, V2) with H^n, H^n_z and the evaluation sources it induces.
    PolicySources policy;
    /// The Z that generated (V1, V2); empty for n = 0.
    Field1D policy_z;
    double last_increment = 0.0;

    const Field1D& z() const { return policy.z; }
    const Field1D& h() const { return policy.h; }
    const Field1D& hz() const { return policy.hz; }
};

struct IncrementRecord {
    std::size_t n = 0;
    double sup = 0.0;       // sup of the increment values
    double grad_sup = 0.0;  // t and x first-difference parts
    double hess_sup = 0.0;  // second-difference part
    double c2 = 0.0;        // d_n
    double value_c2 = 0.0;  // [V1^n] + ||V2^n||
    double wall_ms = 0.0;
};

struct IterationReport {
    std::vector<IncrementRecord> records;  // n = 0, 1, ...
    std::optional<RateFit> rate;
    std::string rate_note;
    bool converged = false;
    std::string stop_reason;
    double tol = 0.0;
    double wall_ms = 0.0;

    std::size_t iterations() const { return records.empty() ? 0 : records.back().n; }
};

class NotConverged : public std::runtime_error {
public:
    NotConverged(IterationReport report, IterateState state);
    const IterationReport& report() const { return report_; }
    const IterateState& state() const { return state_; }

private:
    IterationReport report_;
    IterateState state_;
};

class OutOfDomain : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

struct RunResult {
    IterateState state;
    IterationReport report;
};

class Solver {
public:
    /// Validates the problem and grid; throws ValidationError.
    Solver(ProblemSpec spec, const GridSpec& grid, PiaOptions opts = {});
    Solver(const Solver&) = delete;
    Solver& operator=(const Solver&) = delete;

    const ProblemSpec& problem() const { return spec_; }
    const GridSpec& grid_spec() const { return grid_spec_; }
    const Grid& grid() const { return grid_; }
    const ProblemLattice& lattice() const { return *lattice_; }
    const PiaOptions& options() const { return opts_; }
    const ValidationReport& validation() const { return validation_; }

    IterateState initialize(const InitSpec& init) const;
    IterateState step(const IterateState& state) const;

    using Observer = std::function<void(const IterateState&)>;
    /// Iterates to convergence; throws NotConverged after max_iters.
    RunResult run(const InitSpec& init, const Observer& observer = {}) const;

    /// Gibbs density of pi^{n+1} at a lattice point (t, x) and any a in A.
    double policy_density_at(const IterateState& state, double t, double x, double a) const;

    /// Family options for a state whose V1 has n_y reference slots.
    FamilyOptions family_options(std::size_t n_y) const;

private:
    ProblemSpec spec_;
    GridSpec grid_spec_;
    Grid grid_;
    PiaOptions opts_;
    ValidationReport validation_;
    std::unique_ptr<ProblemLattice> lattice_;
};

/// J(t, x) = V1(t, t, x, x) + G(t, x, V2(t, x)).
Field1D objective(const ProblemSpec& spec, const IterateState& state);

/// d_n pieces of the increment between two states.
IncrementRecord increment(const IterateState& next, const IterateState& prev);

}  // namespace eqpi
