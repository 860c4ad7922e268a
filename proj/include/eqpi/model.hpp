// SPDX-License-Identifier: Apache-2.0
//
// Control problem data, discretization parameters and probe-based validation.

#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqpi/coeffexpr.hpp"

namespace eqpi {

struct ActionInterval {
    double lo = 0.0;
    double hi = 1.0;
    double volume() const { return hi - lo; }
};

/// The entropy-regularized, possibly time-inconsistent control problem in one
/// state dimension with a scalar action.
struct ProblemSpec {
    std::string name = "inline";
    std::map<std::string, double> params;

    Expr drift_b;         // b(t, x, a)
    Expr vol_sigma;       // sigma(t, x)
    Expr reward_r;        // r(y, t, x, a)
    Expr discount_delta;  // delta(s)
    Expr terminal_F;      // F(tau, y, x)
    Expr terminal_h;      // h(x)
    Expr nonlinear_G;     // G(t, x, z)
    Expr nonlinear_Gz;    // dG/dz(t, x, z)

    double temperature_lambda = 1.0;
    double horizon_T = 1.0;
    ActionInterval action;

    double b(double t, double x, double a) const;
    double sigma(double t, double x) const;
    double r(double y, double t, double x, double a) const;
    double delta(double s) const;
    double F(double tau, double y, double x) const;
    double h(double x) const;
    double G(double t, double x, double z) const;
    double Gz(double t, double x, double z) const;

    /// True when neither r nor F reads the reference state y; the V1 family
    /// is then the same for every y.
    bool reference_state_free() const;
};

enum class StorageMode { diagonal_slab, full_tensor };

std::string to_string(StorageMode m);
StorageMode storage_mode_from_string(const std::string& s);

struct GridSpec {
    double x_min = -6.0;
    double x_max = 6.0;
    std::size_t n_x = 129;
    std::size_t n_t = 65;
    std::size_t n_a = 32;
    std::size_t boundary_buffer = 16;
    StorageMode storage = StorageMode::diagonal_slab;
    double memory_cap_mb = 1024.0;

    double dx() const { return (x_max - x_min) / static_cast<double>(n_x - 1); }
};

enum class CheckStatus { pass, warn, fail };

struct ValidationCheck {
    std::string name;
    CheckStatus status = CheckStatus::pass;
    std::string message;
    double measured = 0.0;
    std::string probe;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    double sigma_min = 0.0;
    double sup_abs_b = 0.0;
    double sup_abs_r = 0.0;
    double gz_max_relative_gap = 0.0;

    bool ok() const;
    const ValidationCheck* find(const std::string& name) const;
    /// First failing check, or nullptr.
    const ValidationCheck* first_failure() const;
};

class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(ValidationReport report);
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

class UnknownProblem : public std::invalid_argument {
public:
    explicit UnknownProblem(const std::string& name)
        : std::invalid_argument("unknown builtin problem '" + name + "'") {}
};

/// Probe the checkable regularity conditions on a fixed lattice. Throws
/// ValidationError when any hard check fails; warnings are only reported.
ValidationReport validate(const ProblemSpec& spec, const GridSpec& grid);

/// Grid-only checks (sizes, buffer, memory cap). Throws ValidationError.
void validate_grid(const GridSpec& grid);

/// Registry: consumption_exp, consumption_sigmoid, consumption_arctan,
/// lq_bounded, tc_reduction. Unspecified params take their defaults;
/// unknown parameter names are rejected.
ProblemSpec builtin_problem(const std::string& name, const std::map<std::string, double>& params = {});

std::vector<std::string> builtin_problem_names();

/// Bytes needed for a full (tau, t, y, x) tensor on this grid.
double full_tensor_bytes(const GridSpec& grid);

}  // namespace eqpi
