// SPDX-License-Identifier: Apache-2.0
//
// The run / verify / rate commands and the files they exchange:
//
//   report.json      configuration echo, validation, per-iteration norms, rate fit
//   increments.csv   n,sup,grad_sup,hess_sup,c2,wall_ms   (n >= 1)
//   plotdata.csv     n,ln_d
//   v2.csv z.csv z_policy.csv j.csv    t,x,value on the lattice
//   verify.json      per-suite checks

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>

#include "eqpi/config.hpp"

namespace eqpi {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace exit_code {
constexpr int ok = 0;
constexpr int config = 1;
constexpr int not_converged = 2;
constexpr int verification = 3;
}  // namespace exit_code

/// report.json text; keys sorted, two-space indent.
std::string report_json(const RunConfig& cfg, const Solver& solver, const IterationReport& rep,
                        const IterateState& state);

void write_run_outputs(const std::string& dir, const RunConfig& cfg, const Solver& solver,
                       const IterationReport& rep, const IterateState& state);

/// Rebuilds the converged state from a run directory: V2 and the policy Z
/// are read back, V1 is re-evaluated from the policy Z. An unconverged run
/// only fills the flags.
struct Snapshot {
    IterateState state;
    bool converged = false;
    double j_mismatch = 0.0;  // |J(file) - J(rebuilt)|
    double z_mismatch = 0.0;  // |Z(file) - Z(rebuilt)|
};

Snapshot load_snapshot(const std::string& dir, const Solver& solver);

void write_field_csv(const std::string& path, const Field1D& f);
Field1D read_field_csv(const std::string& path, const Grid& g);

/// increments.csv as n -> c2.
std::map<std::size_t, double> read_increments(const std::string& dir);

/// Runs the enabled suites; returns verify.json text and the verdict.
std::pair<std::string, bool> run_verification(const RunConfig& cfg, const Solver& solver, const Snapshot& snap,
                                              std::ostream& log);

int cmd_run(const std::string& config_path, const std::optional<std::string>& out_dir, std::ostream& log);
int cmd_verify(const std::string& config_path, const std::string& run_dir, std::ostream& log);
int cmd_rate(const std::string& run_dir, const std::optional<std::pair<std::size_t, std::size_t>>& window,
             std::ostream& out, std::ostream& log);

}  // namespace eqpi
