// SPDX-License-Identifier: Apache-2.0
//
// YAML run configuration.
//
//   problem:   {builtin: name, params: {...}, overrides: {r: "...", ...}}
//          or  {inline: {b, sigma, r, delta, F, h, G, Gz, lambda, T, a_lo, a_hi, params}}
//   grid:      {x_min, x_max, n_x, n_t, n_a, boundary_buffer, storage, memory_cap_mb}
//   pia:       {init: zero | terminal | {v1: "...", v2: "..."}, tol, max_iters, theta, rate_window_lo}
//   verify:    {suites: [...], mc: {...}, deviations: [...]}
//   output:    {dir, formats: [json, csv]}

#pragma once

#include <string>
#include <vector>

#include "eqpi/pia.hpp"
#include "eqpi/verify.hpp"

namespace eqpi {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct VerifyConfig {
    bool mc = true;
    bool equilibrium = true;
    bool eehjb = true;
    bool tc_reduction = false;
    bool boundary = false;
    bool perturbation = false;
    McConfig mc_config;
    std::size_t mc_points = 5;
    std::vector<Deviation> deviations = default_deviations();
};

struct OutputConfig {
    std::string dir = "runs/default";
    bool json = true;
    bool csv = true;
};

struct RunConfig {
    ProblemSpec problem;
    GridSpec grid;
    InitSpec init;
    PiaOptions pia;
    VerifyConfig verify;
    OutputConfig output;
};

/// Throws ConfigError on unreadable files, bad YAML, unknown keys or bad values.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& yaml_text);

std::vector<std::string> suite_names(const VerifyConfig& v);

}  // namespace eqpi
