// SPDX-License-Identifier: Apache-2.0
//
// eqpi run <config> [--out DIR]
// eqpi verify <config> <run_dir>
// eqpi rate <run_dir> [--window LO HI]

#include <iostream>

#include <CLI11.hpp>

#include "eqpi/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Policy iteration for entropy-regularized time-inconsistent control in one dimension"};
    app.require_subcommand(1);

    std::string run_config;
    std::string out_dir;
    auto* run = app.add_subcommand("run", "iterate to convergence and write a run directory");
    run->add_option("config", run_config, "YAML configuration")->required();
    run->add_option("--out", out_dir, "output directory (overrides output.dir)");

    std::string verify_config, verify_dir;
    auto* verify = app.add_subcommand("verify", "run the verification suites on a run directory");
    verify->add_option("config", verify_config, "YAML configuration used for the run")->required();
    verify->add_option("run_dir", verify_dir, "run directory")->required();

    std::string rate_dir;
    std::vector<std::size_t> window;
    auto* rate = app.add_subcommand("rate", "fit a geometric rate to increments.csv");
    rate->add_option("run_dir", rate_dir, "run directory")->required();
    rate->add_option("--window", window, "n_lo n_hi")->expected(2);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : eqpi::exit_code::config;
    }

    try {
        if (*run) {
            std::optional<std::string> out;
            if (!out_dir.empty()) out = out_dir;
            return eqpi::cmd_run(run_config, out, std::cerr);
        }
        if (*verify) return eqpi::cmd_verify(verify_config, verify_dir, std::cerr);
        std::optional<std::pair<std::size_t, std::size_t>> w;
        if (window.size() == 2) w = std::make_pair(window[0], window[1]);
        return eqpi::cmd_rate(rate_dir, w, std::cout, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return eqpi::exit_code::config;
    }
}
