// SPDX-License-Identifier: Apache-2.0

#include "eqpi/runner.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "eqpi/parallel.hpp"

namespace eqpi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string status_name(CheckStatus s) {
    switch (s) {
        case CheckStatus::pass: return "pass";
        case CheckStatus::warn: return "warn";
        case CheckStatus::fail: return "fail";
    }
    return "fail";
}

json problem_json(const ProblemSpec& p) {
    json j;
    j["name"] = p.name;
    j["params"] = json::object();
    for (const auto& [k, v] : p.params) j["params"][k] = v;
    j["coefficients"] = {{"b", p.drift_b.to_string()},         {"sigma", p.vol_sigma.to_string()},
                         {"r", p.reward_r.to_string()},        {"delta", p.discount_delta.to_string()},
                         {"F", p.terminal_F.to_string()},      {"h", p.terminal_h.to_string()},
                         {"G", p.nonlinear_G.to_string()},     {"Gz", p.nonlinear_Gz.to_string()}};
    j["lambda"] = p.temperature_lambda;
    j["T"] = p.horizon_T;
    j["a_lo"] = p.action.lo;
    j["a_hi"] = p.action.hi;
    return j;
}

json grid_json(const GridSpec& g) {
    return {{"x_min", g.x_min},       {"x_max", g.x_max},
            {"n_x", g.n_x},           {"n_t", g.n_t},
            {"n_a", g.n_a},           {"boundary_buffer", g.boundary_buffer},
            {"storage", to_string(g.storage)}, {"memory_cap_mb", g.memory_cap_mb}};
}

json record_json(const IncrementRecord& r) {
    return {{"n", r.n},           {"sup", number(r.sup)},       {"grad_sup", number(r.grad_sup)},
            {"hess_sup", number(r.hess_sup)}, {"c2", number(r.c2)}, {"value_c2", number(r.value_c2)},
            {"wall_ms", r.wall_ms}};
}

std::FILE* open_out(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write '" + path + "'");
    return f;
}

void close_out(std::FILE* f, const std::string& path) {
    if (std::fclose(f) != 0) throw IoError("error writing '" + path + "'");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("error writing '" + path + "'");
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Splits a comma-separated line into doubles.
std::vector<double> parse_row(const std::string& line, const std::string& path, std::size_t line_no) {
    std::vector<double> out;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p <= end) {
        const char* comma = std::find(p, end, ',');
        double v = 0.0;
        const auto res = std::from_chars(p, comma, v);
        if (res.ec != std::errc() || res.ptr != comma) {
            throw IoError(path + ":" + std::to_string(line_no) + ": malformed number");
        }
        out.push_back(v);
        if (comma == end) break;
        p = comma + 1;
    }
    return out;
}

Field1D objective_from(const ProblemSpec& spec, const SlabField& v1, const Field1D& v2) {
    IterateState tmp;
    tmp.v1 = v1;
    tmp.v2 = v2;
    return objective(spec, tmp);
}

double max_abs_diff(const Field1D& a, const Field1D& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

// ---------------------------------------------------------------- writers

std::string report_json(const RunConfig& cfg, const Solver& solver, const IterationReport& rep,
                        const IterateState& state) {
    json j;
    j["version"] = kVersion;
    j["problem"] = problem_json(solver.problem());
    j["grid"] = grid_json(solver.grid_spec());
    j["pia"] = {{"init", to_string(cfg.init.mode)},
                {"init_v1", cfg.init.v1_expr},
                {"init_v2", cfg.init.v2_expr},
                {"tol", cfg.pia.tol},
                {"max_iters", cfg.pia.max_iters},
                {"theta", cfg.pia.family.theta},
                {"rate_window_lo", cfg.pia.rate_window_lo}};
    j["threads"] = thread_count();
    j["reference_slots"] = state.v1.n_y();

    json checks = json::array();
    for (const auto& c : solver.validation().checks) {
        checks.push_back({{"name", c.name},
                          {"status", status_name(c.status)},
                          {"message", c.message},
                          {"measured", number(c.measured)},
                          {"probe", c.probe}});
    }
    j["validation"] = checks;

    json iters = json::array();
    for (const auto& r : rep.records) iters.push_back(record_json(r));
    j["iterations"] = iters;
    j["n_iterations"] = rep.iterations();
    j["final_increment"] = rep.records.size() > 1 ? number(rep.records.back().c2) : json(nullptr);
    j["converged"] = rep.converged;
    j["stop_reason"] = rep.stop_reason;
    if (rep.rate) {
        j["rate"] = {{"p_hat", number(rep.rate->p_hat)},
                     {"C_hat", number(rep.rate->C_hat)},
                     {"r2", number(rep.rate->r_squared)},
                     {"n_lo", rep.rate->n_lo},
                     {"n_hi", rep.rate->n_hi}};
    } else {
        j["rate"] = nullptr;
    }
    j["rate_note"] = rep.rate_note;
    j["wall_ms"] = rep.wall_ms;
    return j.dump(2) + "\n";
}

void write_field_csv(const std::string& path, const Field1D& f) {
    std::FILE* out = open_out(path);
    const Grid& g = f.grid();
    std::fprintf(out, "t,x,value\n");
    for (std::size_t l = 0; l < g.nt; ++l)
        for (std::size_t k = 0; k < g.nx; ++k) std::fprintf(out, "%.17g,%.17g,%.17g\n", g.t(l), g.x(k), f(l, k));
    close_out(out, path);
}

Field1D read_field_csv(const std::string& path, const Grid& g) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "t,x,value") throw IoError(path + ": expected header t,x,value");
    Field1D f(g);
    std::size_t count = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto row = parse_row(line, path, line_no);
        if (row.size() != 3) throw IoError(path + ":" + std::to_string(line_no) + ": expected 3 columns");
        if (count >= g.nt * g.nx) throw IoError(path + ": more rows than lattice nodes");
        const std::size_t l = count / g.nx, k = count % g.nx;
        if (std::fabs(row[0] - g.t(l)) > 1e-9 || std::fabs(row[1] - g.x(k)) > 1e-9) {
            throw IoError(path + ":" + std::to_string(line_no) + ": node does not match the configured grid");
        }
        f(l, k) = row[2];
        ++count;
    }
    if (count != g.nt * g.nx) throw IoError(path + ": expected " + std::to_string(g.nt * g.nx) + " rows");
    return f;
}

void write_run_outputs(const std::string& dir, const RunConfig& cfg, const Solver& solver,
                       const IterationReport& rep, const IterateState& state) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
    const fs::path base(dir);

    if (cfg.output.json) write_text((base / "report.json").string(), report_json(cfg, solver, rep, state));
    if (!cfg.output.csv) return;

    {
        const std::string path = (base / "increments.csv").string();
        std::FILE* out = open_out(path);
        std::fprintf(out, "n,sup,grad_sup,hess_sup,c2,wall_ms\n");
        for (const auto& r : rep.records) {
            if (r.n == 0) continue;
            std::fprintf(out, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.n, r.sup, r.grad_sup, r.hess_sup, r.c2,
                         r.wall_ms);
        }
        close_out(out, path);
    }
    {
        const std::string path = (base / "plotdata.csv").string();
        std::FILE* out = open_out(path);
        std::fprintf(out, "n,ln_d\n");
        for (const auto& r : rep.records) {
            if (r.n == 0 || !(r.c2 > 0.0)) continue;
            std::fprintf(out, "%zu,%.17g\n", r.n, std::log(r.c2));
        }
        close_out(out, path);
    }
    write_field_csv((base / "v2.csv").string(), state.v2);
    write_field_csv((base / "z.csv").string(), state.z());
    write_field_csv((base / "j.csv").string(), objective(solver.problem(), state));
    if (!state.policy_z.empty()) write_field_csv((base / "z_policy.csv").string(), state.policy_z);
}

// ---------------------------------------------------------------- readers

Snapshot load_snapshot(const std::string& dir, const Solver& solver) {
    const fs::path base(dir);
    json rep;
    try {
        rep = json::parse(read_text((base / "report.json").string()));
    } catch (const json::exception& e) {
        throw IoError("report.json: " + std::string(e.what()));
    }
    const Grid& g = solver.grid();
    const GridSpec& gs = solver.grid_spec();
    try {
        const json& rg = rep.at("grid");
        if (rg.at("n_x").get<std::size_t>() != gs.n_x || rg.at("n_t").get<std::size_t>() != gs.n_t ||
            rg.at("n_a").get<std::size_t>() != gs.n_a || rg.at("x_min").get<double>() != gs.x_min ||
            rg.at("x_max").get<double>() != gs.x_max) {
            throw IoError("run directory was produced with a different grid");
        }
    } catch (const json::exception& e) {
        throw IoError("report.json: " + std::string(e.what()));
    }

    Snapshot snap;
    IterateState& s = snap.state;
    std::size_t n_y = 1;
    try {
        snap.converged = rep.at("converged").get<bool>();
        s.n = rep.at("n_iterations").get<std::size_t>();
        n_y = rep.at("reference_slots").get<std::size_t>();
        const json& fi = rep.at("final_increment");
        s.last_increment = fi.is_number() ? fi.get<double>() : INFINITY;
    } catch (const json::exception& e) {
        throw IoError("report.json: " + std::string(e.what()));
    }
    if (n_y != 1 && n_y != g.nx) throw IoError("report.json: bad reference_slots");
    if (!snap.converged) return snap;

    s.policy_z = read_field_csv((base / "z_policy.csv").string(), g);
    s.v2 = read_field_csv((base / "v2.csv").string(), g);
    const Field1D z_file = read_field_csv((base / "z.csv").string(), g);
    const Field1D j_file = read_field_csv((base / "j.csv").string(), g);

    const ProblemLattice& lat = solver.lattice();
    const FamilyOptions fam = solver.family_options(n_y);
    FamilyResult res = evaluate_policy_family(lat, policy_sources(lat, s.policy_z, n_y), fam);
    s.v1 = std::move(res.v1);
    s.policy = policy_sources(lat, compute_z(solver.problem(), s.v1, s.v2), n_y);

    snap.j_mismatch = max_abs_diff(objective_from(solver.problem(), s.v1, s.v2), j_file);
    snap.z_mismatch = max_abs_diff(s.z(), z_file);
    return snap;
}

std::map<std::size_t, double> read_increments(const std::string& dir) {
    const std::string path = (fs::path(dir) / "increments.csv").string();
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("n,", 0) != 0) throw IoError(path + ": missing header");
    std::map<std::size_t, double> d;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto row = parse_row(line, path, line_no);
        if (row.size() < 5) throw IoError(path + ":" + std::to_string(line_no) + ": expected at least 5 columns");
        d[static_cast<std::size_t>(row[0])] = row[4];
    }
    return d;
}

// ---------------------------------------------------------------- verification

namespace {

json check_json(const SuiteCheck& c) {
    return {{"name", c.name},
            {"passed", c.passed},
            {"measured", number(c.measured)},
            {"threshold", number(c.threshold)},
            {"detail", c.detail}};
}

json mc_suite(const RunConfig& cfg, const Solver& solver, const IterateState& state, bool& passed,
              std::ostream& log) {
    json out;
    GridSpec coarse;
    try {
        coarse = halved_grid(solver.grid_spec());
    } catch (const std::invalid_argument& e) {
        passed = false;
        out["passed"] = false;
        out["detail"] = e.what();
        return out;
    }
    // grid floor: the same problem on the lattice with every other node
    const Solver coarse_solver(solver.problem(), coarse, cfg.pia);
    IterateState cs;
    try {
        cs = coarse_solver.run(cfg.init).state;
    } catch (const NotConverged& e) {
        cs = e.state();
        out["coarse_note"] = e.what();
    }
    out["coarse_grid"] = {{"n_x", coarse.n_x}, {"n_t", coarse.n_t}};

    const auto pts = mc_crosscheck(solver, state, cs, cfg.verify.mc_points, cfg.verify.mc_config);
    json points = json::array();
    bool all = true;
    for (const auto& p : pts) {
        const McEstimate& e = p.estimate;
        all = all && p.passed;
        points.push_back({{"tau", p.tau},           {"t", p.t},
                          {"y", p.y},               {"x", p.x},
                          {"v1_pde", p.v1_pde},     {"v1_mc", e.v1},
                          {"v1_se", e.se1},         {"v1_floor", p.floor1},
                          {"v2_pde", p.v2_pde},     {"v2_mc", e.v2},
                          {"v2_se", e.se2},         {"v2_floor", p.floor2},
                          {"escape_fraction", e.escape_fraction()},
                          {"passed", p.passed}});
        log << "  mc point (t=" << p.t << ", y=" << p.y << ", x=" << p.x << "): |dV1| "
            << std::fabs(p.v1_pde - e.v1) << " vs " << 3.0 * e.se1 + p.floor1 << ", |dV2| "
            << std::fabs(p.v2_pde - e.v2) << " vs " << 3.0 * e.se2 + p.floor2 << (p.passed ? "  ok" : "  FAIL")
            << "\n";
    }
    out["points"] = points;
    out["n_paths"] = cfg.verify.mc_config.n_paths;
    out["n_steps"] = cfg.verify.mc_config.n_steps;
    out["seed"] = cfg.verify.mc_config.rng_seed;
    out["antithetic"] = cfg.verify.mc_config.antithetic;
    out["passed"] = all;
    passed = passed && all;
    return out;
}

}  // namespace

std::pair<std::string, bool> run_verification(const RunConfig& cfg, const Solver& solver, const Snapshot& snap,
                                              std::ostream& log) {
    const IterateState& state = snap.state;
    const double tol = cfg.pia.tol;
    json suites;
    bool passed = true;

    {
        const bool ok = snap.j_mismatch <= 1e-12 && snap.z_mismatch <= 1e-12;
        suites["snapshot"] = {{"passed", ok}, {"j_mismatch", snap.j_mismatch}, {"z_mismatch", snap.z_mismatch}};
        log << "snapshot: J mismatch " << snap.j_mismatch << ", Z mismatch " << snap.z_mismatch
            << (ok ? "  ok" : "  FAIL") << "\n";
        passed = passed && ok;
    }
    if (cfg.verify.eehjb) {
        const EehjbResidual own = eehjb_residual(solver, state);
        const EehjbResidual frozen = eehjb_residual(solver, state, &state.policy_z);
        const bool ok = own.v1_diag <= 10.0 * tol && own.v2 <= 10.0 * tol && frozen.v1_diag <= 1e-9 &&
                        frozen.v2 <= 1e-9;
        suites["eehjb_residual"] = {{"passed", ok},
                                    {"v1_diag", own.v1_diag},
                                    {"v2", own.v2},
                                    {"threshold", 10.0 * tol},
                                    {"v1_diag_policy", frozen.v1_diag},
                                    {"v2_policy", frozen.v2},
                                    {"threshold_policy", 1e-9}};
        log << "eehjb_residual: V1 " << own.v1_diag << ", V2 " << own.v2 << " (<= " << 10.0 * tol << ")"
            << (ok ? "  ok" : "  FAIL") << "\n";
        passed = passed && ok;
    }
    if (cfg.verify.equilibrium) {
        const ResidualSweep sw = equilibrium_sweep(solver, state, cfg.verify.deviations, tol);
        const bool ok = sw.sign_ok && sw.zero_ok && sw.grid_floor <= 1e-3;
        json devs = json::array();
        for (const auto& d : sw.deviations) {
            devs.push_back({{"name", d.name},
                            {"max", number(d.max_value)},
                            {"t", solver.grid().t(d.l_at)},
                            {"x", solver.grid().x(d.k_at)}});
        }
        suites["equilibrium_residual"] = {{"passed", ok},
                                          {"max_I", number(sw.max_over_deviations)},
                                          {"converged_abs_max", sw.converged_abs_max},
                                          {"stencil_floor", sw.stencil_floor},
                                          {"grid_floor", sw.grid_floor},
                                          {"points", sw.points},
                                          {"deviations", devs}};
        log << "equilibrium_residual: max I " << sw.max_over_deviations << ", |I(pi*)| " << sw.converged_abs_max
            << ", floor " << sw.grid_floor << (ok ? "  ok" : "  FAIL") << "\n";
        passed = passed && ok;
    }
    if (cfg.verify.mc) {
        log << "mc:\n";
        suites["mc"] = mc_suite(cfg, solver, state, passed, log);
    }
    if (cfg.verify.tc_reduction) {
        GridSpec gs = solver.grid_spec();
        gs.storage = StorageMode::full_tensor;
        const SuiteReport rep = tc_reduction_suite(solver.problem(), gs);
        json checks = json::array();
        for (const auto& c : rep.checks) {
            checks.push_back(check_json(c));
            log << "tc_reduction " << c.name << ": " << c.measured << (c.passed ? "  ok" : "  FAIL")
                << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
        }
        suites["tc_reduction"] = {{"passed", rep.passed()}, {"checks", checks}};
        passed = passed && rep.passed();
    }
    if (cfg.verify.boundary) {
        const BoundarySensitivity b =
            boundary_sensitivity(solver.problem(), solver.grid_spec(), cfg.pia, objective(solver.problem(), state));
        suites["boundary"] = {{"passed", true},
                              {"max_change", b.max_change},
                              {"x_min", b.widened_x_min},
                              {"x_max", b.widened_x_max},
                              {"n_x", b.widened_n_x}};
        log << "boundary: max interior change of J " << b.max_change << " on [" << b.widened_x_min << ", "
            << b.widened_x_max << "]\n";
    }
    if (cfg.verify.perturbation) {
        const Grid& g = solver.grid();
        const std::size_t l = (g.nt - 1) / 4, k = (g.nx - 1) / 2;
        json rows = json::array();
        for (const auto& d : cfg.verify.deviations) {
            const auto q = perturbation_quotients(solver, state, d, l, k, {1, 2, 4, 8});
            rows.push_back({{"deviation", d.name()},
                            {"I", equilibrium_residual(solver, state, d, l, k)},
                            {"steps", {1, 2, 4, 8}},
                            {"quotients", q}});
        }
        suites["perturbation"] = {{"passed", true}, {"t", g.t(l)}, {"x", g.x(k)}, {"rows", rows}};
    }

    json out;
    out["version"] = kVersion;
    out["passed"] = passed;
    out["suites"] = suites;
    return {out.dump(2) + "\n", passed};
}

// ---------------------------------------------------------------- commands

int cmd_run(const std::string& config_path, const std::optional<std::string>& out_dir, std::ostream& log) {
    RunConfig cfg;
    try {
        cfg = load_config(config_path);
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::config;
    }
    if (out_dir) cfg.output.dir = *out_dir;

    std::unique_ptr<Solver> solver;
    try {
        solver = std::make_unique<Solver>(cfg.problem, cfg.grid, cfg.pia);
    } catch (const ValidationError& e) {
        log << "error: " << e.what() << "\n";
        for (const auto& c : e.report().checks) {
            if (c.status == CheckStatus::fail) log << "  check " << c.name << ": " << c.message << "\n";
        }
        return exit_code::config;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::config;
    }
    for (const auto& c : solver->validation().checks) {
        if (c.status == CheckStatus::warn) log << "warning: check " << c.name << ": " << c.message << "\n";
    }

    int code = exit_code::ok;
    IterationReport rep;
    IterateState state;
    try {
        RunResult rr = solver->run(cfg.init, [&](const IterateState& s) {
            if (s.n > 0) log << "  n = " << s.n << "  d_n = " << s.last_increment << "\n";
        });
        rep = std::move(rr.report);
        state = std::move(rr.state);
    } catch (const NotConverged& e) {
        rep = e.report();
        state = e.state();
        code = exit_code::not_converged;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::config;
    }
    try {
        write_run_outputs(cfg.output.dir, cfg, *solver, rep, state);
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::config;
    }
    log << (rep.converged ? "converged" : "not converged") << ": " << rep.stop_reason << "\n";
    if (rep.rate) log << "rate: p_hat " << rep.rate->p_hat << ", r2 " << rep.rate->r_squared << "\n";
    else if (!rep.rate_note.empty()) log << "rate: " << rep.rate_note << "\n";
    log << "outputs in " << cfg.output.dir << "\n";
    return code;
}

int cmd_verify(const std::string& config_path, const std::string& run_dir, std::ostream& log) {
    RunConfig cfg;
    std::unique_ptr<Solver> solver;
    Snapshot snap;
    try {
        cfg = load_config(config_path);
        solver = std::make_unique<Solver>(cfg.problem, cfg.grid, cfg.pia);
        snap = load_snapshot(run_dir, *solver);
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::config;
    }
    if (!snap.converged) {
        log << "error: the snapshot in " << run_dir << " did not converge\n";
        return exit_code::not_converged;
    }
    std::pair<std::string, bool> result;
    try {
        result = run_verification(cfg, *solver, snap, log);
        write_text((fs::path(run_dir) / "verify.json").string(), result.first);
    } catch (const StateNotConverged& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::not_converged;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::config;
    }
    log << (result.second ? "verification passed" : "verification FAILED") << "\n";
    return result.second ? exit_code::ok : exit_code::verification;
}

int cmd_rate(const std::string& run_dir, const std::optional<std::pair<std::size_t, std::size_t>>& window,
             std::ostream& out, std::ostream& log) {
    try {
        const auto d = read_increments(run_dir);
        if (d.empty()) throw IoError("increments.csv holds no increments");
        const std::size_t lo = window ? window->first : 2;
        const std::size_t hi = window ? window->second : d.rbegin()->first;
        const RateFit f = fit_rate(d, lo, hi);
        const json j = {{"p_hat", f.p_hat}, {"C_hat", f.C_hat}, {"r2", f.r_squared}, {"n_lo", lo}, {"n_hi", hi}};
        out << j.dump() << "\n";
        return exit_code::ok;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return exit_code::config;
    }
}

}  // namespace eqpi
