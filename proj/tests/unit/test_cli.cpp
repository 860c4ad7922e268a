#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "eqpi/runner.hpp"

using namespace eqpi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("eqpi_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name, const std::string& text) const {
        std::ofstream(path / name) << text;
        return (path / name).string();
    }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const char* small_consumption =
    "problem: {builtin: consumption_exp}\n"
    "grid: {n_x: 65, n_t: 33}\n"
    "pia: {tol: 1.0e-7, max_iters: 60}\n"
    "verify: {suites: [eehjb, equilibrium]}\n";

}  // namespace

TEST_CASE("config: defaults, overrides and rejections") {
    const RunConfig c = parse_config("problem: {builtin: consumption_exp, params: {rho: 0.2}}\n");
    CHECK(c.grid.n_x == 129);
    CHECK(c.grid.boundary_buffer == 16);
    CHECK(c.problem.params.at("rho") == doctest::Approx(0.2));
    CHECK(c.problem.delta(1.0) == doctest::Approx(1.0 / 1.2));

    const RunConfig o = parse_config(
        "problem: {builtin: consumption_exp, overrides: {b: \"c0 - 0.5*a\"}}\n"
        "grid: {n_x: 33, n_t: 17}\n");
    CHECK(o.problem.b(0.0, 0.0, 0.4) == doctest::Approx(0.8));
    CHECK(o.problem.name.find("+overrides") != std::string::npos);
    CHECK(o.grid.boundary_buffer == 4);

    CHECK_THROWS_AS(parse_config("problem: {builtin: nope}\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("problem: {builtin: lq_bounded}\ngrid: {n_xx: 3}\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("problem: {builtin: lq_bounded}\npia: {tol: 0}\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("problem: {builtin: lq_bounded}\nverify: {suites: [bogus]}\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("grid: {n_x: 33}\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/eqpi.yaml"), std::exception);
}

TEST_CASE("cli: run, verify and rate on a converged run") {
    TempDir tmp;
    const std::string cfg = tmp.file("c.yaml", small_consumption);
    const std::string out = tmp.sub("run");
    std::ostringstream log;
    REQUIRE(cmd_run(cfg, out, log) == exit_code::ok);
    for (const char* f : {"report.json", "increments.csv", "plotdata.csv", "v2.csv", "z.csv", "j.csv", "z_policy.csv"}) {
        CHECK(fs::exists(fs::path(out) / f));
    }
    const auto rep = nlohmann::json::parse(slurp(fs::path(out) / "report.json"));
    CHECK(rep.at("converged").get<bool>());
    CHECK(rep.at("rate").at("p_hat").get<double>() < 1.0);

    CHECK(cmd_verify(cfg, out, log) == exit_code::ok);
    const auto ver = nlohmann::json::parse(slurp(fs::path(out) / "verify.json"));
    CHECK(ver.dump().find("eehjb_residual") != std::string::npos);

    std::ostringstream rate_out;
    CHECK(cmd_rate(out, std::nullopt, rate_out, log) == exit_code::ok);
    const auto fit = nlohmann::json::parse(rate_out.str());
    CHECK(fit.at("p_hat").get<double>() < 1.0);
    CHECK(fit.at("r2").get<double>() >= 0.98);

    std::ostringstream ignored;
    CHECK(cmd_rate(out, std::make_pair<std::size_t, std::size_t>(2, 40), ignored, log) == exit_code::config);
}

TEST_CASE("cli: rate on exact geometric increments") {
    TempDir tmp;
    std::ofstream inc(tmp.path / "increments.csv");
    inc.precision(17);
    inc << "n,sup,grad_sup,hess_sup,c2,wall_ms\n";
    for (int n = 1; n <= 8; ++n) inc << n << ",0,0,0," << 3.0 * std::pow(0.5, n) << ",0\n";
    inc.close();
    std::ostringstream out, log;
    REQUIRE(cmd_rate(tmp.path.string(), std::nullopt, out, log) == exit_code::ok);
    const auto fit = nlohmann::json::parse(out.str());
    CHECK(fit.at("p_hat").get<double>() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit.at("C_hat").get<double>() == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit.at("r2").get<double>() == doctest::Approx(1.0).epsilon(1e-12));

    std::ostringstream none;
    CHECK(cmd_rate(tmp.sub("missing"), std::nullopt, none, log) == exit_code::config);
}

TEST_CASE("cli: failure exit codes") {
    TempDir tmp;
    std::ostringstream log;

    SUBCASE("increasing discount is a validation error") {
        const std::string cfg = tmp.file(
            "d.yaml", "problem: {builtin: consumption_exp, overrides: {delta: \"1 + s\"}}\ngrid: {n_x: 33, n_t: 17}\n");
        CHECK(cmd_run(cfg, tmp.sub("run"), log) == exit_code::config);
        CHECK(log.str().find("delta_monotone") != std::string::npos);
    }
    SUBCASE("max_iters 0 is not converged, verify refuses it") {
        const std::string cfg =
            tmp.file("m.yaml", "problem: {builtin: consumption_exp}\ngrid: {n_x: 33, n_t: 17}\npia: {max_iters: 0}\n");
        CHECK(cmd_run(cfg, tmp.sub("run"), log) == exit_code::not_converged);
        CHECK(fs::exists(fs::path(tmp.sub("run")) / "report.json"));
        CHECK(cmd_verify(cfg, tmp.sub("run"), log) == exit_code::not_converged);
    }
    SUBCASE("bad config file") {
        CHECK(cmd_run(tmp.file("bad.yaml", "problem: [\n"), tmp.sub("run"), log) == exit_code::config);
        CHECK(cmd_run(tmp.sub("absent.yaml"), tmp.sub("run"), log) == exit_code::config);
    }
    SUBCASE("corrupted and missing snapshot files") {
        const std::string cfg = tmp.file("c.yaml", small_consumption);
        const std::string out = tmp.sub("run");
        REQUIRE(cmd_run(cfg, out, log) == exit_code::ok);

        const fs::path v2 = fs::path(out) / "v2.csv";
        std::string text = slurp(v2);
        std::istringstream lines(text);
        std::string rebuilt, line;
        int row = 0;
        while (std::getline(lines, line)) {
            // bump one interior value of the t = 0 row
            if (row == 33) line = line.substr(0, line.rfind(',') + 1) + "0.5";
            rebuilt += line + "\n";
            ++row;
        }
        std::ofstream(v2) << rebuilt;
        std::ostringstream vlog;
        CHECK(cmd_verify(cfg, out, vlog) == exit_code::verification);
        CHECK(vlog.str().find("eehjb_residual") != std::string::npos);

        fs::remove(fs::path(out) / "z_policy.csv");
        CHECK(cmd_verify(cfg, out, log) == exit_code::config);
    }
}

TEST_CASE("cli: verify against a config for another grid is an IO error") {
    TempDir tmp;
    std::ostringstream log;
    const std::string cfg = tmp.file("c.yaml", small_consumption);
    REQUIRE(cmd_run(cfg, tmp.sub("run"), log) == exit_code::ok);
    const std::string other =
        tmp.file("o.yaml", "problem: {builtin: consumption_exp}\ngrid: {n_x: 33, n_t: 17}\n");
    CHECK(cmd_verify(other, tmp.sub("run"), log) == exit_code::config);
}

TEST_CASE("shipped benchmarks converge with decaying increments") {
    for (const std::string name : {"consumption_exp", "consumption_sigmoid", "consumption_arctan", "lq_bounded"}) {
        CAPTURE(name);
        GridSpec g;
        g.n_x = 65;
        g.n_t = 33;
        g.boundary_buffer = 8;
        PiaOptions o;
        o.tol = 1e-9;
        o.max_iters = 60;
        const Solver s(builtin_problem(name), g, o);
        const RunResult r = s.run({});
        CHECK(r.report.converged);
        const auto& rec = r.report.records;
        const std::size_t n_conv = r.report.iterations();
        for (std::size_t n = 2; n + 5 <= n_conv; ++n) CHECK(rec[n + 5].c2 <= rec[n].c2 / 10.0);
        for (std::size_t n = 2; n < n_conv; ++n) CHECK(rec[n + 1].c2 < rec[n].c2);
        REQUIRE(r.report.rate);
        CHECK(r.report.rate->p_hat < 1.0);
    }
}
