// SPDX-License-Identifier: Apache-2.0

#include "eqpi/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace eqpi {

namespace {

void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
    if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
T get(const YAML::Node& node, const std::string& key, const std::string& where, T fallback) {
    const YAML::Node v = node[key];
    if (!v) return fallback;
    try {
        return v.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

std::map<std::string, double> number_map(const YAML::Node& node, const std::string& where) {
    std::map<std::string, double> out;
    if (!node) return out;
    if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        try {
            out[key] = kv.second.as<double>();
        } catch (const YAML::Exception&) {
            throw ConfigError(where + "." + key + " must be a number");
        }
    }
    return out;
}

Expr parse_coefficient(const std::string& text, const std::map<std::string, double>& constants,
                       const std::string& where) {
    try {
        return parse(text, constants);
    } catch (const std::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

const std::vector<std::pair<const char*, Expr ProblemSpec::*>>& coefficient_fields() {
    static const std::vector<std::pair<const char*, Expr ProblemSpec::*>> fields = {
        {"b", &ProblemSpec::drift_b},          {"sigma", &ProblemSpec::vol_sigma},
        {"r", &ProblemSpec::reward_r},         {"delta", &ProblemSpec::discount_delta},
        {"F", &ProblemSpec::terminal_F},       {"h", &ProblemSpec::terminal_h},
        {"G", &ProblemSpec::nonlinear_G},      {"Gz", &ProblemSpec::nonlinear_Gz}};
    return fields;
}

ProblemSpec parse_problem(const YAML::Node& node) {
    if (!node) throw ConfigError("missing 'problem' section");
    check_keys(node, "problem", {"builtin", "params", "overrides", "inline"});
    if (node["builtin"] && node["inline"]) throw ConfigError("problem takes either 'builtin' or 'inline', not both");

    if (node["builtin"]) {
        const auto name = get<std::string>(node, "builtin", "problem", "");
        ProblemSpec spec;
        try {
            spec = builtin_problem(name, number_map(node["params"], "problem.params"));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (const YAML::Node ov = node["overrides"]) {
            std::set<std::string> names;
            for (const auto& f : coefficient_fields()) names.insert(f.first);
            check_keys(ov, "problem.overrides", names);
            for (const auto& [key, member] : coefficient_fields()) {
                if (!ov[key]) continue;
                spec.*member = parse_coefficient(get<std::string>(ov, key, "problem.overrides", ""), spec.params,
                                                 "problem.overrides." + std::string(key));
            }
            spec.name += "+overrides";
        }
        return spec;
    }
    if (!node["inline"]) throw ConfigError("problem needs 'builtin' or 'inline'");
    if (node["params"] || node["overrides"]) throw ConfigError("'params' and 'overrides' belong to builtin problems");

    const YAML::Node in = node["inline"];
    std::set<std::string> allowed{"lambda", "T", "a_lo", "a_hi", "params", "name"};
    for (const auto& f : coefficient_fields()) allowed.insert(f.first);
    check_keys(in, "problem.inline", allowed);

    ProblemSpec spec;
    spec.name = get<std::string>(in, "name", "problem.inline", "inline");
    spec.params = number_map(in["params"], "problem.inline.params");
    const std::map<std::string, std::string> defaults{{"b", "0"}, {"sigma", "1"}, {"r", "0"}, {"delta", "1"},
                                                      {"F", "0"}, {"h", "0"},     {"G", "0"}, {"Gz", "0"}};
    for (const auto& [key, member] : coefficient_fields()) {
        const auto text = get<std::string>(in, key, "problem.inline", defaults.at(key));
        spec.*member = parse_coefficient(text, spec.params, "problem.inline." + std::string(key));
    }
    spec.temperature_lambda = get<double>(in, "lambda", "problem.inline", 1.0);
    spec.horizon_T = get<double>(in, "T", "problem.inline", 1.0);
    spec.action = {get<double>(in, "a_lo", "problem.inline", 0.0), get<double>(in, "a_hi", "problem.inline", 1.0)};
    return spec;
}

GridSpec parse_grid(const YAML::Node& node) {
    GridSpec g;
    if (!node) return g;
    check_keys(node, "grid", {"x_min", "x_max", "n_x", "n_t", "n_a", "boundary_buffer", "storage", "memory_cap_mb"});
    g.x_min = get<double>(node, "x_min", "grid", g.x_min);
    g.x_max = get<double>(node, "x_max", "grid", g.x_max);
    g.n_x = get<std::size_t>(node, "n_x", "grid", g.n_x);
    g.n_t = get<std::size_t>(node, "n_t", "grid", g.n_t);
    g.n_a = get<std::size_t>(node, "n_a", "grid", g.n_a);
    g.boundary_buffer = get<std::size_t>(node, "boundary_buffer", "grid", (g.n_x - 1) / 8);
    g.memory_cap_mb = get<double>(node, "memory_cap_mb", "grid", g.memory_cap_mb);
    try {
        g.storage = storage_mode_from_string(get<std::string>(node, "storage", "grid", "diagonal_slab"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("grid.storage: ") + e.what());
    }
    return g;
}

void parse_pia(const YAML::Node& node, RunConfig& cfg) {
    if (!node) return;
    check_keys(node, "pia", {"init", "tol", "max_iters", "theta", "rate_window_lo"});
    if (const YAML::Node init = node["init"]) {
        if (init.IsScalar()) {
            try {
                cfg.init.mode = init_mode_from_string(init.as<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("pia.init: ") + e.what());
            }
            if (cfg.init.mode == InitMode::expr) throw ConfigError("pia.init expr needs a mapping {v1, v2}");
        } else {
            check_keys(init, "pia.init", {"v1", "v2"});
            cfg.init.mode = InitMode::expr;
            cfg.init.v1_expr = get<std::string>(init, "v1", "pia.init", "0");
            cfg.init.v2_expr = get<std::string>(init, "v2", "pia.init", "0");
        }
    }
    cfg.pia.tol = get<double>(node, "tol", "pia", cfg.pia.tol);
    if (!(cfg.pia.tol > 0.0)) throw ConfigError("pia.tol must be > 0");
    const auto iters = get<long long>(node, "max_iters", "pia", static_cast<long long>(cfg.pia.max_iters));
    if (iters < 0) throw ConfigError("pia.max_iters must be >= 0");
    cfg.pia.max_iters = static_cast<std::size_t>(iters);
    cfg.pia.family.theta = get<double>(node, "theta", "pia", cfg.pia.family.theta);
    if (!(cfg.pia.family.theta >= 0.5 && cfg.pia.family.theta <= 1.0)) throw ConfigError("pia.theta must lie in [0.5, 1]");
    cfg.pia.rate_window_lo = get<std::size_t>(node, "rate_window_lo", "pia", cfg.pia.rate_window_lo);
}

void parse_verify(const YAML::Node& node, RunConfig& cfg) {
    VerifyConfig& v = cfg.verify;
    v.tc_reduction = cfg.problem.name == "tc_reduction";
    if (!node) return;
    check_keys(node, "verify", {"suites", "mc", "deviations"});
    if (const YAML::Node suites = node["suites"]) {
        if (!suites.IsSequence()) throw ConfigError("verify.suites must be a list");
        v.mc = v.equilibrium = v.eehjb = v.tc_reduction = v.boundary = v.perturbation = false;
        for (const auto& s : suites) {
            const auto name = s.as<std::string>();
            if (name == "mc") v.mc = true;
            else if (name == "equilibrium") v.equilibrium = true;
            else if (name == "eehjb") v.eehjb = true;
            else if (name == "tc_reduction") v.tc_reduction = true;
            else if (name == "boundary") v.boundary = true;
            else if (name == "perturbation") v.perturbation = true;
            else throw ConfigError("unknown verification suite '" + name + "'");
        }
    }
    if (const YAML::Node mc = node["mc"]) {
        check_keys(mc, "verify.mc", {"n_paths", "n_steps", "seed", "antithetic", "points"});
        v.mc_config.n_paths = get<std::size_t>(mc, "n_paths", "verify.mc", v.mc_config.n_paths);
        v.mc_config.n_steps = get<std::size_t>(mc, "n_steps", "verify.mc", v.mc_config.n_steps);
        v.mc_config.rng_seed = get<std::uint64_t>(mc, "seed", "verify.mc", v.mc_config.rng_seed);
        v.mc_config.antithetic = get<bool>(mc, "antithetic", "verify.mc", v.mc_config.antithetic);
        v.mc_points = get<std::size_t>(mc, "points", "verify.mc", v.mc_points);
        try {
            validate_mc(v.mc_config);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (v.mc_points == 0) throw ConfigError("verify.mc.points must be >= 1");
    }
    if (const YAML::Node devs = node["deviations"]) {
        if (!devs.IsSequence()) throw ConfigError("verify.deviations must be a list");
        v.deviations.clear();
        for (const auto& d : devs) {
            try {
                v.deviations.push_back(Deviation::parse(d.as<std::string>()));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("verify.deviations: ") + e.what());
            }
        }
    }
}

void parse_output(const YAML::Node& node, RunConfig& cfg) {
    if (!node) return;
    check_keys(node, "output", {"dir", "formats"});
    cfg.output.dir = get<std::string>(node, "dir", "output", cfg.output.dir);
    if (const YAML::Node f = node["formats"]) {
        if (!f.IsSequence()) throw ConfigError("output.formats must be a list");
        cfg.output.json = cfg.output.csv = false;
        for (const auto& item : f) {
            const auto name = item.as<std::string>();
            if (name == "json") cfg.output.json = true;
            else if (name == "csv") cfg.output.csv = true;
            else throw ConfigError("unknown output format '" + name + "'");
        }
    }
}

}  // namespace

RunConfig parse_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("YAML: ") + e.what());
    }
    check_keys(root, "config", {"problem", "grid", "pia", "verify", "output"});
    RunConfig cfg;
    try {
        cfg.problem = parse_problem(root["problem"]);
        cfg.grid = parse_grid(root["grid"]);
        parse_pia(root["pia"], cfg);
        parse_verify(root["verify"], cfg);
        parse_output(root["output"], cfg);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("YAML: ") + e.what());
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::vector<std::string> suite_names(const VerifyConfig& v) {
    std::vector<std::string> out;
    if (v.mc) out.push_back("mc");
    if (v.equilibrium) out.push_back("equilibrium");
    if (v.eehjb) out.push_back("eehjb");
    if (v.tc_reduction) out.push_back("tc_reduction");
    if (v.boundary) out.push_back("boundary");
    if (v.perturbation) out.push_back("perturbation");
    return out;
}

}  // namespace eqpi
