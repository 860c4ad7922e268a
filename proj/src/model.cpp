// SPDX-License-Identifier: Apache-2.0

#include "eqpi/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

namespace eqpi {

namespace {

Bindings bind(std::initializer_list<std::pair<Var, double>> values) {
    Bindings b = unbound();
    for (const auto& [v, x] : values) b[static_cast<std::size_t>(v)] = x;
    return b;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return out;
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

struct BuiltinDef {
    std::map<std::string, double> defaults;
    std::string b, sigma, r, delta, F, h, G, Gz;
};

BuiltinDef consumption(const std::string& utility, const std::string& discount, double rho) {
    BuiltinDef d;
    d.defaults = {{"rho", rho}, {"alpha", 1.0}, {"sigma", 1.0}, {"c0", 1.0},
                  {"a_lo", 0.1}, {"a_hi", 0.9}, {"lambda", 1.0}, {"T", 1.0}};
    d.b = "c0 - a";
    d.sigma = "sigma";
    d.r = utility;
    d.delta = discount;
    d.F = "0";
    d.h = "tanh(x)";
    d.G = "0";
    d.Gz = "0";
    return d;
}

BuiltinDef lookup_builtin(const std::string& name) {
    if (name == "consumption_exp") {
        return consumption("-exp(-alpha*a*exp(x))", "1/(1 + rho*s)", 0.1);
    }
    if (name == "consumption_sigmoid") {
        return consumption("1/(1 + exp(-alpha*a*exp(x)))", "1/(1 + rho*s)", 0.1);
    }
    if (name == "consumption_arctan") {
        return consumption("arctan(alpha*a*exp(x))", "1/(1 + rho*s)", 0.1);
    }
    if (name == "tc_reduction") {
        return consumption("-exp(-alpha*a*exp(x))", "exp(-rho*s)", 0.3);
    }
    if (name == "lq_bounded") {
        BuiltinDef d;
        d.defaults = {{"rho", 0.5}, {"sigma", 0.5}, {"kappa", 1.0}, {"gamma", 0.5}, {"theta", 0.2},
                      {"a_lo", -1.0}, {"a_hi", 1.0}, {"lambda", 0.5}, {"T", 1.0}};
        d.b = "a";
        d.sigma = "sigma";
        d.r = "-0.5*a^2 - 0.5*kappa*tanh(x - y)^2";
        d.delta = "1/(1 + rho*s)";
        d.F = "-0.5*gamma*tanh(x - y)^2";
        d.h = "tanh(x)";
        d.G = "-0.5*theta*z^2";
        d.Gz = "-theta*z";
        return d;
    }
    throw UnknownProblem(name);
}

void add_check(ValidationReport& rep, std::string name, CheckStatus status, std::string message,
               double measured = 0.0, std::string probe = {}) {
    rep.checks.push_back({std::move(name), status, std::move(message), measured, std::move(probe)});
}

}  // namespace

double ProblemSpec::b(double t, double x, double a) const {
    return drift_b.eval(bind({{Var::t, t}, {Var::x, x}, {Var::a, a}}));
}
double ProblemSpec::sigma(double t, double x) const {
    return vol_sigma.eval(bind({{Var::t, t}, {Var::x, x}}));
}
double ProblemSpec::r(double y, double t, double x, double a) const {
    return reward_r.eval(bind({{Var::y, y}, {Var::t, t}, {Var::x, x}, {Var::a, a}}));
}
double ProblemSpec::delta(double s) const { return discount_delta.eval(bind({{Var::s, s}})); }
double ProblemSpec::F(double tau, double y, double x) const {
    return terminal_F.eval(bind({{Var::tau, tau}, {Var::y, y}, {Var::x, x}}));
}
double ProblemSpec::h(double x) const { return terminal_h.eval(bind({{Var::x, x}})); }
double ProblemSpec::G(double t, double x, double z) const {
    return nonlinear_G.eval(bind({{Var::t, t}, {Var::x, x}, {Var::z, z}}));
}
double ProblemSpec::Gz(double t, double x, double z) const {
    return nonlinear_Gz.eval(bind({{Var::t, t}, {Var::x, x}, {Var::z, z}}));
}

bool ProblemSpec::reference_state_free() const {
    return !reward_r.depends_on(Var::y) && !terminal_F.depends_on(Var::y);
}

std::string to_string(StorageMode m) {
    return m == StorageMode::full_tensor ? "full_tensor" : "diagonal_slab";
}

StorageMode storage_mode_from_string(const std::string& s) {
    if (s == "diagonal_slab") return StorageMode::diagonal_slab;
    if (s == "full_tensor") return StorageMode::full_tensor;
    throw std::invalid_argument("unknown storage mode '" + s + "'");
}

bool ValidationReport::ok() const { return first_failure() == nullptr; }

const ValidationCheck* ValidationReport::find(const std::string& name) const {
    for (const auto& c : checks) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

const ValidationCheck* ValidationReport::first_failure() const {
    for (const auto& c : checks) {
        if (c.status == CheckStatus::fail) return &c;
    }
    return nullptr;
}

namespace {
std::string failure_message(const ValidationReport& r) {
    const ValidationCheck* f = r.first_failure();
    if (!f) return "validation failed";
    std::string msg = f->name + ": " + f->message;
    if (!f->probe.empty()) msg += " at " + f->probe;
    return msg;
}
}  // namespace

ValidationError::ValidationError(ValidationReport report)
    : std::runtime_error(failure_message(report)), report_(std::move(report)) {}

double full_tensor_bytes(const GridSpec& g) {
    const double nt = static_cast<double>(g.n_t);
    const double nx = static_cast<double>(g.n_x);
    return nt * nt * nx * nx * sizeof(double);
}

void validate_grid(const GridSpec& g) {
    ValidationReport rep;
    auto fail = [&](std::string msg) { add_check(rep, "grid", CheckStatus::fail, std::move(msg)); };
    if (!(g.x_min < g.x_max) || !std::isfinite(g.x_min) || !std::isfinite(g.x_max)) fail("x_min must be < x_max");
    if (g.n_x < 5) fail("n_x must be >= 5");
    if (g.n_t < 3) fail("n_t must be >= 3");
    if (g.n_a < 4) fail("n_a must be >= 4");
    if (g.boundary_buffer < 1 || 4 * g.boundary_buffer >= g.n_x) fail("boundary_buffer must satisfy 1 <= buffer < n_x/4");
    if (g.storage == StorageMode::full_tensor && full_tensor_bytes(g) > g.memory_cap_mb * 1024.0 * 1024.0) {
        fail("full_tensor storage needs " + fmt_short(full_tensor_bytes(g) / (1024.0 * 1024.0)) +
             " MB, above the memory cap of " + fmt_short(g.memory_cap_mb) + " MB");
    }
    if (!rep.ok()) throw ValidationError(std::move(rep));
}

ValidationReport validate(const ProblemSpec& spec, const GridSpec& grid) {
    validate_grid(grid);
    ValidationReport rep;

    // parameters
    {
        std::string bad;
        if (!(spec.temperature_lambda > 0.0)) bad = "lambda must be > 0";
        else if (!(spec.horizon_T > 0.0)) bad = "T must be > 0";
        else if (!(spec.action.hi > spec.action.lo)) bad = "action interval must satisfy a_lo < a_hi";
        add_check(rep, "parameters", bad.empty() ? CheckStatus::pass : CheckStatus::fail,
                  bad.empty() ? "lambda > 0, T > 0, 0 < |A| < inf" : bad);
        if (!bad.empty()) throw ValidationError(std::move(rep));
    }

    // variable sets
    {
        const std::vector<std::tuple<const char*, const Expr*, VarSet>> allowed = {
            {"drift_b", &spec.drift_b, {Var::t, Var::x, Var::a}},
            {"vol_sigma", &spec.vol_sigma, {Var::t, Var::x}},
            {"reward_r", &spec.reward_r, {Var::y, Var::t, Var::x, Var::a}},
            {"discount_delta", &spec.discount_delta, {Var::s}},
            {"terminal_F", &spec.terminal_F, {Var::tau, Var::y, Var::x}},
            {"terminal_h", &spec.terminal_h, {Var::x}},
            {"nonlinear_G", &spec.nonlinear_G, {Var::t, Var::x, Var::z}},
            {"nonlinear_Gz", &spec.nonlinear_Gz, {Var::t, Var::x, Var::z}},
        };
        std::string bad;
        for (const auto& [name, expr, vars] : allowed) {
            if (!expr->variables().subset_of(vars)) {
                bad = std::string(name) + " uses " + expr->variables().to_string() + ", allowed " + vars.to_string();
                break;
            }
        }
        add_check(rep, "variables", bad.empty() ? CheckStatus::pass : CheckStatus::fail,
                  bad.empty() ? "all coefficients use their declared variables" : bad);
        if (!bad.empty()) throw ValidationError(std::move(rep));
    }

    const double T = spec.horizon_T;
    const auto t_probe = linspace(0.0, T, 5);
    const auto x_probe = linspace(grid.x_min, grid.x_max, 9);
    const auto a_probe = linspace(spec.action.lo, spec.action.hi, 5);
    const auto s_probe = linspace(0.0, T, 33);
    const auto z_probe = linspace(-2.0, 2.0, 9);

    // Runs a probe body, converting expression domain errors into a failed check.
    auto guarded = [&](const std::string& name, const std::function<void()>& body) {
        try {
            body();
        } catch (const DomainError& e) {
            add_check(rep, name, CheckStatus::fail, std::string("domain error while probing: ") + e.what());
        }
    };

    guarded("delta_at_zero", [&] {
        const double d0 = spec.delta(0.0);
        const bool ok = std::fabs(d0 - 1.0) <= 1e-12;
        add_check(rep, "delta_at_zero", ok ? CheckStatus::pass : CheckStatus::fail,
                  ok ? "delta(0) = 1" : "delta(0) != 1", d0, "s=0");
    });

    guarded("delta_monotone", [&] {
        double prev = spec.delta(s_probe[0]);
        for (std::size_t i = 1; i < s_probe.size(); ++i) {
            const double cur = spec.delta(s_probe[i]);
            if (cur <= 0.0) {
                add_check(rep, "delta_monotone", CheckStatus::fail, "delta not positive", cur,
                          "s=" + fmt_short(s_probe[i]));
                return;
            }
            if (cur > prev + 1e-14 * std::max(1.0, std::fabs(prev))) {
                add_check(rep, "delta_monotone", CheckStatus::fail, "delta not non-increasing", cur - prev,
                          "s-probe " + fmt_short(s_probe[i - 1]) + " -> " + fmt_short(s_probe[i]));
                return;
            }
            prev = cur;
        }
        add_check(rep, "delta_monotone", CheckStatus::pass, "delta positive and non-increasing on probes");
    });

    guarded("sigma_lower_bound", [&] {
        double smin = INFINITY;
        std::string at;
        for (double t : t_probe) {
            for (double x : x_probe) {
                const double s = spec.sigma(t, x);
                if (s < smin) {
                    smin = s;
                    at = "t=" + fmt_short(t) + ", x=" + fmt_short(x);
                }
            }
        }
        rep.sigma_min = smin;
        const bool ok = smin > 0.0;
        add_check(rep, "sigma_lower_bound", ok ? CheckStatus::pass : CheckStatus::fail,
                  ok ? "sigma uniformly positive on probes" : "sigma not uniformly non-degenerate", smin, at);
    });

    guarded("G_z_consistent", [&] {
        double worst = 0.0;
        double worst_abs = -1.0;
        std::string at;
        for (double t : t_probe) {
            for (double x : x_probe) {
                for (double z : z_probe) {
                    const double step = 1e-4 * std::max(1.0, std::fabs(z));
                    const double fd = (spec.G(t, x, z + step) - spec.G(t, x, z - step)) / (2.0 * step);
                    const double gz = spec.Gz(t, x, z);
                    const double abs_gap = std::fabs(fd - gz);
                    const double rel = abs_gap / std::max(1.0, std::fabs(fd));
                    if (rel > worst || (rel == worst && abs_gap >= worst_abs)) {
                        worst = rel;
                        worst_abs = abs_gap;
                        at = "t=" + fmt_short(t) + ", x=" + fmt_short(x) + ", z=" + fmt_short(z);
                    }
                }
            }
        }
        rep.gz_max_relative_gap = worst;
        const bool ok = worst <= 1e-6;
        add_check(rep, "G_z_consistent", ok ? CheckStatus::pass : CheckStatus::fail,
                  ok ? "G_z matches centered differences of G" : "G_z inconsistent", worst, at);
    });

    auto bounded_probe = [&](const std::string& name, const std::function<double(double, double, double, double)>& f,
                             double& sup_out) {
        guarded(name, [&] {
            double sup = 0.0;
            for (double t : t_probe) {
                for (double x : x_probe) {
                    for (double y : x_probe) {
                        for (double a : a_probe) {
                            sup = std::max(sup, std::fabs(f(y, t, x, a)));
                        }
                    }
                }
            }
            sup_out = sup;
            const bool ok = sup < 1e6;
            add_check(rep, name, ok ? CheckStatus::pass : CheckStatus::warn,
                      ok ? "bounded on probe lattice" : "large values on probe lattice; may be unbounded", sup);
        });
    };
    bounded_probe("b_bounded", [&](double, double t, double x, double a) { return spec.b(t, x, a); }, rep.sup_abs_b);
    bounded_probe("r_bounded", [&](double y, double t, double x, double a) { return spec.r(y, t, x, a); },
                  rep.sup_abs_r);

    guarded("terminal_finite", [&] {
        for (double x : x_probe) {
            (void)spec.h(x);
            for (double y : x_probe) {
                for (double t : t_probe) (void)spec.F(t, y, x);
            }
        }
        add_check(rep, "terminal_finite", CheckStatus::pass, "F and h finite on probes");
    });

    if (!rep.ok()) throw ValidationError(std::move(rep));
    return rep;
}

ProblemSpec builtin_problem(const std::string& name, const std::map<std::string, double>& params) {
    BuiltinDef def = lookup_builtin(name);
    std::map<std::string, double> p = def.defaults;
    for (const auto& [key, value] : params) {
        if (!p.count(key)) throw std::invalid_argument("problem '" + name + "' has no parameter '" + key + "'");
        p[key] = value;
    }

    ProblemSpec spec;
    spec.name = name;
    spec.params = p;
    spec.drift_b = parse(def.b, p);
    spec.vol_sigma = parse(def.sigma, p);
    spec.reward_r = parse(def.r, p);
    spec.discount_delta = parse(def.delta, p);
    spec.terminal_F = parse(def.F, p);
    spec.terminal_h = parse(def.h, p);
    spec.nonlinear_G = parse(def.G, p);
    spec.nonlinear_Gz = parse(def.Gz, p);
    spec.temperature_lambda = p.at("lambda");
    spec.horizon_T = p.at("T");
    spec.action = {p.at("a_lo"), p.at("a_hi")};
    return spec;
}

std::vector<std::string> builtin_problem_names() {
    return {"consumption_exp", "consumption_sigmoid", "consumption_arctan", "lq_bounded", "tc_reduction"};
}

}  // namespace eqpi
