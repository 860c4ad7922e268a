// SPDX-License-Identifier: Apache-2.0

#include "eqpi/pia.hpp"

#include <chrono>
#include <cmath>

namespace eqpi {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

Bindings bind4(double tau, double t, double y, double x) {
    Bindings b = unbound();
    b[static_cast<std::size_t>(Var::tau)] = tau;
    b[static_cast<std::size_t>(Var::t)] = t;
    b[static_cast<std::size_t>(Var::y)] = y;
    b[static_cast<std::size_t>(Var::x)] = x;
    return b;
}

/// Nearest lattice index to v when v is on the lattice, else OutOfDomain.
std::size_t lattice_index(double v, double lo, double step, std::size_t n, const char* what) {
    const double pos = (v - lo) / step;
    const double idx = std::round(pos);
    if (idx < 0.0 || idx > static_cast<double>(n - 1) || std::fabs(pos - idx) > 1e-8) {
        throw OutOfDomain(std::string(what) + " is not a lattice node");
    }
    return static_cast<std::size_t>(idx);
}

}  // namespace

std::string to_string(InitMode m) {
    switch (m) {
        case InitMode::zero: return "zero";
        case InitMode::terminal: return "terminal";
        case InitMode::expr: return "expr";
    }
    return "zero";
}

InitMode init_mode_from_string(const std::string& s) {
    if (s == "zero") return InitMode::zero;
    if (s == "terminal") return InitMode::terminal;
    if (s == "expr") return InitMode::expr;
    throw std::invalid_argument("unknown init mode '" + s + "'");
}

NotConverged::NotConverged(IterationReport report, IterateState state)
    : std::runtime_error("policy iteration did not converge: " + report.stop_reason),
      report_(std::move(report)),
      state_(std::move(state)) {}

Solver::Solver(ProblemSpec spec, const GridSpec& grid, PiaOptions opts)
    : spec_(std::move(spec)), grid_spec_(grid), opts_(opts) {
    if (!(opts_.tol > 0.0)) throw std::invalid_argument("tol must be > 0");
    validation_ = validate(spec_, grid_spec_);
    grid_ = Grid::make(grid_spec_, spec_.horizon_T);
    opts_.family.storage = grid_spec_.storage;
    lattice_ = std::make_unique<ProblemLattice>(spec_, grid_, grid_spec_.n_a);
}

FamilyOptions Solver::family_options(std::size_t n_y) const {
    FamilyOptions f = opts_.family;
    if (n_y > 1) f.force_general = true;
    return f;
}

IterateState Solver::initialize(const InitSpec& init) const {
    const Grid& g = grid_;
    Expr e1 = Expr::constant(0.0);
    Expr e2 = Expr::constant(0.0);
    if (init.mode == InitMode::expr) {
        e1 = parse(init.v1_expr);
        e2 = parse(init.v2_expr);
        if (!e1.variables().subset_of({Var::tau, Var::t, Var::y, Var::x})) {
            throw std::invalid_argument("V1 initializer may use only tau, t, y, x");
        }
        if (!e2.variables().subset_of({Var::t, Var::x})) {
            throw std::invalid_argument("V2 initializer may use only t, x");
        }
    }

    std::size_t n_y = reference_slots(spec_, g, opts_.family);
    if (init.mode == InitMode::expr && e1.depends_on(Var::y)) n_y = g.nx;

    IterateState s;
    s.n = 0;
    s.v1 = SlabField(g, n_y, grid_spec_.storage);
    s.v2 = Field1D(g);

    auto v1_value = [&](std::size_t i, std::size_t l, std::size_t j, std::size_t k) {
        switch (init.mode) {
            case InitMode::zero: return 0.0;
            case InitMode::terminal: return spec_.F(g.t(i), g.x(j), g.x(k));
            case InitMode::expr: return e1.eval(bind4(g.t(i), g.t(l), g.x(j), g.x(k)));
        }
        return 0.0;
    };
    for (std::size_t i = 0; i < g.nt; ++i) {
        for (std::size_t j = 0; j < n_y; ++j) {
            if (s.v1.full()) {
                for (std::size_t l = i; l < g.nt; ++l) {
                    auto row = s.v1.at(i, l, j);
                    for (std::size_t k = 0; k < g.nx; ++k) row[k] = v1_value(i, l, j, k);
                }
            } else {
                auto d = s.v1.diag(i, j);
                for (std::size_t k = 0; k < g.nx; ++k) d[k] = v1_value(i, i, j, k);
                if (i + 1 < g.nt) {
                    auto nx_row = s.v1.next(i, j);
                    for (std::size_t k = 0; k < g.nx; ++k) nx_row[k] = v1_value(i, i + 1, j, k);
                }
            }
        }
    }
    for (std::size_t l = 0; l < g.nt; ++l) {
        for (std::size_t k = 0; k < g.nx; ++k) {
            switch (init.mode) {
                case InitMode::zero: s.v2(l, k) = 0.0; break;
                case InitMode::terminal: s.v2(l, k) = spec_.h(g.x(k)); break;
                case InitMode::expr: {
                    Bindings b = unbound();
                    b[static_cast<std::size_t>(Var::t)] = g.t(l);
                    b[static_cast<std::size_t>(Var::x)] = g.x(k);
                    s.v2(l, k) = e2.eval(b);
                    break;
                }
            }
        }
    }
    s.policy = policy_sources(*lattice_, compute_z(spec_, s.v1, s.v2), n_y);
    return s;
}

IterateState Solver::step(const IterateState& state) const {
    const FamilyOptions f = family_options(state.v1.n_y());
    FamilyResult res = evaluate_policy_family(*lattice_, state.policy, f);
    IterateState next;
    next.n = state.n + 1;
    next.v1 = std::move(res.v1);
    next.v2 = std::move(res.v2);
    next.policy_z = state.policy.z;
    next.policy = policy_sources(*lattice_, compute_z(spec_, next.v1, next.v2), next.v1.n_y());
    return next;
}

IncrementRecord increment(const IterateState& next, const IterateState& prev) {
    const NormParts a = slab_norm(next.v1 - prev.v1);
    const NormParts b = field_norm(next.v2 - prev.v2);
    IncrementRecord r;
    r.n = next.n;
    r.sup = a.sup + b.sup;
    r.grad_sup = a.grad_t + a.grad_x + b.grad_t + b.grad_x;
    r.hess_sup = a.hess_x + b.hess_x;
    r.c2 = a.c2() + b.c2();
    r.value_c2 = slab_norm(next.v1).c2() + field_norm(next.v2).c2();
    return r;
}

RunResult Solver::run(const InitSpec& init, const Observer& observer) const {
    const auto t_start = Clock::now();
    IterationReport rep;
    rep.tol = opts_.tol;

    auto t0 = Clock::now();
    IterateState state = initialize(init);
    {
        IncrementRecord r0;
        r0.n = 0;
        r0.value_c2 = slab_norm(state.v1).c2() + field_norm(state.v2).c2();
        r0.wall_ms = elapsed_ms(t0);
        rep.records.push_back(r0);
    }
    if (observer) observer(state);

    std::map<std::size_t, double> d;
    while (state.n < opts_.max_iters) {
        t0 = Clock::now();
        IterateState next = step(state);
        IncrementRecord r = increment(next, state);
        r.wall_ms = elapsed_ms(t0);
        next.last_increment = r.c2;
        rep.records.push_back(r);
        d[r.n] = r.c2;
        state = std::move(next);
        if (observer) observer(state);
        if (!std::isfinite(r.c2)) {
            rep.stop_reason = "non-finite increment at n = " + std::to_string(r.n);
            break;
        }
        if (r.c2 < opts_.tol) {
            rep.converged = true;
            rep.stop_reason = "increment below tol at n = " + std::to_string(r.n);
            break;
        }
    }
    if (!rep.converged && rep.stop_reason.empty()) {
        rep.stop_reason = "max_iters = " + std::to_string(opts_.max_iters) + " reached";
    }

    const std::size_t n_last = state.n;
    try {
        rep.rate = fit_rate(d, opts_.rate_window_lo, n_last);
    } catch (const std::invalid_argument& e) {
        rep.rate_note = e.what();
    }
    rep.wall_ms = elapsed_ms(t_start);
    if (!rep.converged) throw NotConverged(std::move(rep), std::move(state));
    return {std::move(state), std::move(rep)};
}

double Solver::policy_density_at(const IterateState& state, double t, double x, double a) const {
    const Grid& g = grid_;
    const std::size_t l = lattice_index(t, 0.0, g.dt, g.nt, "t");
    const std::size_t k = lattice_index(x, g.x_min, g.dx, g.nx, "x");
    if (!(a >= spec_.action.lo && a <= spec_.action.hi)) throw OutOfDomain("a is outside the action interval");
    const double z = state.z()(l, k);
    const double h = state.h()(l, k);
    const double tt = g.t(l), xx = g.x(k);
    return std::exp((spec_.b(tt, xx, a) * z + spec_.r(xx, tt, xx, a) - h) / spec_.temperature_lambda);
}

Field1D objective(const ProblemSpec& spec, const IterateState& state) {
    const Grid& g = state.v2.grid();
    Field1D j(g);
    const bool g_zero = spec.nonlinear_G.is_constant() && spec.nonlinear_G.eval(unbound()) == 0.0;
    for (std::size_t l = 0; l < g.nt; ++l) {
        for (std::size_t k = 0; k < g.nx; ++k) {
            double v = state.v1.diag(l, k)[k];
            if (!g_zero) v += spec.G(g.t(l), g.x(k), state.v2(l, k));
            j(l, k) = v;
        }
    }
    return j;
}

}  // namespace eqpi
