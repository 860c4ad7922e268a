// SPDX-License-Identifier: Apache-2.0

#include "eqpi/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "eqpi/parallel.hpp"

namespace eqpi {

namespace {

bool is_zero_expr(const Expr& e) { return e.is_constant() && e.eval(unbound()) == 0.0; }

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Bilinear interpolation of a lattice field at (s, x), clamped to the lattice.
double interpolate(const Field1D& f, double s, double x) {
    const Grid& g = f.grid();
    const double ps = std::clamp(s / g.dt, 0.0, static_cast<double>(g.nt - 1));
    const double px = std::clamp((x - g.x_min) / g.dx, 0.0, static_cast<double>(g.nx - 1));
    const std::size_t l = std::min(static_cast<std::size_t>(ps), g.nt - 2);
    const std::size_t k = std::min(static_cast<std::size_t>(px), g.nx - 2);
    const double u = ps - static_cast<double>(l);
    const double v = px - static_cast<double>(k);
    return (1.0 - u) * ((1.0 - v) * f(l, k) + v * f(l, k + 1)) + u * ((1.0 - v) * f(l + 1, k) + v * f(l + 1, k + 1));
}

struct NodeAverages {
    double drift = 0.0;    // int b pi0
    double reward = 0.0;   // int r(x, t, x, .) pi0
    double entropy = 0.0;  // -int pi0 ln pi0
};

NodeAverages node_averages(const ProblemLattice& lat, std::size_t l, std::size_t k, std::span<const double> dens) {
    const auto& w = lat.quadrature().weights;
    const auto b = lat.drift(l, k);
    const auto r = lat.reward(l, k);
    NodeAverages out;
    for (std::size_t m = 0; m < w.size(); ++m) {
        const double p = dens[m];
        out.drift += w[m] * p * b[m];
        out.reward += w[m] * p * r[m];
        if (p > 0.0) out.entropy -= w[m] * p * std::log(p);
    }
    return out;
}

GibbsMoments moments_at(const ProblemLattice& lat, std::size_t l, std::size_t k, double z,
                        std::span<double> dens = {}) {
    return gibbs_moments(lat.quadrature().weights, lat.drift(l, k), lat.reward(l, k),
                         lat.problem().temperature_lambda, z, dens);
}

double derivative3(std::span<const double> v, std::size_t k, double dx) {
    if (k == 0 || k + 1 >= v.size()) return derivative_at(v, k, dx);
    return (v[k + 1] - v[k - 1]) / (2.0 * dx);
}

double stencil_derivative(std::span<const double> v, std::size_t k, double dx, Stencil s) {
    return s == Stencil::central3 ? derivative3(v, k, dx) : derivative_at(v, k, dx);
}

std::string format_shift(double v) {
    std::ostringstream os;
    os << (v >= 0.0 ? "+" : "") << v;
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------- Monte Carlo

void validate_mc(const McConfig& mc) {
    if (mc.n_paths < 100) throw std::invalid_argument("mc.n_paths must be >= 100");
    if (mc.n_steps < 10) throw std::invalid_argument("mc.n_steps must be >= 10");
    if (mc.antithetic && mc.n_paths % 2 != 0) throw std::invalid_argument("antithetic sampling needs an even n_paths");
}

McEstimate mc_value(const Solver& solver, const Field1D& policy_z, double tau, double t, double y, double x,
                    const McConfig& mc) {
    validate_mc(mc);
    const ProblemSpec& spec = solver.problem();
    const ProblemLattice& lat = solver.lattice();
    const Grid& g = solver.grid();
    if (policy_z.empty()) throw std::invalid_argument("mc_value needs a policy Z");
    if (!(tau >= 0.0 && tau <= t && t <= g.T)) throw OutOfDomain("need 0 <= tau <= t <= T");
    if (!(x >= g.x_min && x <= g.x_max && y >= g.x_min && y <= g.x_max)) throw OutOfDomain("x or y outside the grid");

    // Mean drift and the y-referenced running reward plus entropy bonus of the policy.
    const std::size_t na = lat.n_a();
    const auto& w = lat.quadrature().weights;
    const auto& nodes = lat.quadrature().nodes;
    const double lambda = spec.temperature_lambda;
    Field1D mu(g), gain(g);
    parallel_for(g.nt, [&](std::size_t l) {
        std::vector<double> dens(na);
        for (std::size_t k = 0; k < g.nx; ++k) {
            const GibbsMoments m = moments_at(lat, l, k, policy_z(l, k), dens);
            mu(l, k) = m.mean_drift;
            double ry = 0.0;
            for (std::size_t q = 0; q < na; ++q) ry += w[q] * dens[q] * spec.r(y, g.t(l), g.x(k), nodes[q]);
            gain(l, k) = ry + lambda * m.entropy;
        }
    });

    const bool sigma_const = spec.vol_sigma.is_constant();
    const double sigma0 = sigma_const ? spec.sigma(0.0, 0.0) : 0.0;
    const std::size_t steps = mc.n_steps;
    const double ds = (g.T - t) / static_cast<double>(steps);
    const double sqrt_ds = std::sqrt(ds);
    std::vector<double> lag(steps + 1);
    for (std::size_t q = 0; q <= steps; ++q) lag[q] = spec.delta(t + ds * static_cast<double>(q) - tau);

    const std::size_t group = mc.antithetic ? 2 : 1;
    const std::size_t n_groups = mc.n_paths / group;
    std::vector<double> y1(n_groups), y2(n_groups);
    std::vector<unsigned char> esc(n_groups);

    parallel_for(n_groups, [&](std::size_t p) {
        std::mt19937_64 rng(splitmix64(mc.rng_seed ^ splitmix64(p)));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> xi(steps);
        for (auto& v : xi) v = normal(rng);
        double s1 = 0.0, s2 = 0.0;
        unsigned escaped = 0;
        for (std::size_t a = 0; a < group; ++a) {
            const double sign = a == 0 ? 1.0 : -1.0;
            double X = x;
            double integral = 0.0;
            double f_prev = lag[0] * interpolate(gain, t, X);
            bool out = false;
            for (std::size_t q = 0; q < steps; ++q) {
                const double s = t + ds * static_cast<double>(q);
                const double sig = sigma_const ? sigma0 : spec.sigma(s, X);
                X += interpolate(mu, s, X) * ds + sig * sqrt_ds * sign * xi[q];
                if (X < g.x_min || X > g.x_max) {
                    out = true;
                    X = std::clamp(X, g.x_min, g.x_max);
                }
                const double f_next = lag[q + 1] * interpolate(gain, s + ds, X);
                integral += 0.5 * ds * (f_prev + f_next);
                f_prev = f_next;
            }
            s1 += integral + spec.F(tau, y, X);
            s2 += spec.h(X);
            if (out) ++escaped;
        }
        y1[p] = s1 / static_cast<double>(group);
        y2[p] = s2 / static_cast<double>(group);
        esc[p] = static_cast<unsigned char>(escaped);
    });

    McEstimate est;
    est.paths = n_groups * group;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t p = 0; p < n_groups; ++p) {
        m1 += y1[p];
        m2 += y2[p];
        est.escaped += esc[p];
    }
    const double n = static_cast<double>(n_groups);
    m1 /= n;
    m2 /= n;
    double q1 = 0.0, q2 = 0.0;
    for (std::size_t p = 0; p < n_groups; ++p) {
        q1 += (y1[p] - m1) * (y1[p] - m1);
        q2 += (y2[p] - m2) * (y2[p] - m2);
    }
    est.v1 = m1;
    est.v2 = m2;
    est.se1 = std::sqrt(q1 / (n - 1.0) / n);
    est.se2 = std::sqrt(q2 / (n - 1.0) / n);
    return est;
}

GridSpec halved_grid(const GridSpec& g) {
    if ((g.n_x - 1) % 2 != 0 || (g.n_t - 1) % 2 != 0) {
        throw std::invalid_argument("halving the lattice needs n_x - 1 and n_t - 1 even");
    }
    GridSpec c = g;
    c.n_x = (g.n_x - 1) / 2 + 1;
    c.n_t = (g.n_t - 1) / 2 + 1;
    c.boundary_buffer = std::max<std::size_t>(1, g.boundary_buffer / 2);
    return c;
}

std::vector<McPoint> mc_crosscheck(const Solver& solver, const IterateState& state, const IterateState& coarse,
                                   std::size_t points, const McConfig& mc) {
    const Grid& g = solver.grid();
    const Grid& cg = coarse.v2.grid();
    if (cg.nx != (g.nx - 1) / 2 + 1 || cg.nt != (g.nt - 1) / 2 + 1) {
        throw std::invalid_argument("coarse state is not on the halved lattice");
    }
    const std::size_t n_y = state.v1.n_y();
    std::mt19937_64 rng(mc.rng_seed);
    std::uniform_int_distribution<std::size_t> pick_k((g.interior_begin() + 1) / 2, (g.interior_end() - 1) / 2);
    std::uniform_int_distribution<std::size_t> pick_l(0, (g.nt - 3) / 2);

    std::vector<McPoint> out;
    for (std::size_t p = 0; p < points; ++p) {
        const std::size_t l = 2 * pick_l(rng);
        const std::size_t k = 2 * pick_k(rng);
        const std::size_t j = n_y == 1 ? k : 2 * pick_k(rng);
        McPoint pt;
        pt.tau = pt.t = g.t(l);
        pt.y = g.x(j);
        pt.x = g.x(k);
        pt.estimate = mc_value(solver, state.policy_z, pt.tau, pt.t, pt.y, pt.x, mc);
        pt.v1_pde = state.v1.diag(l, j)[k];
        pt.v2_pde = state.v2(l, k);
        pt.floor1 = std::fabs(pt.v1_pde - coarse.v1.diag(l / 2, j / 2)[k / 2]);
        pt.floor2 = std::fabs(pt.v2_pde - coarse.v2(l / 2, k / 2));
        const McEstimate& e = pt.estimate;
        pt.passed = std::fabs(pt.v1_pde - e.v1) <= 3.0 * e.se1 + pt.floor1 &&
                    std::fabs(pt.v2_pde - e.v2) <= 3.0 * e.se2 + pt.floor2 && e.reliable();
        out.push_back(pt);
    }
    return out;
}

// ---------------------------------------------------------------- equilibrium functional

std::string Deviation::name() const {
    switch (kind) {
        case DeviationKind::uniform: return "uniform";
        case DeviationKind::dirac_lo: return "dirac_lo";
        case DeviationKind::dirac_hi: return "dirac_hi";
        case DeviationKind::gibbs_shift: return "gibbs_shift(" + format_shift(shift) + ")";
        case DeviationKind::converged: return "converged";
    }
    return "uniform";
}

Deviation Deviation::parse(const std::string& text) {
    if (text == "uniform") return {DeviationKind::uniform, 0.0};
    if (text == "dirac_lo") return {DeviationKind::dirac_lo, 0.0};
    if (text == "dirac_hi") return {DeviationKind::dirac_hi, 0.0};
    if (text == "converged") return {DeviationKind::converged, 0.0};
    const std::string head = "gibbs_shift(";
    if (text.size() > head.size() + 1 && text.compare(0, head.size(), head) == 0 && text.back() == ')') {
        const std::string num = text.substr(head.size(), text.size() - head.size() - 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == num.size() && std::isfinite(v)) return {DeviationKind::gibbs_shift, v};
    }
    throw std::invalid_argument("unknown deviation '" + text + "'");
}

std::vector<Deviation> default_deviations() {
    return {{DeviationKind::uniform, 0.0},
            {DeviationKind::dirac_lo, 0.0},
            {DeviationKind::dirac_hi, 0.0},
            {DeviationKind::gibbs_shift, -0.5},
            {DeviationKind::gibbs_shift, 0.5}};
}

std::vector<double> deviation_density(const Solver& solver, const IterateState& state, const Deviation& d,
                                      std::size_t l, std::size_t k) {
    const ProblemLattice& lat = solver.lattice();
    const ActionQuadrature& quad = lat.quadrature();
    const std::size_t na = quad.size();
    std::vector<double> dens(na);
    switch (d.kind) {
        case DeviationKind::uniform:
            std::fill(dens.begin(), dens.end(), 1.0 / quad.volume());
            break;
        case DeviationKind::dirac_lo:
        case DeviationKind::dirac_hi: {
            // narrow Gaussian at the endpoint, renormalized on the nodes
            const double centre = d.kind == DeviationKind::dirac_lo ? quad.lo : quad.hi;
            const double width = quad.volume() / 100.0;
            double mass = 0.0;
            for (std::size_t m = 0; m < na; ++m) {
                const double u = (quad.nodes[m] - centre) / width;
                dens[m] = std::exp(-0.5 * u * u);
                mass += quad.weights[m] * dens[m];
            }
            for (auto& v : dens) v /= mass;
            break;
        }
        case DeviationKind::gibbs_shift:
        case DeviationKind::converged: {
            const double z = state.z()(l, k) + (d.kind == DeviationKind::gibbs_shift ? d.shift : 0.0);
            moments_at(lat, l, k, z, dens);
            break;
        }
    }
    return dens;
}

double equilibrium_residual(const Solver& solver, const IterateState& state, const Deviation& d, std::size_t l,
                            std::size_t k, Stencil stencil) {
    const ProblemSpec& spec = solver.problem();
    const ProblemLattice& lat = solver.lattice();
    const Grid& g = solver.grid();
    if (state.policy_z.empty()) throw std::invalid_argument("the state has not been produced by a policy evaluation");
    if (l >= g.nt || k >= g.nx) throw OutOfDomain("lattice index out of range");

    // I = (b(pi0) - H_z) Z_S + delta(0) (H_z Z - H) + r(pi0) + lambda Ent(pi0), with (H, H_z, Z)
    // those of the policy that produced the state and Z_S = V1_x + G_z V2_x on the given stencil.
    const double zp = state.policy_z(l, k);
    const GibbsMoments pm = moments_at(lat, l, k, zp);
    double zs = stencil_derivative(state.v1.diag(l, k), k, g.dx, stencil);
    if (!is_zero_expr(spec.nonlinear_Gz)) {
        zs += spec.Gz(g.t(l), g.x(k), state.v2(l, k)) * stencil_derivative(state.v2.row(l), k, g.dx, stencil);
    }
    const auto dens = deviation_density(solver, state, d, l, k);
    const NodeAverages avg = node_averages(lat, l, k, dens);
    return (avg.drift - pm.mean_drift) * zs + spec.delta(0.0) * (pm.mean_drift * zp - pm.log_partition) + avg.reward +
           spec.temperature_lambda * avg.entropy;
}

ResidualSweep equilibrium_sweep(const Solver& solver, const IterateState& state,
                                const std::vector<Deviation>& deviations, double tol) {
    if (!(state.last_increment <= tol)) {
        throw StateNotConverged("state increment " + std::to_string(state.last_increment) + " exceeds tol " +
                                std::to_string(tol));
    }
    const Grid& g = solver.grid();
    std::vector<Deviation> all = deviations;
    all.push_back({DeviationKind::converged, 0.0});
    const std::size_t nd = all.size();
    const std::size_t nl = g.nt - 1;

    struct Row {
        std::vector<double> max_i, floor;
        std::vector<std::size_t> k_at;
        double zero = 0.0;
    };
    std::vector<Row> rows(nl);
    parallel_for(nl, [&](std::size_t l) {
        Row& row = rows[l];
        row.max_i.assign(nd, -INFINITY);
        row.floor.assign(nd, 0.0);
        row.k_at.assign(nd, 0);
        for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) {
            for (std::size_t q = 0; q < nd; ++q) {
                const double i3 = equilibrium_residual(solver, state, all[q], l, k, Stencil::central3);
                const double i5 = equilibrium_residual(solver, state, all[q], l, k, Stencil::central5);
                if (i3 > row.max_i[q]) {
                    row.max_i[q] = i3;
                    row.k_at[q] = k;
                }
                row.floor[q] = std::max(row.floor[q], std::fabs(i3 - i5));
                if (all[q].kind == DeviationKind::converged) row.zero = std::max(row.zero, std::fabs(i3));
            }
        }
    });

    ResidualSweep out;
    out.points = nl * (g.interior_end() - g.interior_begin());
    out.max_over_deviations = -INFINITY;
    for (std::size_t q = 0; q < nd; ++q) {
        DeviationSummary s;
        s.name = all[q].name();
        s.max_value = -INFINITY;
        for (std::size_t l = 0; l < nl; ++l) {
            if (rows[l].max_i[q] > s.max_value) {
                s.max_value = rows[l].max_i[q];
                s.l_at = l;
                s.k_at = rows[l].k_at[q];
            }
            out.stencil_floor = std::max(out.stencil_floor, rows[l].floor[q]);
        }
        if (all[q].kind != DeviationKind::converged) {
            out.max_over_deviations = std::max(out.max_over_deviations, s.max_value);
        }
        out.deviations.push_back(std::move(s));
    }
    for (const auto& r : rows) out.converged_abs_max = std::max(out.converged_abs_max, r.zero);
    out.grid_floor = std::max(out.stencil_floor, 10.0 * tol);
    out.sign_ok = out.max_over_deviations <= out.grid_floor;
    out.zero_ok = out.converged_abs_max <= out.grid_floor / 10.0;
    return out;
}

// ---------------------------------------------------------------- EEHJB residual

EehjbResidual eehjb_residual(const Solver& solver, const IterateState& state, const Field1D* z_override) {
    const ProblemSpec& spec = solver.problem();
    const Grid& g = solver.grid();
    const std::size_t n_y = state.v1.n_y();
    const PolicySources src =
        z_override ? policy_sources(solver.lattice(), *z_override, n_y) : state.policy;
    const FamilyOptions fam = solver.family_options(n_y);
    const BackwardOperator op(g, src.hz, solver.lattice().diffusion_sq(), fam.theta);

    auto interior_sup = [&](const std::vector<double>& r) {
        double m = 0.0;
        for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) m = std::max(m, std::fabs(r[k]));
        return m;
    };

    EehjbResidual out;
    std::vector<double> res(g.nx);
    for (std::size_t l = 0; l + 1 < g.nt; ++l) {
        op.residual(l, state.v2.row(l), state.v2.row(l + 1), {}, {}, res);
        out.v2 = std::max(out.v2, interior_sup(res));
    }

    const double d0 = spec.delta(0.0);
    const double d1 = spec.delta(g.dt);
    const std::size_t j_lo = n_y == 1 ? 0 : g.interior_begin();
    const std::size_t j_hi = n_y == 1 ? 1 : g.interior_end();
    std::vector<double> s_lo(g.nx), s_hi(g.nx);
    for (std::size_t i = 0; i + 1 < g.nt; ++i) {
        for (std::size_t j = j_lo; j < j_hi; ++j) {
            for (std::size_t k = 0; k < g.nx; ++k) {
                double lo = src.base(i, k), hi = src.base(i + 1, k);
                if (!src.gap.empty()) {
                    lo += src.gap[(i * n_y + j) * g.nx + k];
                    hi += src.gap[((i + 1) * n_y + j) * g.nx + k];
                }
                s_lo[k] = d0 * lo;
                s_hi[k] = d1 * hi;
            }
            op.residual(i, state.v1.diag(i, j), state.v1.next(i, j), s_lo, s_hi, res);
            out.v1_diag = std::max(out.v1_diag, interior_sup(res));
        }
    }
    return out;
}

// ---------------------------------------------------------------- time-consistent reduction

bool SuiteReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const SuiteCheck& c) { return c.passed; });
}

const SuiteCheck* SuiteReport::find(const std::string& n) const {
    for (const auto& c : checks)
        if (c.name == n) return &c;
    return nullptr;
}

Field1D solve_direct_hjb(const ProblemLattice& lat, double rho) {
    const ProblemSpec& spec = lat.problem();
    const Grid& g = lat.grid();
    const std::size_t nx = g.nx;
    const Field1D& s2 = lat.diffusion_sq();
    const double inv_dx = 1.0 / g.dx;
    const double inv_dx2 = inv_dx * inv_dx;

    Field1D w(g);
    for (std::size_t k = 0; k < nx; ++k) w(g.nt - 1, k) = spec.F(g.T, g.x(k), g.x(k));

    std::vector<double> sub(nx), dia(nx), sup(nx), rhs(nx), cur(nx), mu(nx), gain(nx);
    for (std::size_t l = g.nt - 1; l-- > 0;) {
        const auto next = w.row(l + 1);
        std::copy(next.begin(), next.end(), cur.begin());
        for (int it = 0; it < 100; ++it) {
            for (std::size_t k = 0; k < nx; ++k) {
                const double z = derivative_at(cur, k, g.dx);
                const GibbsMoments m = moments_at(lat, l, k, z);
                mu[k] = m.mean_drift;
                gain[k] = m.log_partition - m.mean_drift * z;
            }
            // (1/dt + rho) W - L W = W_next / dt + gain, with the solver's boundary closure
            for (std::size_t k = 0; k < nx; ++k) {
                double a = 0.0, c = 0.0, d = 0.0;
                if (k == 0) {
                    d = -mu[k] * inv_dx;
                    c = mu[k] * inv_dx;
                } else if (k + 1 == nx) {
                    a = -mu[k] * inv_dx;
                    d = mu[k] * inv_dx;
                } else {
                    const double diff = 0.5 * s2(l, k) * inv_dx2;
                    a = diff + std::max(-mu[k], 0.0) * inv_dx;
                    c = diff + std::max(mu[k], 0.0) * inv_dx;
                    d = -(a + c);
                }
                sub[k] = -a;
                sup[k] = -c;
                dia[k] = 1.0 / g.dt + rho - d;
                rhs[k] = next[k] / g.dt + gain[k];
            }
            const auto sol = thomas_solve(sub, dia, sup, rhs);
            double change = 0.0;
            for (std::size_t k = 0; k < nx; ++k) change = std::max(change, std::fabs(sol[k] - cur[k]));
            cur = sol;
            if (change < 1e-13) break;
        }
        std::copy(cur.begin(), cur.end(), w.row(l).begin());
    }
    return w;
}

SuiteReport tc_reduction_suite(const ProblemSpec& spec, const GridSpec& grid_spec, const TcOptions& opts) {
    if (grid_spec.storage != StorageMode::full_tensor) {
        throw std::invalid_argument("the reduction suite needs full_tensor storage");
    }
    SuiteReport rep;
    rep.name = "tc_reduction";

    // preconditions
    const double T = spec.horizon_T;
    const double rho = -std::log(spec.delta(T)) / T + 0.0;
    {
        SuiteCheck c;
        c.name = "preconditions";
        c.threshold = 1e-12;
        double gap = 0.0;
        for (int q = 0; q <= 32; ++q) {
            const double s = T * q / 32.0;
            gap = std::max(gap, std::fabs(spec.delta(s) - std::exp(-rho * s)));
        }
        for (int q = 0; q <= 8; ++q) {
            const double tau = T * q / 8.0;
            for (double x : {-2.0, 0.0, 1.5}) {
                gap = std::max(gap, std::fabs(spec.F(tau, 0.0, x) - std::exp(-rho * (T - tau)) * spec.F(T, 0.0, x)));
            }
        }
        c.measured = gap;
        std::vector<std::string> broken;
        if (!(gap <= c.threshold)) broken.push_back("discount or terminal not exponential");
        if (spec.reward_r.depends_on(Var::y)) broken.push_back("r reads y");
        if (spec.terminal_F.depends_on(Var::y)) broken.push_back("F reads y");
        if (!is_zero_expr(spec.nonlinear_G)) broken.push_back("G is not zero");
        c.passed = broken.empty();
        for (const auto& b : broken) c.detail += (c.detail.empty() ? "" : "; ") + b;
        if (c.passed) c.detail = "rho = " + std::to_string(rho);
        rep.checks.push_back(c);
    }

    PiaOptions po;
    po.tol = opts.pia_tol;
    po.max_iters = opts.max_iters;
    const Solver solver(spec, grid_spec, po);
    const Grid& g = solver.grid();

    // monotone improvement, watched through the observer
    double worst_drop = 0.0;
    std::size_t worst_n = 0;
    Field1D j_prev;
    auto observer = [&](const IterateState& s) {
        if (s.n == 0) return;
        Field1D j = objective(spec, s);
        if (!j_prev.empty()) {
            for (std::size_t l = 0; l < g.nt; ++l)
                for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) {
                    const double drop = j_prev(l, k) - j(l, k);
                    if (drop > worst_drop) {
                        worst_drop = drop;
                        worst_n = s.n;
                    }
                }
        }
        j_prev = std::move(j);
    };
    IterateState state;
    bool converged = true;
    std::string stop;
    try {
        RunResult rr = solver.run({}, observer);
        state = std::move(rr.state);
        stop = rr.report.stop_reason;
    } catch (const NotConverged& e) {
        state = e.state();
        converged = false;
        stop = e.report().stop_reason;
    }

    {
        SuiteCheck c;
        c.name = "factorization";
        c.threshold = opts.factorization_tol;
        const std::size_t n_y = state.v1.n_y();
        double defect = 0.0;
        for (std::size_t i = 0; i < g.nt; ++i)
            for (std::size_t l = i; l < g.nt; ++l) {
                const double f = std::exp(-rho * (g.t(l) - g.t(i)));
                for (std::size_t j = 0; j < n_y; ++j) {
                    const auto a = state.v1.at(i, l, j);
                    const auto b = state.v1.at(l, l, j);
                    for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) {
                        defect = std::max(defect, std::fabs(a[k] - f * b[k]));
                    }
                }
            }
        c.measured = defect;
        c.passed = defect <= c.threshold;
        rep.checks.push_back(c);
    }
    {
        SuiteCheck c;
        c.name = "improvement";
        c.threshold = opts.improvement_slack;
        c.measured = worst_drop;
        c.passed = worst_drop <= c.threshold;
        if (worst_drop > 0.0) c.detail = "largest drop at n = " + std::to_string(worst_n);
        rep.checks.push_back(c);
    }
    {
        SuiteCheck c;
        c.name = "direct_hjb";
        c.threshold = opts.hjb_tol;
        const Field1D w = solve_direct_hjb(solver.lattice(), rho);
        const Field1D j = objective(spec, state);
        double gap = 0.0;
        for (std::size_t l = 0; l < g.nt; ++l)
            for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k)
                gap = std::max(gap, std::fabs(j(l, k) - w(l, k)));
        c.measured = gap;
        c.passed = gap <= c.threshold;
        rep.checks.push_back(c);
    }
    {
        SuiteCheck c;
        c.name = "converged";
        c.passed = converged;
        c.measured = static_cast<double>(state.n);
        c.detail = stop;
        rep.checks.push_back(c);
    }
    return rep;
}

// ---------------------------------------------------------------- boundary sensitivity

BoundarySensitivity boundary_sensitivity(const ProblemSpec& spec, const GridSpec& grid, const PiaOptions& opts,
                                         const Field1D& j_reference) {
    const double dx = grid.dx();
    const auto extra = static_cast<std::size_t>(std::ceil(0.125 * (grid.x_max - grid.x_min) / dx - 1e-9));
    GridSpec wide = grid;
    wide.x_min = grid.x_min - dx * static_cast<double>(extra);
    wide.x_max = grid.x_max + dx * static_cast<double>(extra);
    wide.n_x = grid.n_x + 2 * extra;

    const Solver solver(spec, wide, opts);
    IterateState state;
    try {
        state = solver.run({}).state;
    } catch (const NotConverged& e) {
        state = e.state();
    }
    const Field1D j = objective(spec, state);
    const Grid& g0 = j_reference.grid();

    BoundarySensitivity out;
    out.widened_x_min = wide.x_min;
    out.widened_x_max = wide.x_max;
    out.widened_n_x = wide.n_x;
    for (std::size_t l = 0; l < g0.nt; ++l)
        for (std::size_t k = g0.interior_begin(); k < g0.interior_end(); ++k)
            out.max_change = std::max(out.max_change, std::fabs(j(l, k + extra) - j_reference(l, k)));
    return out;
}

// ---------------------------------------------------------------- perturbation quotient

std::vector<double> perturbation_quotients(const Solver& solver, const IterateState& state, const Deviation& d,
                                           std::size_t l0, std::size_t k0, const std::vector<std::size_t>& steps) {
    const ProblemSpec& spec = solver.problem();
    const ProblemLattice& lat = solver.lattice();
    const Grid& g = solver.grid();
    const auto& nodes = lat.quadrature().nodes;
    const auto& w = lat.quadrature().weights;
    const double lambda = spec.temperature_lambda;
    const double y = g.x(k0);
    const double tau = g.t(l0);
    if (l0 >= g.nt || k0 >= g.nx) throw OutOfDomain("lattice index out of range");

    // Policy drift and y-referenced gain of pi* = Gamma(Z) and of the deviation.
    Field1D mu_star(g), gain_star(g), mu_dev(g), gain_dev(g);
    for (std::size_t l = l0; l < g.nt; ++l) {
        std::vector<double> dens(lat.n_a());
        for (std::size_t k = 0; k < g.nx; ++k) {
            const GibbsMoments m = moments_at(lat, l, k, state.z()(l, k), dens);
            double ry = 0.0;
            for (std::size_t q = 0; q < dens.size(); ++q) ry += w[q] * dens[q] * spec.r(y, g.t(l), g.x(k), nodes[q]);
            mu_star(l, k) = m.mean_drift;
            gain_star(l, k) = ry + lambda * m.entropy;

            const auto dev = deviation_density(solver, state, d, l, k);
            const NodeAverages avg = node_averages(lat, l, k, dev);
            double ry_dev = 0.0;
            for (std::size_t q = 0; q < dev.size(); ++q) ry_dev += w[q] * dev[q] * spec.r(y, g.t(l), g.x(k), nodes[q]);
            mu_dev(l, k) = avg.drift;
            gain_dev(l, k) = ry_dev + lambda * avg.entropy;
        }
    }

    const double theta = solver.family_options(state.v1.n_y()).theta;
    std::vector<double> f_term(g.nx), h_term(g.nx);
    for (std::size_t k = 0; k < g.nx; ++k) {
        f_term[k] = spec.F(tau, y, g.x(k));
        h_term[k] = spec.h(g.x(k));
    }
    auto value = [&](std::size_t m) {
        Field1D mu(g), src(g);
        for (std::size_t l = l0; l < g.nt; ++l) {
            const bool dev = l < l0 + m;
            const double lag = spec.delta(g.t(l) - tau);
            for (std::size_t k = 0; k < g.nx; ++k) {
                mu(l, k) = dev ? mu_dev(l, k) : mu_star(l, k);
                src(l, k) = lag * (dev ? gain_dev(l, k) : gain_star(l, k));
            }
        }
        const Field1D v1 = solve_backward(mu, lat.diffusion_sq(), &src, f_term, l0, theta);
        const Field1D v2 = solve_backward(mu, lat.diffusion_sq(), nullptr, h_term, l0, theta);
        return v1(l0, k0) + spec.G(tau, y, v2(l0, k0));
    };

    const double base = value(0);
    std::vector<double> out;
    for (std::size_t m : steps) {
        if (m == 0 || l0 + m >= g.nt) throw OutOfDomain("perturbation window leaves the horizon");
        out.push_back((value(m) - base) / (g.dt * static_cast<double>(m)));
    }
    return out;
}

}  // namespace eqpi
