// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "eqpi/parallel.hpp"
#include "eqpi/pde1d.hpp"

namespace eqpi {

namespace {
constexpr double kReferenceCacheBytes = 256.0 * 1024.0 * 1024.0;
}

ProblemLattice::ProblemLattice(const ProblemSpec& spec, const Grid& grid, std::size_t n_a)
    : spec_(&spec),
      grid_(grid),
      quad_(build_quadrature(spec.action.lo, spec.action.hi, n_a)),
      sigma_sq_(grid) {
    const std::size_t na = quad_.size();
    b_.resize(grid.nt * grid.nx * na);
    r_.resize(grid.nt * grid.nx * na);
    for (std::size_t l = 0; l < grid.nt; ++l) {
        const double t = grid.t(l);
        for (std::size_t k = 0; k < grid.nx; ++k) {
            const double x = grid.x(k);
            const double s = spec.sigma(t, x);
            sigma_sq_(l, k) = s * s;
            double* b = b_.data() + (l * grid.nx + k) * na;
            double* r = r_.data() + (l * grid.nx + k) * na;
            for (std::size_t m = 0; m < na; ++m) {
                b[m] = spec.b(t, x, quad_.nodes[m]);
                r[m] = spec.r(x, t, x, quad_.nodes[m]);
            }
        }
    }
    reward_reads_y_ = spec.reward_r.depends_on(Var::y);
    if (!reward_reads_y_) return;

    for (auto& term : additive_terms(spec.reward_r)) {
        if (!term.second.depends_on(Var::y)) continue;  // cancels in r(y) - r(x)
        (term.second.depends_on(Var::a) ? ya_terms_ : y_terms_).push_back(std::move(term));
    }
    const std::size_t nx = grid.nx;
    if (!y_terms_.empty()) {
        y_cache_.assign(grid.nt * nx * nx, 0.0);
        parallel_for(grid.nt, [&](std::size_t l) {
            Bindings b = unbound();
            b[static_cast<std::size_t>(Var::t)] = grid.t(l);
            for (std::size_t j = 0; j < nx; ++j) {
                b[static_cast<std::size_t>(Var::y)] = grid.x(j);
                for (std::size_t k = 0; k < nx; ++k) {
                    b[static_cast<std::size_t>(Var::x)] = grid.x(k);
                    double v = 0.0;
                    for (const auto& [sign, e] : y_terms_) v += sign * e.eval(b);
                    y_cache_[(l * nx + j) * nx + k] = v;
                }
            }
        });
    }
    const double bytes = static_cast<double>(grid.nt) * nx * nx * na * sizeof(double);
    if (!ya_terms_.empty() && bytes <= kReferenceCacheBytes) {
        std::vector<double> cache(grid.nt * nx * nx * na);
        parallel_for(grid.nt, [&](std::size_t l) {
            for (std::size_t j = 0; j < nx; ++j)
                for (std::size_t k = 0; k < nx; ++k)
                    for (std::size_t m = 0; m < na; ++m) cache[((l * nx + j) * nx + k) * na + m] = ya_value(l, j, k, m);
        });
        ya_cache_ = std::move(cache);
    }
}

double ProblemLattice::ya_value(std::size_t l, std::size_t j, std::size_t k, std::size_t m) const {
    const std::size_t na = quad_.size();
    if (!ya_cache_.empty()) return ya_cache_[((l * grid_.nx + j) * grid_.nx + k) * na + m];
    Bindings b = unbound();
    b[static_cast<std::size_t>(Var::y)] = grid_.x(j);
    b[static_cast<std::size_t>(Var::t)] = grid_.t(l);
    b[static_cast<std::size_t>(Var::x)] = grid_.x(k);
    b[static_cast<std::size_t>(Var::a)] = quad_.nodes[m];
    double v = 0.0;
    for (const auto& [sign, e] : ya_terms_) v += sign * e.eval(b);
    return v;
}

GibbsContext ProblemLattice::context(std::size_t l, std::size_t k) const {
    const auto b = drift(l, k);
    const auto r = reward(l, k);
    return GibbsContext(quad_, {b.begin(), b.end()}, {r.begin(), r.end()}, spec_->temperature_lambda);
}

void ProblemLattice::reward_gap(std::size_t l, std::size_t k, std::span<const double> density,
                                std::span<double> out) const {
    const std::size_t nx = grid_.nx;
    const std::size_t na = quad_.size();
    const auto& w = quad_.weights;
    std::vector<double> own;
    if (!ya_terms_.empty()) {
        own.resize(na);
        for (std::size_t m = 0; m < na; ++m) own[m] = ya_value(l, k, k, m);
    }
    for (std::size_t j = 0; j < nx; ++j) {
        double acc = 0.0;
        if (!ya_terms_.empty() && j != k) {
            for (std::size_t m = 0; m < na; ++m) acc += w[m] * density[m] * (ya_value(l, j, k, m) - own[m]);
        }
        if (!y_cache_.empty()) acc += y_cache_[(l * nx + j) * nx + k] - y_cache_[(l * nx + k) * nx + k];
        out[j] = acc;
    }
}

PolicySources policy_sources(const ProblemLattice& lattice, const Field1D& z, std::size_t n_y) {
    const Grid& g = lattice.grid();
    const std::size_t na = lattice.n_a();
    const auto& w = lattice.quadrature().weights;
    const double lambda = lattice.problem().temperature_lambda;

    PolicySources s;
    s.z = z;
    s.h = Field1D(g);
    s.hz = Field1D(g);
    s.base = Field1D(g);
    s.n_y = n_y;
    const bool with_gap = n_y > 1 && lattice.reward_reads_y();
    if (with_gap) s.gap.assign(g.nt * n_y * g.nx, 0.0);

    parallel_for(g.nt, [&](std::size_t l) {
        std::vector<double> dens(na);
        for (std::size_t k = 0; k < g.nx; ++k) {
            const auto b = lattice.drift(l, k);
            const auto r = lattice.reward(l, k);
            const double zz = z(l, k);
            const GibbsMoments m = gibbs_moments(w, b, r, lambda, zz, dens);
            s.h(l, k) = m.log_partition;
            s.hz(l, k) = m.mean_drift;
            s.base(l, k) = m.log_partition - m.mean_drift * zz;
            if (!with_gap) continue;
            std::vector<double> gap(n_y);
            lattice.reward_gap(l, k, dens, gap);
            for (std::size_t j = 0; j < n_y; ++j) s.gap[(l * n_y + j) * g.nx + k] = gap[j];
        }
    });
    return s;
}

std::size_t reference_slots(const ProblemSpec& spec, const Grid& grid, const FamilyOptions& opts) {
    return spec.reference_state_free() && !opts.force_general ? 1 : grid.nx;
}

FamilyResult evaluate_policy_family(const ProblemLattice& lattice, const PolicySources& src,
                                    const FamilyOptions& opts) {
    const ProblemSpec& spec = lattice.problem();
    const Grid& g = lattice.grid();
    const std::size_t nx = g.nx;
    const std::size_t nt = g.nt;
    const std::size_t n_y = reference_slots(spec, g, opts);
    if (src.n_y != n_y) throw std::invalid_argument("policy sources were built for a different reference count");

    const BackwardOperator op(g, src.hz, lattice.diffusion_sq(), opts.theta);

    FamilyResult out;
    {
        std::vector<double> terminal(nx);
        for (std::size_t k = 0; k < nx; ++k) terminal[k] = spec.h(g.x(k));
        out.v2 = Field1D(g);
        std::copy(terminal.begin(), terminal.end(), out.v2.row(nt - 1).begin());
        for (std::size_t l = nt - 1; l-- > 0;) op.step(l, out.v2.row(l + 1), {}, {}, out.v2.row(l));
    }

    std::vector<double> lag_delta(nt);
    for (std::size_t m = 0; m < nt; ++m) lag_delta[m] = spec.delta(g.t(m));

    out.v1 = SlabField(g, n_y, opts.storage);
    SlabField& slab = out.v1;
    const bool with_gap = !src.gap.empty();

    parallel_for(nt * n_y, [&](std::size_t task) {
        const std::size_t i = task / n_y;
        const std::size_t j = task % n_y;
        const double tau = g.t(i);
        const double y = g.x(j);

        std::vector<double> cur(nx), prev(nx), s_lo(nx), s_hi(nx);
        auto fill_source = [&](std::size_t l, std::vector<double>& dst) {
            const double d = lag_delta[l - i];
            const auto base = src.base.row(l);
            if (with_gap) {
                const double* gap = src.gap.data() + (l * n_y + j) * nx;
                for (std::size_t k = 0; k < nx; ++k) dst[k] = d * (base[k] + gap[k]);
            } else {
                for (std::size_t k = 0; k < nx; ++k) dst[k] = d * base[k];
            }
        };

        for (std::size_t k = 0; k < nx; ++k) cur[k] = spec.F(tau, y, g.x(k));
        auto keep = [&](std::size_t l, const std::vector<double>& row) {
            if (slab.full()) {
                std::copy(row.begin(), row.end(), slab.at(i, l, j).begin());
            } else if (l == i) {
                std::copy(row.begin(), row.end(), slab.diag(i, j).begin());
            } else if (l == i + 1) {
                std::copy(row.begin(), row.end(), slab.next(i, j).begin());
            }
        };
        keep(nt - 1, cur);
        if (i + 1 < nt) fill_source(nt - 1, s_hi);
        for (std::size_t l = nt - 1; l-- > i;) {
            fill_source(l, s_lo);
            std::swap(prev, cur);
            op.step(l, prev, s_lo, s_hi, cur);
            keep(l, cur);
            std::swap(s_lo, s_hi);
        }
    });
    return out;
}

}  // namespace eqpi
