// SPDX-License-Identifier: Apache-2.0

#include "eqpi/pde1d.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace eqpi {

namespace {
constexpr double kPivotFloor = 1e-14;
}

Grid Grid::make(const GridSpec& spec, double horizon) {
    Grid g;
    g.x_min = spec.x_min;
    g.x_max = spec.x_max;
    g.T = horizon;
    g.nx = spec.n_x;
    g.nt = spec.n_t;
    g.buffer = spec.boundary_buffer;
    g.dx = spec.dx();
    g.dt = horizon / static_cast<double>(spec.n_t - 1);
    return g;
}

Field1D operator-(const Field1D& a, const Field1D& b) {
    Field1D out(a.grid());
    for (std::size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

// ---------------------------------------------------------------- SlabField

SlabField::SlabField(const Grid& g, std::size_t n_y, StorageMode mode) : grid_(g), n_y_(n_y), mode_(mode) {
    if (mode_ == StorageMode::full_tensor) {
        tau_offset_.resize(g.nt + 1);
        std::size_t rows = 0;
        for (std::size_t i = 0; i < g.nt; ++i) {
            tau_offset_[i] = rows;
            rows += g.nt - i;
        }
        tau_offset_[g.nt] = rows;
        v_.assign(rows * n_y_ * g.nx, 0.0);
    } else {
        v_.assign(2 * g.nt * n_y_ * g.nx, 0.0);
    }
}

std::size_t SlabField::offset(std::size_t i, std::size_t l, std::size_t j) const {
    const std::size_t slot = y_slot(j);
    if (mode_ == StorageMode::full_tensor) {
        assert(l >= i && l < grid_.nt);
        return ((tau_offset_[i] + (l - i)) * n_y_ + slot) * grid_.nx;
    }
    assert(l == i);
    return (i * n_y_ + slot) * grid_.nx;
}

std::size_t SlabField::next_offset(std::size_t i, std::size_t j) const {
    if (i + 1 >= grid_.nt) return offset(i, i, j);
    if (mode_ == StorageMode::full_tensor) return offset(i, i + 1, j);
    return ((grid_.nt + i) * n_y_ + y_slot(j)) * grid_.nx;
}

std::span<double> SlabField::diag(std::size_t i, std::size_t j) { return {v_.data() + offset(i, i, j), grid_.nx}; }
std::span<const double> SlabField::diag(std::size_t i, std::size_t j) const {
    return {v_.data() + offset(i, i, j), grid_.nx};
}
std::span<double> SlabField::next(std::size_t i, std::size_t j) { return {v_.data() + next_offset(i, j), grid_.nx}; }
std::span<const double> SlabField::next(std::size_t i, std::size_t j) const {
    return {v_.data() + next_offset(i, j), grid_.nx};
}
std::span<double> SlabField::at(std::size_t i, std::size_t l, std::size_t j) {
    if (!full()) throw std::logic_error("SlabField::at needs full_tensor storage");
    return {v_.data() + offset(i, l, j), grid_.nx};
}
std::span<const double> SlabField::at(std::size_t i, std::size_t l, std::size_t j) const {
    if (!full()) throw std::logic_error("SlabField::at needs full_tensor storage");
    return {v_.data() + offset(i, l, j), grid_.nx};
}

SlabField operator-(const SlabField& a, const SlabField& b) {
    if (a.data().size() != b.data().size() || a.mode() != b.mode() || a.n_y() != b.n_y()) {
        throw std::invalid_argument("slab shapes differ");
    }
    SlabField out = a;
    for (std::size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

// ---------------------------------------------------------------- linear algebra

std::vector<double> thomas_solve(std::span<const double> sub, std::span<const double> diag,
                                 std::span<const double> sup, std::span<const double> rhs) {
    const std::size_t n = diag.size();
    std::vector<double> cp(n), dp(n), x(n);
    double den = diag[0];
    if (std::fabs(den) < kPivotFloor) throw SingularSystem("tridiagonal pivot below 1e-14 at row 0");
    cp[0] = n > 1 ? sup[0] / den : 0.0;
    dp[0] = rhs[0] / den;
    for (std::size_t k = 1; k < n; ++k) {
        den = diag[k] - sub[k] * cp[k - 1];
        if (std::fabs(den) < kPivotFloor) {
            throw SingularSystem("tridiagonal pivot below 1e-14 at row " + std::to_string(k));
        }
        cp[k] = k + 1 < n ? sup[k] / den : 0.0;
        dp[k] = (rhs[k] - sub[k] * dp[k - 1]) / den;
    }
    x[n - 1] = dp[n - 1];
    for (std::size_t k = n - 1; k-- > 0;) x[k] = dp[k] - cp[k] * x[k + 1];
    return x;
}

// ---------------------------------------------------------------- BackwardOperator

BackwardOperator::BackwardOperator(const Grid& g, const Field1D& drift, const Field1D& diffusion_sq, double theta)
    : grid_(g), theta_(theta) {
    if (!(theta >= 0.5 && theta <= 1.0)) throw std::invalid_argument("theta must lie in [1/2, 1]");
    const std::size_t nt = g.nt;
    const std::size_t nx = g.nx;
    const double dx = g.dx;
    const double inv_dx2 = 1.0 / (dx * dx);
    a_.assign(nt * nx, 0.0);
    d_.assign(nt * nx, 0.0);
    c_.assign(nt * nx, 0.0);
    sub_.assign(nt * nx, 0.0);
    cprime_.assign(nt * nx, 0.0);
    inv_den_.assign(nt * nx, 0.0);

    for (std::size_t l = 0; l < nt; ++l) {
        double* a = a_.data() + l * nx;
        double* d = d_.data() + l * nx;
        double* c = c_.data() + l * nx;
        for (std::size_t k = 1; k + 1 < nx; ++k) {
            const double mu = drift(l, k);
            const double diff = 0.5 * diffusion_sq(l, k) * inv_dx2;
            const double up = std::max(mu, 0.0) / dx;
            const double down = std::max(-mu, 0.0) / dx;
            a[k] = diff + down;
            c[k] = diff + up;
            d[k] = -(a[k] + c[k]);
        }
        // linear extrapolation: no second difference, inward one-sided drift
        const double mu0 = drift(l, 0) / dx;
        d[0] = -mu0;
        c[0] = mu0;
        const double mun = drift(l, nx - 1) / dx;
        a[nx - 1] = -mun;
        d[nx - 1] = mun;

        if (l + 1 == nt) continue;  // no step ends at the terminal level
        const double s = theta_ * g.dt;
        double* sub = sub_.data() + l * nx;
        double* cp = cprime_.data() + l * nx;
        double* inv = inv_den_.data() + l * nx;
        double prev_cp = 0.0;
        for (std::size_t k = 0; k < nx; ++k) {
            sub[k] = -s * a[k];
            const double diag = 1.0 - s * d[k];
            const double sup = -s * c[k];
            const double den = diag - sub[k] * prev_cp;
            if (std::fabs(den) < kPivotFloor) {
                throw SingularSystem("tridiagonal pivot below 1e-14 at level " + std::to_string(l) + ", row " +
                                     std::to_string(k));
            }
            inv[k] = 1.0 / den;
            cp[k] = sup * inv[k];
            prev_cp = cp[k];
        }
    }
}

void BackwardOperator::apply(std::size_t l, std::span<const double> v, std::span<double> out) const {
    const std::size_t nx = grid_.nx;
    const double* a = a_.data() + l * nx;
    const double* d = d_.data() + l * nx;
    const double* c = c_.data() + l * nx;
    out[0] = d[0] * v[0] + c[0] * v[1];
    for (std::size_t k = 1; k + 1 < nx; ++k) out[k] = a[k] * v[k - 1] + d[k] * v[k] + c[k] * v[k + 1];
    out[nx - 1] = a[nx - 1] * v[nx - 2] + d[nx - 1] * v[nx - 1];
}

void BackwardOperator::step(std::size_t l, std::span<const double> v_next, std::span<const double> src_l,
                            std::span<const double> src_next, std::span<double> out) const {
    const std::size_t nx = grid_.nx;
    const double dt = grid_.dt;
    const double half_dt = 0.5 * dt;
    // right-hand side, built in out
    if (theta_ < 1.0) {
        apply(l + 1, v_next, out);
        const double w = (1.0 - theta_) * dt;
        for (std::size_t k = 0; k < nx; ++k) out[k] = v_next[k] + w * out[k];
    } else {
        std::copy(v_next.begin(), v_next.end(), out.begin());
    }
    if (!src_l.empty()) {
        for (std::size_t k = 0; k < nx; ++k) out[k] += half_dt * src_l[k];
    }
    if (!src_next.empty()) {
        for (std::size_t k = 0; k < nx; ++k) out[k] += half_dt * src_next[k];
    }
    const double* sub = sub_.data() + l * nx;
    const double* cp = cprime_.data() + l * nx;
    const double* inv = inv_den_.data() + l * nx;
    out[0] *= inv[0];
    for (std::size_t k = 1; k < nx; ++k) out[k] = (out[k] - sub[k] * out[k - 1]) * inv[k];
    for (std::size_t k = nx - 1; k-- > 0;) out[k] -= cp[k] * out[k + 1];
}

void BackwardOperator::residual(std::size_t l, std::span<const double> v_l, std::span<const double> v_next,
                                std::span<const double> src_l, std::span<const double> src_next,
                                std::span<double> out) const {
    const std::size_t nx = grid_.nx;
    std::vector<double> lv(nx), lnext(nx);
    apply(l, v_l, lv);
    if (theta_ < 1.0) apply(l + 1, v_next, lnext);
    for (std::size_t k = 0; k < nx; ++k) {
        double r = (v_next[k] - v_l[k]) / grid_.dt + theta_ * lv[k];
        if (theta_ < 1.0) r += (1.0 - theta_) * lnext[k];
        if (!src_l.empty()) r += 0.5 * src_l[k];
        if (!src_next.empty()) r += 0.5 * src_next[k];
        out[k] = r;
    }
}

Field1D solve_backward(const Field1D& drift, const Field1D& diffusion_sq, const Field1D* source,
                       std::span<const double> terminal, std::size_t t_start, double theta) {
    const Grid& g = drift.grid();
    if (terminal.size() != g.nx) throw std::invalid_argument("terminal length must equal n_x");
    if (t_start >= g.nt) throw std::invalid_argument("t_start out of range");
    const BackwardOperator op(g, drift, diffusion_sq, theta);
    Field1D v(g);
    std::copy(terminal.begin(), terminal.end(), v.row(g.nt - 1).begin());
    for (std::size_t l = g.nt - 1; l-- > t_start;) {
        const std::span<const double> src_l = source ? source->row(l) : std::span<const double>{};
        const std::span<const double> src_n = source ? source->row(l + 1) : std::span<const double>{};
        op.step(l, v.row(l + 1), src_l, src_n, v.row(l));
    }
    return v;
}

// ---------------------------------------------------------------- derivatives and norms

double derivative_at(std::span<const double> v, std::size_t k, double dx) {
    const std::size_t n = v.size();
    if (k >= 2 && k + 2 < n) {
        return (v[k - 2] - 8.0 * v[k - 1] + 8.0 * v[k + 1] - v[k + 2]) / (12.0 * dx);
    }
    if (k >= 1 && k + 1 < n) return (v[k + 1] - v[k - 1]) / (2.0 * dx);
    if (k == 0) return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
    return (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx);
}

Field1D compute_z(const ProblemSpec& spec, const SlabField& v1, const Field1D& v2) {
    const Grid& g = v2.grid();
    const bool g_active = !(spec.nonlinear_Gz.is_constant() && spec.nonlinear_Gz.eval(unbound()) == 0.0);
    Field1D z(g);
    for (std::size_t l = 0; l < g.nt; ++l) {
        const double t = g.t(l);
        const auto row2 = v2.row(l);
        for (std::size_t k = 0; k < g.nx; ++k) {
            double value = derivative_at(v1.diag(l, k), k, g.dx);
            if (g_active) value += spec.Gz(t, g.x(k), row2[k]) * derivative_at(row2, k, g.dx);
            z(l, k) = value;
        }
    }
    return z;
}

namespace {

/// Accumulates the x-parts of the norm for one row into p.
void row_x_parts(std::span<const double> v, const Grid& g, NormParts& p) {
    const double inv_2dx = 1.0 / (2.0 * g.dx);
    const double inv_dx2 = 1.0 / (g.dx * g.dx);
    for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) {
        p.sup = std::max(p.sup, std::fabs(v[k]));
        p.grad_x = std::max(p.grad_x, std::fabs((v[k + 1] - v[k - 1]) * inv_2dx));
        p.hess_x = std::max(p.hess_x, std::fabs((v[k + 1] - 2.0 * v[k] + v[k - 1]) * inv_dx2));
    }
}

void row_t_part(std::span<const double> v, std::span<const double> v_next, const Grid& g, NormParts& p) {
    for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) {
        p.grad_t = std::max(p.grad_t, std::fabs((v_next[k] - v[k]) / g.dt));
    }
}

NormParts max_parts(const NormParts& a, const NormParts& b) {
    return {std::max(a.sup, b.sup), std::max(a.grad_t, b.grad_t), std::max(a.grad_x, b.grad_x),
            std::max(a.hess_x, b.hess_x)};
}

}  // namespace

NormParts field_norm(const Field1D& f) {
    const Grid& g = f.grid();
    NormParts p;
    for (std::size_t l = 0; l < g.nt; ++l) {
        row_x_parts(f.row(l), g, p);
        if (l + 1 < g.nt) row_t_part(f.row(l), f.row(l + 1), g, p);
    }
    return p;
}

NormParts slab_norm(const SlabField& s) {
    const Grid& g = s.grid();
    NormParts total;
    const std::size_t j_lo = s.n_y() == 1 ? 0 : g.interior_begin();
    const std::size_t j_hi = s.n_y() == 1 ? 1 : g.interior_end();
    for (std::size_t i = 0; i < g.nt; ++i) {
        for (std::size_t j = j_lo; j < j_hi; ++j) {
            NormParts p;
            if (s.full()) {
                for (std::size_t l = i; l < g.nt; ++l) {
                    row_x_parts(s.at(i, l, j), g, p);
                    if (l + 1 < g.nt) row_t_part(s.at(i, l, j), s.at(i, l + 1, j), g, p);
                }
            } else {
                row_x_parts(s.diag(i, j), g, p);
                if (i + 1 < g.nt) {
                    row_x_parts(s.next(i, j), g, p);
                    row_t_part(s.diag(i, j), s.next(i, j), g, p);
                }
            }
            total = max_parts(total, p);
        }
    }
    return total;
}

}  // namespace eqpi
