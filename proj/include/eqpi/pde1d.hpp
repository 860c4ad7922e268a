// SPDX-License-Identifier: Apache-2.0
//
// Backward solver for linear parabolic equations on a truncated line,
//
//   V_t + 1/2 sigma^2 V_xx + mu V_x + f = 0,   V(T, .) = g,
//
// and the policy-evaluation family built on it. Time stepping is the
// theta-scheme (implicit Euler by default), diffusion uses central second
// differences, drift is upwinded and the two boundary rows are closed by
// linear extrapolation (zero second difference).

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "eqpi/gibbs.hpp"
#include "eqpi/model.hpp"

namespace eqpi {

class SingularSystem : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MemoryCap : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniform (t, x) lattice. The reference grids (tau, y) coincide with (t, x).
struct Grid {
    double x_min = -6.0;
    double x_max = 6.0;
    double T = 1.0;
    std::size_t nx = 129;
    std::size_t nt = 65;
    std::size_t buffer = 16;
    double dx = 0.0;
    double dt = 0.0;

    static Grid make(const GridSpec& spec, double horizon);

    double x(std::size_t k) const { return x_min + dx * static_cast<double>(k); }
    double t(std::size_t l) const { return T * static_cast<double>(l) / static_cast<double>(nt - 1); }
    std::size_t interior_begin() const { return buffer; }
    std::size_t interior_end() const { return nx - buffer; }
    bool is_interior(std::size_t k) const { return k >= buffer && k < nx - buffer; }
};

/// Values on the (t, x) lattice, row-major in t.
class Field1D {
public:
    Field1D() = default;
    explicit Field1D(const Grid& g, double fill = 0.0) : grid_(g), v_(g.nt * g.nx, fill) {}

    const Grid& grid() const { return grid_; }
    double& operator()(std::size_t l, std::size_t k) { return v_[l * grid_.nx + k]; }
    double operator()(std::size_t l, std::size_t k) const { return v_[l * grid_.nx + k]; }
    std::span<double> row(std::size_t l) { return {v_.data() + l * grid_.nx, grid_.nx}; }
    std::span<const double> row(std::size_t l) const { return {v_.data() + l * grid_.nx, grid_.nx}; }
    std::vector<double>& data() { return v_; }
    const std::vector<double>& data() const { return v_; }
    bool empty() const { return v_.empty(); }

private:
    Grid grid_;
    std::vector<double> v_;
};

Field1D operator-(const Field1D& a, const Field1D& b);

/// V1(tau_i, t, y_j, x_k). Diagonal mode keeps the rows t = tau_i and
/// t = tau_{i+1}; full mode keeps every t >= tau_i. With n_y == 1 the same
/// values serve every reference point y.
class SlabField {
public:
    SlabField() = default;
    SlabField(const Grid& g, std::size_t n_y, StorageMode mode);

    const Grid& grid() const { return grid_; }
    std::size_t n_y() const { return n_y_; }
    StorageMode mode() const { return mode_; }
    bool full() const { return mode_ == StorageMode::full_tensor; }
    /// Slab index for the reference node j of the x-grid.
    std::size_t y_slot(std::size_t j) const { return n_y_ == 1 ? 0 : j; }

    /// Row t = tau_i.
    std::span<double> diag(std::size_t i, std::size_t j);
    std::span<const double> diag(std::size_t i, std::size_t j) const;
    /// Row t = tau_{i+1}; for i = nt - 1 this is the diagonal row itself.
    std::span<double> next(std::size_t i, std::size_t j);
    std::span<const double> next(std::size_t i, std::size_t j) const;
    /// Row t = t_l, l >= i. Full mode only.
    std::span<double> at(std::size_t i, std::size_t l, std::size_t j);
    std::span<const double> at(std::size_t i, std::size_t l, std::size_t j) const;

    std::vector<double>& data() { return v_; }
    const std::vector<double>& data() const { return v_; }

private:
    std::size_t offset(std::size_t i, std::size_t l, std::size_t j) const;
    std::size_t next_offset(std::size_t i, std::size_t j) const;

    Grid grid_;
    std::size_t n_y_ = 1;
    StorageMode mode_ = StorageMode::diagonal_slab;
    std::vector<double> v_;
    std::vector<std::size_t> tau_offset_;  // full mode: first row of each tau block
};

SlabField operator-(const SlabField& a, const SlabField& b);

/// Solves sub[k] x[k-1] + diag[k] x[k] + sup[k] x[k+1] = rhs[k].
std::vector<double> thomas_solve(std::span<const double> sub, std::span<const double> diag,
                                 std::span<const double> sup, std::span<const double> rhs);

/// Spatial operator L V = 1/2 sigma^2 V_xx + mu V_x at every level, with the
/// factored step matrices (I - theta dt L_l).
class BackwardOperator {
public:
    BackwardOperator(const Grid& g, const Field1D& drift, const Field1D& diffusion_sq, double theta = 1.0);

    const Grid& grid() const { return grid_; }
    double theta() const { return theta_; }

    /// Level-l values from level l+1. Sources enter by the trapezoid rule
    /// 1/2 dt (src_l + src_next); an empty span means zero.
    void step(std::size_t l, std::span<const double> v_next, std::span<const double> src_l,
              std::span<const double> src_next, std::span<double> out) const;

    /// Defect of the discrete equation between levels l and l+1.
    void residual(std::size_t l, std::span<const double> v_l, std::span<const double> v_next,
                  std::span<const double> src_l, std::span<const double> src_next, std::span<double> out) const;

    /// out = L_l v.
    void apply(std::size_t l, std::span<const double> v, std::span<double> out) const;

private:
    Grid grid_;
    double theta_;
    // L_l = tridiag(a, d, c); factors of I - theta dt L_l
    std::vector<double> a_, d_, c_;
    std::vector<double> sub_, cprime_, inv_den_;
};

/// Solves from T back to level t_start. Levels below t_start are left zero.
Field1D solve_backward(const Field1D& drift, const Field1D& diffusion_sq, const Field1D* source,
                       std::span<const double> terminal, std::size_t t_start = 0, double theta = 1.0);

/// Coefficient values at every (t_l, x_k, a_m) node.
class ProblemLattice {
public:
    ProblemLattice(const ProblemSpec& spec, const Grid& grid, std::size_t n_a);

    const ProblemSpec& problem() const { return *spec_; }
    const Grid& grid() const { return grid_; }
    const ActionQuadrature& quadrature() const { return quad_; }
    std::size_t n_a() const { return quad_.size(); }

    std::span<const double> drift(std::size_t l, std::size_t k) const { return {b_.data() + (l * grid_.nx + k) * n_a(), n_a()}; }
    /// r(x_k, t_l, x_k, a_m)
    std::span<const double> reward(std::size_t l, std::size_t k) const { return {r_.data() + (l * grid_.nx + k) * n_a(), n_a()}; }
    const Field1D& diffusion_sq() const { return sigma_sq_; }
    GibbsContext context(std::size_t l, std::size_t k) const;

    bool reward_reads_y() const { return reward_reads_y_; }
    /// out[j] = int (r(y_j, t_l, x_k, a) - r(x_k, t_l, x_k, a)) Gamma(a) da for
    /// every reference node j, given Gamma at the quadrature nodes.
    void reward_gap(std::size_t l, std::size_t k, std::span<const double> density, std::span<double> out) const;

private:
    const ProblemSpec* spec_;
    Grid grid_;
    ActionQuadrature quad_;
    std::vector<double> b_, r_;
    Field1D sigma_sq_;
    bool reward_reads_y_ = false;
    // y-reading additive terms of r, split by whether they also read a
    std::vector<std::pair<double, Expr>> ya_terms_, y_terms_;
    std::vector<double> ya_cache_;  // (l, j, k, m), when it fits in 256 MB
    std::vector<double> y_cache_;   // (l, j, k)
    double ya_value(std::size_t l, std::size_t j, std::size_t k, std::size_t m) const;
};

/// Policy-dependent coefficients of the evaluation equations for one Z field.
struct PolicySources {
    Field1D z;       // the Z that defines the policy
    Field1D h;       // H(t, x, Z)
    Field1D hz;      // H_z(t, x, Z) = mean drift
    Field1D base;    // H - H_z Z
    std::size_t n_y = 1;
    /// int (r(y_j, .) - r(x, .)) Gamma da, indexed ((l * n_y + j) * nx + k);
    /// empty when r does not read y.
    std::vector<double> gap;
};

PolicySources policy_sources(const ProblemLattice& lattice, const Field1D& z, std::size_t n_y);

struct FamilyOptions {
    StorageMode storage = StorageMode::diagonal_slab;
    double theta = 1.0;
    /// Solve one V1 equation per reference node even when r and F ignore y.
    bool force_general = false;
};

/// Number of reference slots the V1 family needs for this problem.
std::size_t reference_slots(const ProblemSpec& spec, const Grid& grid, const FamilyOptions& opts);

struct FamilyResult {
    SlabField v1;
    Field1D v2;
};

/// Policy evaluation: V2 with drift H_z, no source and terminal h; one V1
/// solve per (tau_i, y_j) with source delta(t - tau_i) [base + gap_j] and
/// terminal F(tau_i, y_j, .), integrated back to level i.
FamilyResult evaluate_policy_family(const ProblemLattice& lattice, const PolicySources& src,
                                    const FamilyOptions& opts = {});

/// d/dx at node k: 4th-order central inside, 3-point central next to the
/// ends, one-sided 2nd order at the ends.
double derivative_at(std::span<const double> row, std::size_t k, double dx);

/// Z(t_l, x_k) = V1_x(t_l, t_l, x_k, x_k) + G_z(t_l, x_k, V2) V2_x.
Field1D compute_z(const ProblemSpec& spec, const SlabField& v1, const Field1D& v2);

/// Discrete C2-type norm pieces over interior x nodes.
struct NormParts {
    double sup = 0.0;
    double grad_t = 0.0;
    double grad_x = 0.0;
    double hess_x = 0.0;
    double c2() const { return sup + grad_t + grad_x + hess_x; }
};

NormParts field_norm(const Field1D& f);
/// Maximum over (tau, interior y) slices of the per-slice norm.
NormParts slab_norm(const SlabField& s);

}  // namespace eqpi
