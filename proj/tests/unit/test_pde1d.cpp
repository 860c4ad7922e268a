#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <random>

#include "eqpi/parallel.hpp"
#include "eqpi/pde1d.hpp"
#include "helpers.hpp"

using namespace eqpi;
using eqpi::testing::make_spec;
using eqpi::testing::small_grid;
using eqpi::testing::SpecText;

namespace {

Grid grid_of(std::size_t nx, std::size_t nt, double x_min, double x_max, double T) {
    return Grid::make(small_grid(nx, nt, x_min, x_max), T);
}

double interior_max_error(const Field1D& v, std::size_t l, const std::function<double(double)>& exact) {
    const Grid& g = v.grid();
    double e = 0.0;
    for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) e = std::max(e, std::fabs(v(l, k) - exact(g.x(k))));
    return e;
}

}  // namespace

TEST_CASE("constant terminal is preserved") {
    const Grid g = grid_of(65, 33, -3.0, 3.0, 1.0);
    Field1D mu(g), s2(g, 0.7);
    for (std::size_t l = 0; l < g.nt; ++l)
        for (std::size_t k = 0; k < g.nx; ++k) mu(l, k) = std::sin(3.0 * g.x(k) + g.t(l)) * 2.0;
    const std::vector<double> term(g.nx, 3.0);
    for (double theta : {1.0, 0.5}) {
        const Field1D v = solve_backward(mu, s2, nullptr, term, 0, theta);
        for (double x : v.data()) CHECK(std::fabs(x - 3.0) <= 1e-12);
    }
}

TEST_CASE("linear terminal is exact") {
    const Grid g = grid_of(65, 33, -3.0, 3.0, 1.0);
    for (double m : {0.7, -1.3}) {
        Field1D mu(g, m), s2(g, 1.0);
        std::vector<double> term(g.nx);
        for (std::size_t k = 0; k < g.nx; ++k) term[k] = g.x(k);
        const Field1D v = solve_backward(mu, s2, nullptr, term);
        for (std::size_t l = 0; l < g.nt; ++l) {
            CHECK(interior_max_error(v, l, [&](double x) { return x + m * (g.T - g.t(l)); }) <= 1e-10);
        }
    }
}

TEST_CASE("heat equation convergence") {
    // V(0, x) = exp(-T/2) sin(x) for V_t + V_xx / 2 = 0
    const double T = 0.5;
    std::vector<double> err;
    for (std::size_t nx : {65u, 129u, 257u, 513u}) {
        const std::size_t nt = (nx - 1) / 4 + 1;
        const Grid g = grid_of(nx, nt, -20.0, 20.0, T);
        Field1D mu(g), s2(g, 1.0);
        std::vector<double> term(nx);
        for (std::size_t k = 0; k < nx; ++k) term[k] = std::sin(g.x(k));
        const Field1D v = solve_backward(mu, s2, nullptr, term);
        err.push_back(interior_max_error(v, 0, [&](double x) { return std::exp(-0.25) * std::sin(x); }));
    }
    for (std::size_t i = 0; i + 1 < err.size(); ++i) {
        const double order = std::log2(err[i] / err[i + 1]);
        MESSAGE("heat error " << err[i] << " -> " << err[i + 1] << ", order " << order);
        CHECK(order >= 0.9);
    }
}

TEST_CASE("manufactured solution convergence") {
    // V = e^t sin x with mu = 0.5 cos x, sigma = 1
    std::vector<double> err;
    for (std::size_t nx : {65u, 129u, 257u, 513u}) {
        const std::size_t nt = (nx - 1) / 4 + 1;
        const Grid g = grid_of(nx, nt, -3.0 * M_PI, 3.0 * M_PI, 1.0);
        Field1D mu(g), s2(g, 1.0), f(g);
        for (std::size_t l = 0; l < nt; ++l) {
            for (std::size_t k = 0; k < nx; ++k) {
                const double x = g.x(k), e = std::exp(g.t(l));
                mu(l, k) = 0.5 * std::cos(x);
                f(l, k) = -(e * std::sin(x) - 0.5 * e * std::sin(x) + mu(l, k) * e * std::cos(x));
            }
        }
        std::vector<double> term(nx);
        for (std::size_t k = 0; k < nx; ++k) term[k] = std::exp(1.0) * std::sin(g.x(k));
        const Field1D v = solve_backward(mu, s2, &f, term);
        double e = 0.0;
        for (std::size_t l = 0; l < nt; ++l) {
            e = std::max(e, interior_max_error(v, l, [&](double x) { return std::exp(g.t(l)) * std::sin(x); }));
        }
        err.push_back(e);
    }
    for (std::size_t i = 0; i + 1 < err.size(); ++i) {
        const double order = std::log2(err[i] / err[i + 1]);
        MESSAGE("manufactured error " << err[i] << " -> " << err[i + 1] << ", order " << order);
        CHECK(order >= 0.9);
    }
}

TEST_CASE("comparison principle") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Grid g = grid_of(97, 41, -4.0, 4.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Field1D mu(g), s2(g);
        for (std::size_t l = 0; l < g.nt; ++l) {
            for (std::size_t k = 0; k < g.nx; ++k) {
                mu(l, k) = 3.0 * u(rng);
                s2(l, k) = 0.05 + std::fabs(u(rng));
            }
            // inward or zero drift at the truncation boundary
            mu(l, 0) = std::fabs(mu(l, 0)) * (trial % 2);
            mu(l, g.nx - 1) = -std::fabs(mu(l, g.nx - 1)) * (trial % 2);
        }
        std::vector<double> term(g.nx);
        for (double& t : term) t = 5.0 * u(rng);
        const double lo = *std::min_element(term.begin(), term.end());
        const double hi = *std::max_element(term.begin(), term.end());
        const Field1D v = solve_backward(mu, s2, nullptr, term);
        for (double x : v.data()) {
            CHECK(x >= lo - 1e-12);
            CHECK(x <= hi + 1e-12);
        }
    }
}

TEST_CASE("linearity and residual") {
    const Grid g = grid_of(65, 33, -3.0, 3.0, 1.0);
    Field1D mu(g), s2(g), f1(g), f2(g);
    std::vector<double> g1(g.nx), g2(g.nx), gc(g.nx);
    for (std::size_t l = 0; l < g.nt; ++l) {
        for (std::size_t k = 0; k < g.nx; ++k) {
            const double x = g.x(k), t = g.t(l);
            mu(l, k) = std::tanh(x) - 0.3 * t;
            s2(l, k) = 0.5 + 0.25 * std::cos(x);
            f1(l, k) = std::exp(-x * x) * (1.0 + t);
            f2(l, k) = std::sin(2.0 * x);
        }
    }
    for (std::size_t k = 0; k < g.nx; ++k) {
        g1[k] = std::cos(g.x(k));
        g2[k] = g.x(k) * g.x(k) / 10.0;
        gc[k] = 2.0 * g1[k] - 0.5 * g2[k];
    }
    Field1D fc(g);
    for (std::size_t i = 0; i < fc.data().size(); ++i) fc.data()[i] = 2.0 * f1.data()[i] - 0.5 * f2.data()[i];
    const Field1D v1 = solve_backward(mu, s2, &f1, g1);
    const Field1D v2 = solve_backward(mu, s2, &f2, g2);
    const Field1D vc = solve_backward(mu, s2, &fc, gc);
    for (std::size_t i = 0; i < vc.data().size(); ++i) {
        CHECK(std::fabs(vc.data()[i] - (2.0 * v1.data()[i] - 0.5 * v2.data()[i])) <= 1e-10);
    }

    for (double theta : {1.0, 0.5}) {
        const BackwardOperator op(g, mu, s2, theta);
        const Field1D v = solve_backward(mu, s2, &f1, g1, 0, theta);
        std::vector<double> res(g.nx);
        double worst = 0.0;
        for (std::size_t l = 0; l + 1 < g.nt; ++l) {
            op.residual(l, v.row(l), v.row(l + 1), f1.row(l), f1.row(l + 1), res);
            for (double r : res) worst = std::max(worst, std::fabs(r));
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("thomas solve and singular systems") {
    const std::vector<double> sub = {0, 1, 1}, diag = {4, 4, 4}, sup = {1, 1, 0}, rhs = {5, 6, 5};
    const auto x = thomas_solve(sub, diag, sup, rhs);
    for (double v : x) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    const std::vector<double> zero = {0.0, 1.0, 1.0};
    CHECK_THROWS_AS(thomas_solve(sub, zero, sup, rhs), SingularSystem);

    const Grid g = grid_of(33, 9, -1.0, 1.0, 1.0);
    // 1 - dt * d = 0 in the first row
    Field1D mu(g, -g.dx / g.dt), s2(g, 1.0);
    CHECK_THROWS_AS(BackwardOperator(g, mu, s2), SingularSystem);
}

TEST_CASE("derivatives and norms") {
    const Grid g = grid_of(65, 9, -2.0, 2.0, 1.0);
    std::vector<double> quartic(g.nx);
    for (std::size_t k = 0; k < g.nx; ++k) quartic[k] = std::pow(g.x(k), 4) - g.x(k);
    for (std::size_t k = 2; k + 2 < g.nx; ++k) {
        CHECK(derivative_at(quartic, k, g.dx) == doctest::Approx(4.0 * std::pow(g.x(k), 3) - 1.0).epsilon(1e-11));
    }
    std::vector<double> quad(g.nx);
    for (std::size_t k = 0; k < g.nx; ++k) quad[k] = 3.0 * g.x(k) * g.x(k) + g.x(k);
    for (std::size_t k : {std::size_t{0}, std::size_t{1}, g.nx - 2, g.nx - 1}) {
        CHECK(derivative_at(quad, k, g.dx) == doctest::Approx(6.0 * g.x(k) + 1.0).epsilon(1e-11));
    }

    const NormParts c = field_norm(Field1D(g, 5.0));
    CHECK(c.sup == 5.0);
    CHECK(c.c2() == 5.0);
    Field1D lin(g), sq(g);
    for (std::size_t l = 0; l < g.nt; ++l) {
        for (std::size_t k = 0; k < g.nx; ++k) {
            lin(l, k) = g.x(k);
            sq(l, k) = g.x(k) * g.x(k);
        }
    }
    const double xmax = std::fabs(g.x(g.interior_end() - 1));
    CHECK(field_norm(lin).c2() == doctest::Approx(xmax + 1.0).epsilon(1e-12));
    CHECK(field_norm(sq).hess_x == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("compute_z") {
    const Grid g = grid_of(33, 9, -2.0, 2.0, 1.0);
    ProblemSpec spec = make_spec({});
    SlabField slab(g, 1, StorageMode::diagonal_slab);
    Field1D v2(g);
    for (double& v : slab.data()) v = 2.5;
    const Field1D z0 = compute_z(spec, slab, v2);
    for (double z : z0.data()) CHECK(z == 0.0);

    for (std::size_t i = 0; i < g.nt; ++i)
        for (std::size_t k = 0; k < g.nx; ++k) slab.diag(i, 0)[k] = g.x(k);
    const Field1D z1 = compute_z(spec, slab, v2);
    for (double z : z1.data()) CHECK(z == doctest::Approx(1.0).epsilon(1e-13));

    SpecText st;
    st.G = "z^2";
    st.Gz = "2*z";
    spec = make_spec(st);
    for (double& v : slab.data()) v = 0.0;
    for (std::size_t l = 0; l < g.nt; ++l)
        for (std::size_t k = 0; k < g.nx; ++k) v2(l, k) = g.x(k);
    const Field1D z = compute_z(spec, slab, v2);
    for (std::size_t l = 0; l < g.nt; ++l)
        for (std::size_t k = 0; k < g.nx; ++k) CHECK(z(l, k) == doctest::Approx(2.0 * g.x(k)).epsilon(1e-12));
}

TEST_CASE("entropy-only family matches the closed form") {
    SpecText st;
    st.delta = "1/(1+0.1*s)";
    st.a_lo = 0.0;
    st.a_hi = 2.0;
    st.lambda = 0.7;
    const ProblemSpec spec = make_spec(st);
    const Grid g = grid_of(33, 400, -2.0, 2.0, 1.0);
    const ProblemLattice lat(spec, g, 16);
    const PolicySources src = policy_sources(lat, Field1D(g), 1);
    const FamilyResult res = evaluate_policy_family(lat, src);
    const double c = 0.7 * std::log(2.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.nt; ++i) {
        const double exact = c * std::log(1.0 + 0.1 * (g.T - g.t(i))) / 0.1;
        for (double v : res.v1.diag(i, 0)) worst = std::max(worst, std::fabs(v - exact));
    }
    CHECK(worst <= 1e-6);
    for (double v : res.v2.data()) CHECK(v == 0.0);
}

TEST_CASE("family linear exactness and reference shift") {
    SpecText st;
    st.b = "0.4";
    st.h = "x";
    st.sigma = "0.8";
    const Grid g = grid_of(65, 33, -3.0, 3.0, 1.0);
    ProblemSpec spec = make_spec(st);
    const ProblemLattice lat(spec, g, 8);
    const PolicySources src = policy_sources(lat, Field1D(g), 1);
    const FamilyResult res = evaluate_policy_family(lat, src);
    for (std::size_t l = 0; l < g.nt; ++l) {
        for (std::size_t k = g.interior_begin(); k < g.interior_end(); ++k) {
            CHECK(std::fabs(res.v2(l, k) - (g.x(k) + 0.4 * (g.T - g.t(l)))) <= 1e-10);
        }
    }

    SpecText sy = st;
    sy.F = "y";
    sy.r = "-a^2";
    sy.delta = "exp(-0.2*s)";
    SpecText s0 = sy;
    s0.F = "0";
    const ProblemSpec py = make_spec(sy), p0 = make_spec(s0);
    const ProblemLattice ly(py, g, 8), l0(p0, g, 8);
    const std::size_t ny = reference_slots(py, g, {});
    CHECK(ny == g.nx);
    const FamilyResult ry = evaluate_policy_family(ly, policy_sources(ly, Field1D(g), ny));
    const FamilyOptions general{StorageMode::diagonal_slab, 1.0, true};
    const FamilyResult r0 = evaluate_policy_family(l0, policy_sources(l0, Field1D(g), g.nx), general);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.nt; ++i)
        for (std::size_t j = 0; j < g.nx; ++j)
            for (std::size_t k = 0; k < g.nx; ++k)
                worst = std::max(worst, std::fabs(ry.v1.diag(i, j)[k] - r0.v1.diag(i, j)[k] - g.x(j)));
    CHECK(worst <= 1e-12);
}

TEST_CASE("collapsed and general paths agree bit for bit") {
    const ProblemSpec spec = builtin_problem("consumption_exp");
    const Grid g = grid_of(33, 17, -4.0, 4.0, 1.0);
    const ProblemLattice lat(spec, g, 8);
    Field1D z(g);
    for (std::size_t l = 0; l < g.nt; ++l)
        for (std::size_t k = 0; k < g.nx; ++k) z(l, k) = 0.3 * std::sin(g.x(k)) + g.t(l);
    const FamilyResult a = evaluate_policy_family(lat, policy_sources(lat, z, 1));
    const FamilyOptions general{StorageMode::diagonal_slab, 1.0, true};
    const FamilyResult b = evaluate_policy_family(lat, policy_sources(lat, z, g.nx), general);
    for (std::size_t i = 0; i < g.nt; ++i) {
        for (std::size_t j = 0; j < g.nx; ++j) {
            for (std::size_t k = 0; k < g.nx; ++k) {
                CHECK(a.v1.diag(i, j)[k] == b.v1.diag(i, j)[k]);
                CHECK(a.v1.next(i, j)[k] == b.v1.next(i, j)[k]);
            }
        }
    }
    CHECK(a.v2.data() == b.v2.data());
    CHECK(compute_z(spec, a.v1, a.v2).data() == compute_z(spec, b.v1, b.v2).data());
    CHECK(slab_norm(a.v1).c2() == slab_norm(b.v1).c2());

    const FamilyOptions full{StorageMode::full_tensor, 1.0, false};
    const FamilyResult c = evaluate_policy_family(lat, policy_sources(lat, z, 1), full);
    for (std::size_t i = 0; i < g.nt; ++i) {
        for (std::size_t k = 0; k < g.nx; ++k) {
            CHECK(c.v1.diag(i, 0)[k] == a.v1.diag(i, 0)[k]);
            CHECK(c.v1.next(i, 0)[k] == a.v1.next(i, 0)[k]);
        }
    }
}

TEST_CASE("family solves are order independent") {
    const ProblemSpec spec = builtin_problem("lq_bounded");
    const Grid g = grid_of(33, 9, -3.0, 3.0, 1.0);
    const ProblemLattice lat(spec, g, 8);
    Field1D z(g, 0.2);
    const std::size_t ny = reference_slots(spec, g, {});
    setenv("EQPI_THREADS", "1", 1);
    const FamilyResult a = evaluate_policy_family(lat, policy_sources(lat, z, ny));
    setenv("EQPI_THREADS", "3", 1);
    const FamilyResult b = evaluate_policy_family(lat, policy_sources(lat, z, ny));
    unsetenv("EQPI_THREADS");
    CHECK(a.v1.data() == b.v1.data());
    CHECK(a.v2.data() == b.v2.data());

    setenv("EQPI_THREADS", "zero", 1);
    CHECK_THROWS_AS(thread_count(), std::invalid_argument);
    unsetenv("EQPI_THREADS");
}

TEST_CASE("reward gap matches direct quadrature") {
    SpecText st;
    st.r = "-a^2 + a*tanh(y) - 0.3*(x - y)^2 - (sin(y*a) - x)";
    st.a_lo = -1.0;
    st.a_hi = 1.0;
    const ProblemSpec spec = make_spec(st);
    const Grid g = grid_of(17, 5, -2.0, 2.0, 1.0);
    const ProblemLattice lat(spec, g, 12);
    const auto& q = lat.quadrature();
    for (std::size_t l = 0; l < g.nt; ++l) {
        for (std::size_t k = 0; k < g.nx; ++k) {
            const GibbsContext ctx = lat.context(l, k);
            const auto dens = gibbs_density(ctx, 0.4);
            std::vector<double> gap(g.nx);
            lat.reward_gap(l, k, dens, gap);
            for (std::size_t j = 0; j < g.nx; ++j) {
                double direct = 0.0;
                for (std::size_t m = 0; m < q.size(); ++m) {
                    direct += q.weights[m] * dens[m] *
                              (spec.r(g.x(j), g.t(l), g.x(k), q.nodes[m]) - spec.r(g.x(k), g.t(l), g.x(k), q.nodes[m]));
                }
                CHECK(std::fabs(gap[j] - direct) <= 1e-12);
            }
        }
    }
}
