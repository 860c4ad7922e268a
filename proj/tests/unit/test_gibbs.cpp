#include "doctest.h"

#include <cmath>
#include <numeric>

#include "eqpi/gibbs.hpp"

using namespace eqpi;

namespace {

const double kE = std::exp(1.0);

GibbsContext linear_ctx(const ActionQuadrature& q, double lambda = 1.0) {
    std::vector<double> b(q.nodes);
    std::vector<double> r(q.size(), 0.0);
    return GibbsContext(q, b, r, lambda);
}

GibbsContext flat_ctx(const ActionQuadrature& q, double lambda = 1.0) {
    return GibbsContext(q, std::vector<double>(q.size(), 0.0), std::vector<double>(q.size(), 0.0), lambda);
}

}  // namespace

TEST_CASE("quadrature") {
    const auto q8 = build_quadrature(0.0, 1.0, 8);
    CHECK(q8.size() == 8);
    CHECK(std::accumulate(q8.weights.begin(), q8.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::fabs(q8.integrate([](double a) { return a; }) - 0.5) <= 1e-12);
    const auto q16 = build_quadrature(0.0, 1.0, 16);
    CHECK(std::fabs(q16.integrate([](double a) { return std::exp(a); }) - (kE - 1.0)) <= 1e-10);

    for (std::size_t n : {4u, 5u, 7u, 8u, 9u, 13u, 32u, 33u}) {
        const auto q = build_quadrature(-1.0, 2.0, n);
        REQUIRE(q.size() == n);
        double sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            CHECK(q.weights[k] > 0.0);
            CHECK(q.nodes[k] > -1.0);
            CHECK(q.nodes[k] < 2.0);
            if (k > 0) CHECK(q.nodes[k] > q.nodes[k - 1]);
            sum += q.weights[k];
        }
        CHECK(std::fabs(sum - 3.0) <= 3e-12);
    }
    CHECK_THROWS_AS(build_quadrature(1.0, 1.0, 8), InvalidInterval);
    CHECK_THROWS_AS(build_quadrature(0.0, 1.0, 3), InvalidInterval);
}

TEST_CASE("log partition") {
    const auto q01 = build_quadrature(0.0, 1.0, 16);
    const auto q02 = build_quadrature(0.0, 2.0, 16);
    CHECK(std::fabs(log_partition(flat_ctx(q01), 3.0)) <= 1e-14);
    CHECK(log_partition(flat_ctx(q02), -1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(std::fabs(log_partition(linear_ctx(q01), 1.0) - 0.541324854612918) <= 1e-12);

    // log-sum-exp keeps H finite far outside the naive range
    const auto ctx = linear_ctx(q01, 1e-3);
    const double h = log_partition(ctx, 1e3);
    CHECK(std::isfinite(h));
    // the sum is dominated by the last node
    CHECK(h >= 1e3 * q01.nodes.back() + 1e-3 * std::log(q01.weights.back()));
    CHECK(h <= 1e3);
}

TEST_CASE("density") {
    const auto q = build_quadrature(0.0, 1.0, 16);
    const auto flat = gibbs_density(flat_ctx(build_quadrature(0.0, 2.0, 16)), 0.7);
    for (double g : flat) CHECK(g == doctest::Approx(0.5).epsilon(1e-14));

    const auto ctx = linear_ctx(q);
    const auto d = gibbs_density(ctx, 1.0);
    double norm = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
        CHECK(std::fabs(d[k] - std::exp(q.nodes[k]) / (kE - 1.0)) <= 1e-12);
        norm += q.weights[k] * d[k];
    }
    CHECK(std::fabs(norm - 1.0) <= 1e-12);
    // density at a = 0 from the closed form, against the same formula
    CHECK(1.0 / (kE - 1.0) == doctest::Approx(0.581976706869326));

    std::vector<double> b(q.size()), r(q.size());
    for (std::size_t k = 0; k < q.size(); ++k) {
        b[k] = std::sin(3.0 * q.nodes[k]);
        r[k] = -q.nodes[k] * q.nodes[k];
    }
    const GibbsContext hot(q, b, r, 1e6);
    for (double g : gibbs_density(hot, 5.0)) CHECK(std::fabs(g - 1.0) <= 1e-4);
}

TEST_CASE("mean drift and variance") {
    const auto q = build_quadrature(0.0, 1.0, 16);
    const auto ctx = linear_ctx(q);
    CHECK(mean_drift(ctx, 0.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::fabs(mean_drift(ctx, 1.0) - 1.0 / (kE - 1.0)) <= 1e-12);
    const double fd = (log_partition(ctx, 1.0 + 1e-5) - log_partition(ctx, 1.0 - 1e-5)) / 2e-5;
    CHECK(std::fabs(fd - mean_drift(ctx, 1.0)) <= 1e-6);

    CHECK(drift_variance(ctx, 0.0) == doctest::Approx(1.0 / 12.0).epsilon(1e-13));
    const double step = 1e-3;
    const double fd2 = (log_partition(ctx, 1.0 + step) - 2.0 * log_partition(ctx, 1.0) +
                        log_partition(ctx, 1.0 - step)) / (step * step);
    CHECK(std::fabs(fd2 - drift_variance(ctx, 1.0)) <= 1e-4);

    const GibbsContext constant(q, std::vector<double>(q.size(), 2.5), q.nodes, 0.7);
    CHECK(std::fabs(drift_variance(constant, 3.0)) <= 1e-14);
}

TEST_CASE("entropy") {
    CHECK(entropy(flat_ctx(build_quadrature(0.0, 2.0, 16)), 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const auto q = build_quadrature(0.0, 1.0, 16);
    const double expected = std::log(kE - 1.0) - 1.0 / (kE - 1.0);
    CHECK(std::fabs(entropy(linear_ctx(q), 1.0) - expected) <= 1e-12);
    CHECK(expected == doctest::Approx(-0.040651852256408));
}

TEST_CASE("identities on a mixed context") {
    const auto q = build_quadrature(0.1, 0.9, 32);
    std::vector<double> b(q.size()), r(q.size());
    for (std::size_t k = 0; k < q.size(); ++k) {
        b[k] = 1.0 - q.nodes[k];
        r[k] = -std::exp(-q.nodes[k] * std::exp(0.4));
    }
    for (double lambda : {0.05, 0.5, 1.0, 4.0}) {
        const GibbsContext ctx(q, b, r, lambda);
        for (double z = -10.0; z <= 10.0; z += 0.5) {
            std::vector<double> dens(q.size());
            const GibbsMoments m = ctx.moments(z, dens);
            double norm = 0.0;
            for (std::size_t k = 0; k < q.size(); ++k) {
                CHECK(dens[k] > 0.0);
                norm += q.weights[k] * dens[k];
            }
            CHECK(std::fabs(norm - 1.0) <= 1e-10);
            const double fd = (log_partition(ctx, z + 1e-5) - log_partition(ctx, z - 1e-5)) / 2e-5;
            CHECK(std::fabs(fd - m.mean_drift) <= 1e-6);
            CHECK(m.drift_variance >= -1e-12);
            CHECK(std::fabs(m.entropy - (m.log_partition - z * m.mean_drift - m.mean_reward) / lambda) <= 1e-10);
        }
    }
}

TEST_CASE("translation invariance") {
    const auto q = build_quadrature(-1.0, 1.0, 24);
    std::vector<double> b(q.size()), r(q.size()), r_shift(q.size());
    for (std::size_t k = 0; k < q.size(); ++k) {
        b[k] = q.nodes[k];
        r[k] = -0.5 * q.nodes[k] * q.nodes[k];
        r_shift[k] = r[k] + 7.25;
    }
    const GibbsContext c1(q, b, r, 0.5), c2(q, b, r_shift, 0.5);
    const auto d1 = gibbs_density(c1, 0.8), d2 = gibbs_density(c2, 0.8);
    for (std::size_t k = 0; k < q.size(); ++k) CHECK(std::fabs(d1[k] - d2[k]) <= 1e-12);
    CHECK(std::fabs(log_partition(c2, 0.8) - log_partition(c1, 0.8) - 7.25) <= 1e-12);
}

TEST_CASE("context validation and sampling") {
    const auto q = build_quadrature(0.0, 1.0, 8);
    CHECK_THROWS(GibbsContext(q, std::vector<double>(3), std::vector<double>(8), 1.0));
    CHECK_THROWS(GibbsContext(q, std::vector<double>(8), std::vector<double>(8), 0.0));
    const auto d = gibbs_density(flat_ctx(q), 0.0);
    CHECK(sample_action(q, d, 0.0) == q.nodes.front());
    CHECK(sample_action(q, d, 0.999999) == q.nodes.back());
}
