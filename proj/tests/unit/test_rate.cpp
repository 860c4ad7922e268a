#include "doctest.h"

#include <cmath>

#include "eqpi/rate.hpp"

using namespace eqpi;

TEST_CASE("exact geometric series") {
    std::map<std::size_t, double> d;
    for (std::size_t n = 0; n <= 9; ++n) d[n] = 3.0 * std::pow(0.5, static_cast<double>(n));
    const RateFit f = fit_rate(d, 0, 9);
    CHECK(f.p_hat == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(f.C_hat == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::fabs(f.r_squared - 1.0) <= 1e-12);
    CHECK(f.n_lo == 0);
    CHECK(f.n_hi == 9);
}

TEST_CASE("mixture picks the dominant rate") {
    std::map<std::size_t, double> d;
    for (std::size_t n = 0; n <= 20; ++n) {
        const double x = static_cast<double>(n);
        d[n] = std::pow(0.5, x) + std::pow(0.6, x);
    }
    const RateFit f = fit_rate(d, 10, 20);
    CHECK(f.p_hat > 0.58);
    CHECK(f.p_hat < 0.61);
    CHECK(f.r_squared >= 0.0);
    CHECK(f.r_squared <= 1.0);
}

TEST_CASE("scale invariance") {
    std::map<std::size_t, double> d, scaled;
    for (std::size_t n = 2; n <= 12; ++n) {
        d[n] = std::exp(-0.3 * static_cast<double>(n)) * (1.0 + 0.05 * std::sin(static_cast<double>(n)));
        scaled[n] = 7.5 * d[n];
    }
    const RateFit a = fit_rate(d, 2, 12);
    const RateFit b = fit_rate(scaled, 2, 12);
    CHECK(std::fabs(a.p_hat - b.p_hat) <= 1e-12);
    CHECK(b.C_hat / a.C_hat == doctest::Approx(7.5).epsilon(1e-12));
}

TEST_CASE("bad windows") {
    std::map<std::size_t, double> d{{1, 0.5}, {2, 0.0}, {3, 0.1}, {4, 0.05}};
    CHECK_THROWS_AS(fit_rate(d, 1, 4), NonPositiveIncrement);
    CHECK_THROWS_AS(fit_rate({{1, 0.5}, {2, 0.25}}, 1, 2), InsufficientData);
    CHECK_THROWS_AS(fit_rate({{1, 0.5}, {2, 0.25}, {3, 0.1}}, 1, 8), InsufficientData);
}
