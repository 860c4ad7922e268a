// SPDX-License-Identifier: Apache-2.0
//
// Geometric-rate fit of an increment sequence: least squares of ln d_n on n.

#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>

namespace eqpi {

class InsufficientData : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonPositiveIncrement : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RateFit {
    double p_hat = 0.0;
    double C_hat = 0.0;
    double r_squared = 0.0;
    std::size_t n_lo = 0;
    std::size_t n_hi = 0;
};

/// Fits d_n ~ C p^n over n in [n_lo, n_hi]. Every n in the window must be
/// present in d; the window needs at least three points.
RateFit fit_rate(const std::map<std::size_t, double>& d, std::size_t n_lo, std::size_t n_hi);

}  // namespace eqpi
