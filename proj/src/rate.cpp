// SPDX-License-Identifier: Apache-2.0

#include "eqpi/rate.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace eqpi {

RateFit fit_rate(const std::map<std::size_t, double>& d, std::size_t n_lo, std::size_t n_hi) {
    if (n_hi < n_lo || n_hi - n_lo + 1 < 3) {
        throw InsufficientData("rate window [" + std::to_string(n_lo) + ", " + std::to_string(n_hi) +
                               "] holds fewer than 3 points");
    }
    std::vector<double> xs, ys;
    for (std::size_t n = n_lo; n <= n_hi; ++n) {
        const auto it = d.find(n);
        if (it == d.end()) throw InsufficientData("no increment recorded for n = " + std::to_string(n));
        if (!(it->second > 0.0) || !std::isfinite(it->second)) {
            throw NonPositiveIncrement("increment at n = " + std::to_string(n) + " is not positive");
        }
        xs.push_back(static_cast<double>(n));
        ys.push_back(std::log(it->second));
    }
    const double m = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= m;
    my /= m;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double e = ys[i] - (intercept + slope * xs[i]);
        ss_res += e * e;
    }
    RateFit fit;
    fit.p_hat = std::exp(slope);
    fit.C_hat = std::exp(intercept);
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    fit.n_lo = n_lo;
    fit.n_hi = n_hi;
    return fit;
}

}  // namespace eqpi
