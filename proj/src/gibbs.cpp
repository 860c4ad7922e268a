// SPDX-License-Identifier: Apache-2.0

#include "eqpi/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/legendre.hpp>

namespace eqpi {

namespace {

struct ReferenceRule {
    std::vector<double> nodes;    // on [-1, 1], ascending
    std::vector<double> weights;
};

ReferenceRule gauss_legendre(int n) {
    // legendre_p_zeros returns the non-negative roots in ascending order
    const std::vector<double> half = boost::math::legendre_p_zeros<double>(n);
    ReferenceRule rule;
    auto weight = [n](double x) {
        const double dp = boost::math::legendre_p_prime(n, x);
        return 2.0 / ((1.0 - x * x) * dp * dp);
    };
    for (auto it = half.rbegin(); it != half.rend(); ++it) {
        if (*it == 0.0) continue;
        rule.nodes.push_back(-*it);
        rule.weights.push_back(weight(*it));
    }
    for (double x : half) {
        rule.nodes.push_back(x);
        rule.weights.push_back(weight(x));
    }
    return rule;
}

}  // namespace

ActionQuadrature build_quadrature(double a_lo, double a_hi, std::size_t n_a) {
    if (!(a_lo < a_hi) || !std::isfinite(a_lo) || !std::isfinite(a_hi)) {
        throw InvalidInterval("action interval must satisfy a_lo < a_hi");
    }
    if (n_a < 4) throw InvalidInterval("at least 4 quadrature nodes are required");

    const std::size_t panels = (n_a + 7) / 8;
    ActionQuadrature q;
    q.lo = a_lo;
    q.hi = a_hi;
    q.nodes.reserve(n_a);
    q.weights.reserve(n_a);
    const double width = (a_hi - a_lo) / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
        const std::size_t count = n_a / panels + (p < n_a % panels ? 1 : 0);
        const ReferenceRule ref = gauss_legendre(static_cast<int>(count));
        const double left = a_lo + width * static_cast<double>(p);
        const double mid = left + 0.5 * width;
        for (std::size_t k = 0; k < ref.nodes.size(); ++k) {
            q.nodes.push_back(mid + 0.5 * width * ref.nodes[k]);
            q.weights.push_back(0.5 * width * ref.weights[k]);
        }
    }
    return q;
}

GibbsMoments gibbs_moments(std::span<const double> w, std::span<const double> b, std::span<const double> r,
                           double lambda, double z, std::span<double> density_out) {
    const std::size_t n = w.size();
    const double inv_lambda = 1.0 / lambda;

    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) shift = std::max(shift, (b[k] * z + r[k]) * inv_lambda);

    // first pass: partition sum; exponentials parked in density_out when given
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp((b[k] * z + r[k]) * inv_lambda - shift);
        if (!density_out.empty()) density_out[k] = e;
        sum += w[k] * e;
    }
    const double log_sum = std::log(sum);

    GibbsMoments m;
    m.log_partition = lambda * (shift + log_sum);

    double mean_b = 0.0;
    double mean_r = 0.0;
    double neg_entropy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double log_gamma = (b[k] * z + r[k]) * inv_lambda - shift - log_sum;
        const double gamma = std::exp(log_gamma);
        if (!density_out.empty()) density_out[k] = gamma;
        const double wg = w[k] * gamma;
        mean_b += wg * b[k];
        mean_r += wg * r[k];
        neg_entropy += wg * log_gamma;
    }
    double var = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double gamma = std::exp((b[k] * z + r[k]) * inv_lambda - shift - log_sum);
        const double d = b[k] - mean_b;
        var += w[k] * gamma * d * d;
    }
    m.mean_drift = mean_b;
    m.mean_reward = mean_r;
    m.drift_variance = var;
    m.entropy = -neg_entropy;
    return m;
}

GibbsContext::GibbsContext(const ActionQuadrature& quad, std::vector<double> drift, std::vector<double> reward,
                           double lambda)
    : quad_(&quad), drift_(std::move(drift)), reward_(std::move(reward)), lambda_(lambda) {
    if (drift_.size() != quad.size() || reward_.size() != quad.size()) {
        throw std::invalid_argument("GibbsContext: cache length must equal the quadrature node count");
    }
    if (!(lambda > 0.0)) throw std::invalid_argument("GibbsContext: lambda must be > 0");
}

GibbsContext GibbsContext::at(const ProblemSpec& spec, const ActionQuadrature& quad, double t, double x) {
    std::vector<double> b(quad.size());
    std::vector<double> r(quad.size());
    for (std::size_t k = 0; k < quad.size(); ++k) {
        b[k] = spec.b(t, x, quad.nodes[k]);
        r[k] = spec.r(x, t, x, quad.nodes[k]);
    }
    return GibbsContext(quad, std::move(b), std::move(r), spec.temperature_lambda);
}

GibbsMoments GibbsContext::moments(double z, std::span<double> density_out) const {
    return gibbs_moments(quad_->weights, drift_, reward_, lambda_, z, density_out);
}

double log_partition(const GibbsContext& ctx, double z) { return ctx.moments(z).log_partition; }

std::vector<double> gibbs_density(const GibbsContext& ctx, double z) {
    std::vector<double> out(ctx.quadrature().size());
    ctx.moments(z, out);
    return out;
}

double mean_drift(const GibbsContext& ctx, double z) { return ctx.moments(z).mean_drift; }
double drift_variance(const GibbsContext& ctx, double z) { return ctx.moments(z).drift_variance; }
double entropy(const GibbsContext& ctx, double z) { return ctx.moments(z).entropy; }

double sample_action(const ActionQuadrature& quad, std::span<const double> density, double u) {
    // piecewise-constant CDF over cells centred on the nodes
    double total = 0.0;
    for (std::size_t k = 0; k < quad.size(); ++k) total += quad.weights[k] * density[k];
    double target = u * total;
    for (std::size_t k = 0; k < quad.size(); ++k) {
        const double mass = quad.weights[k] * density[k];
        if (target < mass || k + 1 == quad.size()) return quad.nodes[k];
        target -= mass;
    }
    return quad.nodes.back();
}

}  // namespace eqpi
