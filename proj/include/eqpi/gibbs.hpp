// SPDX-License-Identifier: Apache-2.0
//
// Action-space quadrature and the Gibbs (softmax) family
//
//   Gamma(a) = exp((b(a) z + r(a)) / lambda - H / lambda),
//   H(z)     = lambda * ln int_A exp((b(a) z + r(a)) / lambda) da,
//
// evaluated at quadrature nodes with a max-shift so that H stays finite for
// small lambda or large |z|.

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "eqpi/model.hpp"

namespace eqpi {

class InvalidInterval : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ActionQuadrature {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const { return nodes.size(); }
    double volume() const { return hi - lo; }

    template <class F>
    double integrate(F&& f) const {
        double s = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) s += weights[k] * f(nodes[k]);
        return s;
    }
};

/// Composite Gauss-Legendre rule on equal-width panels of 8 nodes. When n_a
/// is not a multiple of 8, ceil(n_a / 8) panels share the nodes as evenly as
/// possible so that exactly n_a nodes are used.
ActionQuadrature build_quadrature(double a_lo, double a_hi, std::size_t n_a);

/// Everything the Gibbs family needs at one (t, x, z).
struct GibbsMoments {
    double log_partition = 0.0;   // H
    double mean_drift = 0.0;      // int b Gamma  (= dH/dz)
    double drift_variance = 0.0;  // int (b - mean)^2 Gamma  (= lambda * d2H/dz2)
    double mean_reward = 0.0;     // int r Gamma
    double entropy = 0.0;         // -int Gamma ln Gamma
};

/// Single pass over the nodes. density_out, if non-empty, receives Gamma_k.
GibbsMoments gibbs_moments(std::span<const double> weights, std::span<const double> drift,
                           std::span<const double> reward, double lambda, double z,
                           std::span<double> density_out = {});

/// Node values of b(t, x, .) and r(x, t, x, .) at a fixed (t, x).
class GibbsContext {
public:
    GibbsContext(const ActionQuadrature& quad, std::vector<double> drift, std::vector<double> reward,
                 double lambda);

    static GibbsContext at(const ProblemSpec& spec, const ActionQuadrature& quad, double t, double x);

    const ActionQuadrature& quadrature() const { return *quad_; }
    std::span<const double> drift() const { return drift_; }
    std::span<const double> reward() const { return reward_; }
    double lambda() const { return lambda_; }

    GibbsMoments moments(double z, std::span<double> density_out = {}) const;

private:
    const ActionQuadrature* quad_;
    std::vector<double> drift_;
    std::vector<double> reward_;
    double lambda_;
};

double log_partition(const GibbsContext& ctx, double z);
std::vector<double> gibbs_density(const GibbsContext& ctx, double z);
double mean_drift(const GibbsContext& ctx, double z);
/// Gibbs variance of the drift. The z-curvature of H is this divided by lambda.
double drift_variance(const GibbsContext& ctx, double z);
double entropy(const GibbsContext& ctx, double z);

/// Inverse-CDF sample of an action from node densities; u in [0, 1).
double sample_action(const ActionQuadrature& quad, std::span<const double> density, double u);

}  // namespace eqpi
