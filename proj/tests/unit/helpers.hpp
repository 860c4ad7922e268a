#pragma once

#include <string>

#include "eqpi/model.hpp"

namespace eqpi::testing {

struct SpecText {
    std::string b = "0", sigma = "1", r = "0", delta = "1", F = "0", h = "0", G = "0", Gz = "0";
    double lambda = 1.0, T = 1.0, a_lo = 0.0, a_hi = 1.0;
};

inline ProblemSpec make_spec(const SpecText& s) {
    ProblemSpec p;
    p.drift_b = parse(s.b);
    p.vol_sigma = parse(s.sigma);
    p.reward_r = parse(s.r);
    p.discount_delta = parse(s.delta);
    p.terminal_F = parse(s.F);
    p.terminal_h = parse(s.h);
    p.nonlinear_G = parse(s.G);
    p.nonlinear_Gz = parse(s.Gz);
    p.temperature_lambda = s.lambda;
    p.horizon_T = s.T;
    p.action = {s.a_lo, s.a_hi};
    return p;
}

inline GridSpec small_grid(std::size_t nx, std::size_t nt, double x_min = -6.0, double x_max = 6.0) {
    GridSpec g;
    g.x_min = x_min;
    g.x_max = x_max;
    g.n_x = nx;
    g.n_t = nt;
    g.n_a = 16;
    g.boundary_buffer = nx / 8;
    return g;
}

}  // namespace eqpi::testing
