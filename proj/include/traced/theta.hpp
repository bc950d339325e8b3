#pragma once

#include <cmath>
#include <cstdint>

#include "traced/param_store.hpp"
#include "traced/rng.hpp"

namespace traced {

struct IndexOutOfRange : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelDims {
    std::size_t M = 0;    // problems
    std::size_t K = 0;    // concepts
    std::size_t d_e = 20; // embedding dimension
};

/// All generative parameters: the log-linear response model plus the
/// learning/forgetting dynamics. Positive scales (forgetting time scale,
/// learning half-saturation) are stored in log space.
struct ModelTheta {
    ModelDims dims;
    double delta_hat = 86400.0;  // frequency window, seconds
    ParamStore ps;

    // response model
    int mu, w_e, w_c, E_e, E_c, theta_s, theta_g;
    // temporal dynamics
    int pi_logit, log_theta_f, b_f, theta_l1, log_theta_l2, b_l;

    static ModelTheta create(ModelDims d, double delta_hat, std::uint64_t seed) {
        ModelTheta t;
        t.dims = d;
        t.delta_hat = delta_hat;
        auto& ps = t.ps;
        t.mu = ps.add("mu", Array({1}), false);
        t.w_e = ps.add("w_e", Array({d.M}), false);
        t.w_c = ps.add("w_c", Array({d.K}), false);
        t.E_e = ps.add("E_e", Array({d.M, d.d_e}), true);
        t.E_c = ps.add("E_c", Array({d.K, d.d_e}), true);
        t.theta_s = ps.add("theta_s", Array({d.M}), false);
        t.theta_g = ps.add("theta_g", Array({d.M}), false);
        t.pi_logit = ps.add("pi_logit", Array({d.K}), false);
        t.log_theta_f = ps.add("log_theta_f", Array({d.K}), false);
        t.b_f = ps.add("b_f", Array({d.K}), false);
        t.theta_l1 = ps.add("theta_l1", Array({d.K}), false);
        t.log_theta_l2 = ps.add("log_theta_l2", Array({d.K}), false);
        t.b_l = ps.add("b_l", Array({d.K}), false);
        glorot_init_store(ps, seed);
        // hazard scales start at the data timescale so sigmoid arguments are
        // O(1) for typical gaps
        for (std::size_t k = 0; k < d.K; ++k) {
            ps.array(t.log_theta_f).at(k) = std::log(delta_hat);
            ps.array(t.log_theta_l2).at(k) = std::log(5.0);
        }
        return t;
    }
};

}  // namespace traced
