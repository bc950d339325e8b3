#pragma once

#include <vector>

#include "traced/dataset.hpp"
#include "traced/tape.hpp"
#include "traced/theta.hpp"

namespace traced {

/// Log-odds of a clean (no slip/guess) correct response. The unrestricted
/// double sum over concept pairs equals |sum_k Q_jk E_c[k]|^2, so the KK
/// term is computed as a self dot product; EK and UE are dot products with
/// the problem embedding.
template <class Ctx>
typename Ctx::S response_logit_t(const Ctx& cx, const ModelTheta& th,
                                 const std::vector<typename Ctx::S>& u, std::size_t j,
                                 const QMatrix& q) {
    const auto& d = th.dims;
    if (j >= d.M) throw IndexOutOfRange("response_logit: problem index");
    if (u.size() != d.K) throw ShapeMismatch("response_logit: mastery vector");
    auto z = cx.p(th.mu, 0) + cx.p(th.w_e, j);
    // concept-sum embedding  Ehat = sum_k Q_jk E_c[k]
    std::vector<typename Ctx::S> ehat(d.d_e, cx.c(0.0));
    for (std::size_t k = 0; k < d.K; ++k) {
        if (!q.at(j, k)) continue;
        z = z + cx.p(th.w_c, k);
        for (std::size_t e = 0; e < d.d_e; ++e)
            ehat[e] = ehat[e] + cx.p(th.E_c, k * d.d_e + e);
    }
    // student embedding  sum_k u_k E_c[k]
    std::vector<typename Ctx::S> ustate(d.d_e, cx.c(0.0));
    for (std::size_t k = 0; k < d.K; ++k)
        for (std::size_t e = 0; e < d.d_e; ++e)
            ustate[e] = ustate[e] + u[k] * cx.p(th.E_c, k * d.d_e + e);
    for (std::size_t e = 0; e < d.d_e; ++e) {
        auto ee = cx.p(th.E_e, j * d.d_e + e);
        z = z + ehat[e] * ehat[e];   // KK (diagonal included)
        z = z + ustate[e] * ee;      // UE
        z = z + ehat[e] * ee;        // EK
    }
    return z;
}

template <class Ctx>
typename Ctx::S clean_response_prob_t(const Ctx& cx, const ModelTheta& th,
                                      const std::vector<typename Ctx::S>& u, std::size_t j,
                                      const QMatrix& q) {
    return sigmoid(response_logit_t(cx, th, u, j, q));
}

/// p(r=1|u) = p_hat (1 - p_slip) + (1 - p_hat) p_guess
template <class Ctx>
typename Ctx::S observe_prob_t(const Ctx& cx, const ModelTheta& th, int r,
                               const std::vector<typename Ctx::S>& u, std::size_t j,
                               const QMatrix& q) {
    auto p_hat = clean_response_prob_t(cx, th, u, j, q);
    auto p_slip = sigmoid(cx.p(th.theta_s, j));
    auto p_guess = sigmoid(cx.p(th.theta_g, j));
    auto p1 = p_hat * (cx.c(1.0) - p_slip) + (cx.c(1.0) - p_hat) * p_guess;
    return r ? p1 : cx.c(1.0) - p1;
}

template <class Ctx>
typename Ctx::S log_observe_prob_t(const Ctx& cx, const ModelTheta& th, int r,
                                   const std::vector<typename Ctx::S>& u, std::size_t j,
                                   const QMatrix& q) {
    return log_(clamp_prob(observe_prob_t(cx, th, r, u, j, q)));
}

// ---- plain-double wrappers ----

inline std::vector<double> to_plain(const std::vector<int>& u) {
    return std::vector<double>(u.begin(), u.end());
}

inline double response_logit(const std::vector<int>& u, std::size_t j, const QMatrix& q,
                             const ModelTheta& th) {
    PlainCtx cx(th.ps);
    return response_logit_t(cx, th, to_plain(u), j, q);
}

inline double clean_response_prob(const std::vector<int>& u, std::size_t j, const QMatrix& q,
                                  const ModelTheta& th) {
    return sigmoid(response_logit(u, j, q, th));
}

inline std::pair<double, double> slip_guess(std::size_t j, const ModelTheta& th) {
    if (j >= th.dims.M) throw IndexOutOfRange("slip_guess: problem index");
    return {sigmoid(th.ps.array(th.theta_s).at(j)), sigmoid(th.ps.array(th.theta_g).at(j))};
}

inline double observe_prob(int r, const std::vector<int>& u, std::size_t j, const QMatrix& q,
                           const ModelTheta& th) {
    PlainCtx cx(th.ps);
    return observe_prob_t(cx, th, r, to_plain(u), j, q);
}

}  // namespace traced
