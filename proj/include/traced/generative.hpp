#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "traced/response_model.hpp"
#include "traced/temporal.hpp"

namespace traced {

struct KTooLarge : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TooLargeToEnumerate : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Binary mastery path u[t][k].
struct LatentPath {
    std::vector<std::vector<int>> u;
};

/// (times, problems) of a sequence without responses.
struct Skeleton {
    std::vector<long long> times;
    std::vector<int> problems;

    static Skeleton of(const std::vector<ExerciseRecord>& records) {
        Skeleton s;
        for (const auto& r : records) {
            s.times.push_back(r.time);
            s.problems.push_back(r.problem);
        }
        return s;
    }
    std::vector<ExerciseRecord> with_responses(const std::vector<int>& r) const {
        std::vector<ExerciseRecord> out;
        for (std::size_t t = 0; t < times.size(); ++t)
            out.push_back({problems[t], times[t], r[t]});
        return out;
    }
    std::size_t length() const { return times.size(); }
};

struct JointSample {
    Skeleton skeleton;
    LatentPath path;
    std::vector<int> responses;
};

/// log p(u, r) = sum_k log p(u_k^1) + sum_{t>=2,k} log p(u_k^t | u_k^{t-1})
///             + sum_t log p(r_t | u^t)
template <class Ctx>
typename Ctx::S joint_log_prob_t(const Ctx& cx, const ModelTheta& th, const LatentPath& path,
                                 const std::vector<int>& responses,
                                 const std::vector<int>& problems, const QMatrix& q,
                                 const TimelineFeatures& tf) {
    std::size_t T = responses.size(), K = q.concepts;
    if (path.u.size() != T || problems.size() != T || tf.steps.size() != T)
        throw ShapeMismatch("joint_log_prob: lengths");
    auto total = cx.c(0.0);
    for (std::size_t k = 0; k < K; ++k) {
        auto z = cx.p(th.pi_logit, k);
        total = total + (path.u[0][k] ? log_sigmoid(z) : log_sigmoid(-z));
    }
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
            int prev = path.u[t - 1][k], next = path.u[t][k];
            if (prev) {
                auto zf = forgetting_logit_t(cx, th, k, tf.steps[t].dtau[k]);
                total = total + (next ? log_sigmoid(-zf) : log_sigmoid(zf));
            } else {
                auto zl = learning_logit_t(cx, th, k, tf.steps[t].freq[k]);
                total = total + (next ? log_sigmoid(zl) : log_sigmoid(-zl));
            }
        }
    }
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<typename Ctx::S> u;
        u.reserve(K);
        for (std::size_t k = 0; k < K; ++k) u.push_back(cx.c(path.u[t][k]));
        total = total + log_observe_prob_t(cx, th, responses[t], u,
                                           static_cast<std::size_t>(problems[t]), q);
    }
    return total;
}

inline double joint_log_prob(const LatentPath& path, const std::vector<int>& responses,
                             const std::vector<ExerciseRecord>& records, const QMatrix& q,
                             const ModelTheta& th) {
    PlainCtx cx(th.ps);
    std::vector<int> problems;
    for (const auto& r : records) problems.push_back(r.problem);
    return joint_log_prob_t(cx, th, path, responses, problems, q,
                            compute_features(records, q, th.delta_hat));
}

/// p(r_t = r | u) for all 2^K mastery states. Bit k of the state index is
/// u_k. The state-dependent part of the logit is the UE term, accumulated
/// per set bit over a shared base.
inline std::vector<double> emission_table(const ModelTheta& th, const QMatrix& q,
                                          std::size_t j, int r) {
    const auto& d = th.dims;
    std::size_t n = std::size_t{1} << d.K;
    const Array& Ec = th.ps.array(th.E_c);
    const Array& Ee = th.ps.array(th.E_e);
    std::vector<int> zero_u(d.K, 0);
    double base = response_logit(zero_u, j, q, th);
    std::vector<double> ue(d.K, 0.0);
    for (std::size_t k = 0; k < d.K; ++k)
        for (std::size_t e = 0; e < d.d_e; ++e)
            ue[k] += Ec.at(k, e) * Ee.at(j, e);
    auto [p_slip, p_guess] = slip_guess(j, th);
    std::vector<double> out(n);
    for (std::size_t s = 0; s < n; ++s) {
        double z = base;
        for (std::size_t k = 0; k < d.K; ++k)
            if (s & (std::size_t{1} << k)) z += ue[k];
        double p_hat = sigmoid(z);
        double p1 = p_hat * (1.0 - p_slip) + (1.0 - p_hat) * p_guess;
        out[s] = r ? p1 : 1.0 - p1;
    }
    return out;
}

/// Ancestral sampling following the generative factorization. Deterministic
/// given the rng state; draw order is (t, k) for latents, then r per step.
inline JointSample ancestral_sample(const Skeleton& skel, const QMatrix& q,
                                    const ModelTheta& th, Rng& rng) {
    std::size_t T = skel.length(), K = q.concepts;
    JointSample s;
    s.skeleton = skel;
    s.path.u.assign(T, std::vector<int>(K, 0));
    s.responses.assign(T, 0);
    TimelineFeatures tf = compute_features(skel.with_responses(std::vector<int>(T, 0)), q,
                                           th.delta_hat);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
            double p1;
            if (t == 0) {
                p1 = initial_mastery(k, th);
            } else if (s.path.u[t - 1][k]) {
                p1 = 1.0 - forgetting_prob(k, tf.steps[t].dtau[k], th);
            } else {
                p1 = learning_prob(k, tf.steps[t].freq[k], th);
            }
            s.path.u[t][k] = rng.bernoulli(p1) ? 1 : 0;
        }
        double p1 = observe_prob(1, s.path.u[t], static_cast<std::size_t>(skel.problems[t]), q, th);
        s.responses[t] = rng.bernoulli(p1) ? 1 : 0;
    }
    return s;
}

inline JointSample ancestral_sample(const Skeleton& skel, const QMatrix& q,
                                    const ModelTheta& th, std::uint64_t seed) {
    Rng rng(seed);
    return ancestral_sample(skel, q, th, rng);
}

struct ExactForwardResult {
    double loglik = 0;
    std::vector<std::vector<double>> filtered;  // [T][K] p(u_k^t=1 | r_{1..t})
};

namespace detail {

/// In-place per-axis 2x2 contraction pushing a distribution over 2^K states
/// one step forward for concept k.
inline void contract_forward(std::vector<double>& alpha, std::size_t k, double pF, double pL) {
    std::size_t bit = std::size_t{1} << k;
    for (std::size_t s = 0; s < alpha.size(); ++s) {
        if (s & bit) continue;
        double a0 = alpha[s];        // prev u_k = 0
        double a1 = alpha[s | bit];  // prev u_k = 1
        alpha[s | bit] = a1 * (1.0 - pF) + a0 * pL;
        alpha[s] = a1 * pF + a0 * (1.0 - pL);
    }
}

/// Transposed contraction for the backward pass:
/// beta_prev[s_prev] = sum_next T(prev->next) beta[next].
inline void contract_backward(std::vector<double>& beta, std::size_t k, double pF, double pL) {
    std::size_t bit = std::size_t{1} << k;
    for (std::size_t s = 0; s < beta.size(); ++s) {
        if (s & bit) continue;
        double b0 = beta[s];
        double b1 = beta[s | bit];
        beta[s | bit] = (1.0 - pF) * b1 + pF * b0;
        beta[s] = pL * b1 + (1.0 - pL) * b0;
    }
}

inline void marginals_of(const std::vector<double>& table, std::size_t K,
                         std::vector<double>& out) {
    out.assign(K, 0.0);
    double z = 0.0;
    for (double v : table) z += v;
    for (std::size_t s = 0; s < table.size(); ++s)
        for (std::size_t k = 0; k < K; ++k)
            if (s & (std::size_t{1} << k)) out[k] += table[s];
    for (auto& v : out) v /= z;
}

}  // namespace detail

/// Exact joint-table forward pass over the 2^K state space. Cost
/// O(T K 2^K) for the transitions plus the emission products.
inline ExactForwardResult exact_forward(const std::vector<ExerciseRecord>& records,
                                        const QMatrix& q, const ModelTheta& th,
                                        std::size_t K_max = 15,
                                        std::vector<std::vector<double>>* alphas_out = nullptr,
                                        std::vector<double>* scales_out = nullptr) {
    std::size_t K = q.concepts, T = records.size();
    if (K > K_max) throw KTooLarge("exact_forward: K exceeds K_max");
    std::size_t n = std::size_t{1} << K;
    TimelineFeatures tf = compute_features(records, q, th.delta_hat);

    std::vector<double> alpha(n, 1.0);
    for (std::size_t k = 0; k < K; ++k) {
        double pi = initial_mastery(k, th);
        std::size_t bit = std::size_t{1} << k;
        for (std::size_t s = 0; s < n; ++s) alpha[s] *= (s & bit) ? pi : 1.0 - pi;
    }

    ExactForwardResult res;
    res.filtered.assign(T, std::vector<double>(K));
    for (std::size_t t = 0; t < T; ++t) {
        if (t > 0)
            for (std::size_t k = 0; k < K; ++k)
                detail::contract_forward(alpha, k,
                                         forgetting_prob(k, tf.steps[t].dtau[k], th),
                                         learning_prob(k, tf.steps[t].freq[k], th));
        std::vector<double> em = emission_table(th, q, records[t].problem, records[t].response);
        double z = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            alpha[s] *= em[s];
            z += alpha[s];
        }
        res.loglik += std::log(z);
        for (auto& v : alpha) v /= z;
        detail::marginals_of(alpha, K, res.filtered[t]);
        if (alphas_out) alphas_out->push_back(alpha);
        if (scales_out) scales_out->push_back(z);
    }
    return res;
}

/// Smoothed marginals p(u_k^t = 1 | r_{1..T}) via forward-backward on the
/// joint table. At t = T smoothed equals filtered.
inline std::vector<std::vector<double>> exact_forward_backward(
    const std::vector<ExerciseRecord>& records, const QMatrix& q, const ModelTheta& th,
    std::size_t K_max = 15) {
    std::size_t K = q.concepts, T = records.size();
    if (K > K_max) throw KTooLarge("exact_forward_backward: K exceeds K_max");
    std::size_t n = std::size_t{1} << K;
    TimelineFeatures tf = compute_features(records, q, th.delta_hat);

    std::vector<std::vector<double>> alphas;
    std::vector<double> scales;
    exact_forward(records, q, th, K_max, &alphas, &scales);

    std::vector<std::vector<double>> smoothed(T, std::vector<double>(K));
    std::vector<double> beta(n, 1.0);
    for (std::size_t ti = T; ti-- > 0;) {
        std::vector<double> table(n);
        for (std::size_t s = 0; s < n; ++s) table[s] = alphas[ti][s] * beta[s];
        detail::marginals_of(table, K, smoothed[ti]);
        if (ti == 0) break;
        // fold emission at ti into beta, then push through the transposed
        // transition for step ti; rescale with the forward normalizer
        std::vector<double> em = emission_table(th, q, records[ti].problem, records[ti].response);
        for (std::size_t s = 0; s < n; ++s) beta[s] *= em[s] / scales[ti];
        for (std::size_t k = 0; k < K; ++k)
            detail::contract_backward(beta, k,
                                      forgetting_prob(k, tf.steps[ti].dtau[k], th),
                                      learning_prob(k, tf.steps[ti].freq[k], th));
    }
    return smoothed;
}

struct EnumerationResult {
    double loglik = 0;
    std::vector<std::vector<double>> smoothed;  // [T][K]
};

/// Naive sum over all 2^(K*T) latent paths in log-sum-exp form. Test oracle
/// only; refuses instances beyond K*T = 22.
inline EnumerationResult brute_force_enumeration(const std::vector<ExerciseRecord>& records,
                                                 const QMatrix& q, const ModelTheta& th) {
    std::size_t K = q.concepts, T = records.size();
    if (K * T > 22) throw TooLargeToEnumerate("brute_force_enumeration: K*T > 22");
    std::vector<int> responses, problems;
    for (const auto& r : records) {
        responses.push_back(r.response);
        problems.push_back(r.problem);
    }
    TimelineFeatures tf = compute_features(records, q, th.delta_hat);
    PlainCtx cx(th.ps);

    std::size_t bits = K * T;
    std::size_t total = std::size_t{1} << bits;
    double max_lp = -std::numeric_limits<double>::infinity();
    std::vector<double> lps(total);
    LatentPath path;
    path.u.assign(T, std::vector<int>(K, 0));
    for (std::size_t code = 0; code < total; ++code) {
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t k = 0; k < K; ++k)
                path.u[t][k] = (code >> (t * K + k)) & 1 ? 1 : 0;
        lps[code] = joint_log_prob_t(cx, th, path, responses, problems, q, tf);
        max_lp = std::max(max_lp, lps[code]);
    }
    double sum = 0.0;
    std::vector<std::vector<double>> num(T, std::vector<double>(K, 0.0));
    for (std::size_t code = 0; code < total; ++code) {
        double w = std::exp(lps[code] - max_lp);
        sum += w;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t k = 0; k < K; ++k)
                if ((code >> (t * K + k)) & 1) num[t][k] += w;
    }
    EnumerationResult res;
    res.loglik = max_lp + std::log(sum);
    res.smoothed = std::move(num);
    for (auto& row : res.smoothed)
        for (auto& v : row) v /= sum;
    return res;
}

}  // namespace traced
