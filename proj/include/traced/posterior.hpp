#pragma once

#include <cstdint>
#include <vector>

#include "traced/generative.hpp"
#include "traced/nn.hpp"

namespace traced {

/// Recognition network q_phi: LSTM over combined inputs, K-dim sigmoid
/// readout per step.
struct PosteriorNet {
    std::size_t K = 0, d_e = 0, d_h = 0, d_in = 0;
    ParamStore ps;
    LSTMCellRef lstm;
    DenseRef out;

    static PosteriorNet create(std::size_t K, std::size_t d_e, std::size_t d_h,
                               std::uint64_t seed) {
        PosteriorNet n;
        n.K = K;
        n.d_e = d_e;
        n.d_h = d_h;
        n.d_in = 4 * d_e + K;
        n.lstm = add_lstm_params(n.ps, "lstm", d_h, n.d_in);
        n.out.weight = n.ps.add("W_q", Array({K, d_h}), true);
        n.out.bias = n.ps.add("b_q", Array({K}), false);
        glorot_init_store(n.ps, seed);
        return n;
    }
};

/// x = [E_e[j] (+) sum_k Q_jk E_c[k]]
inline std::vector<double> exercise_embedding(std::size_t j, const QMatrix& q,
                                              const ModelTheta& th) {
    const auto& d = th.dims;
    if (j >= d.M) throw IndexOutOfRange("exercise_embedding: problem index");
    std::vector<double> x(2 * d.d_e, 0.0);
    const Array& Ee = th.ps.array(th.E_e);
    const Array& Ec = th.ps.array(th.E_c);
    for (std::size_t e = 0; e < d.d_e; ++e) x[e] = Ee.at(j, e);
    for (std::size_t k = 0; k < d.K; ++k)
        if (q.at(j, k))
            for (std::size_t e = 0; e < d.d_e; ++e) x[d.d_e + e] += Ec.at(k, e);
    return x;
}

/// r=1 -> [x (+) 0 (+) prior], r=0 -> [0 (+) x (+) prior]
inline std::vector<double> build_posterior_input(const std::vector<double>& x, int r,
                                                 const std::vector<double>& prior_row) {
    std::size_t half = x.size();
    std::vector<double> out(2 * half + prior_row.size(), 0.0);
    std::size_t base = r ? 0 : half;
    for (std::size_t i = 0; i < half; ++i) out[base + i] = x[i];
    for (std::size_t i = 0; i < prior_row.size(); ++i) out[2 * half + i] = prior_row[i];
    return out;
}

/// Pre-sigmoid outputs z_t = W_q h_t + b_q, one row per step. theta is
/// frozen here: embeddings and priors enter as constants.
template <class Ctx>
std::vector<Vec<Ctx>> posterior_forward_logits_t(const Ctx& cx, const PosteriorNet& net,
                                                 const ModelTheta& th,
                                                 const std::vector<ExerciseRecord>& records,
                                                 const QMatrix& q,
                                                 const std::vector<std::vector<double>>& prior) {
    std::vector<Vec<Ctx>> inputs;
    inputs.reserve(records.size());
    for (std::size_t t = 0; t < records.size(); ++t) {
        auto x = build_posterior_input(
            exercise_embedding(static_cast<std::size_t>(records[t].problem), q, th),
            records[t].response, prior[t]);
        Vec<Ctx> xi;
        xi.reserve(x.size());
        for (double v : x) xi.push_back(cx.c(v));
        inputs.push_back(std::move(xi));
    }
    auto states = lstm_sequence_forward(cx, net.ps, net.lstm, inputs);
    std::vector<Vec<Ctx>> z;
    z.reserve(states.size());
    for (const auto& s : states) z.push_back(dense_forward(cx, net.ps, net.out, s.h));
    return z;
}

/// q_phi rows in (0,1), plain evaluation.
inline std::vector<std::vector<double>> posterior_forward(
    const std::vector<ExerciseRecord>& records, const QMatrix& q, const ModelTheta& th,
    const PosteriorNet& net) {
    auto prior = prior_propagate(records, q, th);
    PlainCtx cx(net.ps);
    auto z = posterior_forward_logits_t(cx, net, th, records, q, prior);
    std::vector<std::vector<double>> out(z.size());
    for (std::size_t t = 0; t < z.size(); ++t) {
        out[t].reserve(z[t].size());
        for (double v : z[t]) out[t].push_back(sigmoid(v));
    }
    return out;
}

/// Independent Bernoulli draw per (t, k).
inline LatentPath sample_latents(const std::vector<std::vector<double>>& q_rows, Rng& rng) {
    LatentPath p;
    p.u.reserve(q_rows.size());
    for (const auto& row : q_rows) {
        std::vector<int> u;
        u.reserve(row.size());
        for (double v : row) u.push_back(rng.bernoulli(v) ? 1 : 0);
        p.u.push_back(std::move(u));
    }
    return p;
}

inline LatentPath sample_latents(const std::vector<std::vector<double>>& q_rows,
                                 std::uint64_t seed) {
    Rng rng(seed);
    return sample_latents(q_rows, rng);
}

/// Mean over samples of the per-sample Bernoulli cross-entropy
/// -sum_{t,k} [u log q + (1-u) log(1-q)], computed in logit space.
template <class Ctx>
typename Ctx::S sleep_loss_t(const Ctx& cx, const PosteriorNet& net, const ModelTheta& th,
                             const std::vector<JointSample>& samples, const QMatrix& q) {
    auto total = cx.c(0.0);
    for (const auto& s : samples) {
        auto records = s.skeleton.with_responses(s.responses);
        auto prior = prior_propagate(records, q, th);
        auto z = posterior_forward_logits_t(cx, net, th, records, q, prior);
        for (std::size_t t = 0; t < z.size(); ++t)
            for (std::size_t k = 0; k < z[t].size(); ++k)
                total = total - (s.path.u[t][k] ? log_sigmoid(z[t][k]) : log_sigmoid(-z[t][k]));
    }
    return total / cx.c(static_cast<double>(samples.size()));
}

inline double sleep_loss(const PosteriorNet& net, const ModelTheta& th,
                         const std::vector<JointSample>& samples, const QMatrix& q) {
    PlainCtx cx(net.ps);
    return sleep_loss_t(cx, net, th, samples, q);
}

}  // namespace traced
