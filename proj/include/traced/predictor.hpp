#pragma once

#include <cstdint>
#include <vector>

#include "traced/posterior.hpp"

namespace traced {

/// Next-response prediction network: LSTM over per-step records
/// [x (+) q (+) next-step mastery], scalar sigmoid readout.
struct PredictorNet {
    std::size_t K = 0, d_e = 0, d_p = 0, d_in = 0;
    ParamStore ps;
    LSTMCellRef lstm;
    DenseRef out;

    static PredictorNet create(std::size_t K, std::size_t d_e, std::size_t d_p,
                               std::uint64_t seed) {
        PredictorNet n;
        n.K = K;
        n.d_e = d_e;
        n.d_p = d_p;
        n.d_in = 2 * d_e + 2 * K;
        n.lstm = add_lstm_params(n.ps, "plstm", d_p, n.d_in);
        n.out.weight = n.ps.add("W_n", Array({1, d_p}), true);
        n.out.bias = n.ps.add("b_n", Array({1}), false);
        glorot_init_store(n.ps, seed);
        return n;
    }
};

/// Factorized one-step push-forward:
/// p(u_k^{t+1}=1) = q_k (1 - pF_k) + (1 - q_k) pL_k.
inline std::vector<double> predict_mastery_next(const std::vector<double>& q_t,
                                                const StepFeatures& next,
                                                const ModelTheta& th) {
    std::vector<double> out(q_t.size());
    for (std::size_t k = 0; k < q_t.size(); ++k) {
        double pF = forgetting_prob(k, next.dtau[k], th);
        double pL = learning_prob(k, next.freq[k], th);
        out[k] = q_t[k] * (1.0 - pF) + (1.0 - q_t[k]) * pL;
    }
    return out;
}

/// x_hat = [x (+) q (+) mastery], in that order.
inline std::vector<double> build_pred_input(const std::vector<double>& x_next,
                                            const std::vector<double>& q_t,
                                            const std::vector<double>& mastery_next) {
    std::vector<double> out;
    out.reserve(x_next.size() + q_t.size() + mastery_next.size());
    out.insert(out.end(), x_next.begin(), x_next.end());
    out.insert(out.end(), q_t.begin(), q_t.end());
    out.insert(out.end(), mastery_next.begin(), mastery_next.end());
    return out;
}

/// Inputs x_hat_s for every step of `records`. Step s >= 1 uses the
/// posterior row of step s-1; step 0 falls back to the initial prior
/// (there is no earlier posterior).
inline std::vector<std::vector<double>> predictor_inputs(
    const std::vector<ExerciseRecord>& records, const QMatrix& q, const ModelTheta& th,
    const std::vector<std::vector<double>>& q_rows) {
    TimelineFeatures tf = compute_features(records, q, th.delta_hat);
    std::size_t K = q.concepts;
    std::vector<double> pi(K);
    for (std::size_t k = 0; k < K; ++k) pi[k] = initial_mastery(k, th);

    std::vector<std::vector<double>> out;
    out.reserve(records.size());
    for (std::size_t s = 0; s < records.size(); ++s) {
        auto x = exercise_embedding(static_cast<std::size_t>(records[s].problem), q, th);
        if (s == 0) {
            out.push_back(build_pred_input(x, pi, pi));
        } else {
            const auto& qprev = q_rows[s - 1];
            out.push_back(build_pred_input(x, qprev,
                                           predict_mastery_next(qprev, tf.steps[s], th)));
        }
    }
    return out;
}

template <class Ctx>
Vec<Ctx> predictor_logits_t(const Ctx& cx, const PredictorNet& net,
                            const std::vector<std::vector<double>>& inputs) {
    std::vector<Vec<Ctx>> xs;
    xs.reserve(inputs.size());
    for (const auto& x : inputs) {
        Vec<Ctx> xi;
        xi.reserve(x.size());
        for (double v : x) xi.push_back(cx.c(v));
        xs.push_back(std::move(xi));
    }
    auto states = lstm_sequence_forward(cx, net.ps, net.lstm, xs);
    Vec<Ctx> z;
    z.reserve(states.size());
    for (const auto& s : states) z.push_back(dense_forward(cx, net.ps, net.out, s.h)[0]);
    return z;
}

/// y_p per step of a full sequence (teacher forcing): y[s] predicts the
/// response at step s from records before s.
inline std::vector<double> predictor_sequence_probs(const std::vector<ExerciseRecord>& records,
                                                    const QMatrix& q, const ModelTheta& th,
                                                    const PosteriorNet& phi,
                                                    const PredictorNet& net) {
    auto q_rows = posterior_forward(records, q, th, phi);
    auto inputs = predictor_inputs(records, q, th, q_rows);
    PlainCtx cx(net.ps);
    auto z = predictor_logits_t(cx, net, inputs);
    std::vector<double> out;
    out.reserve(z.size());
    for (double v : z) out.push_back(sigmoid(v));
    return out;
}

/// Probability that the next response (after `prefix`) is correct.
inline double predict_response(const std::vector<ExerciseRecord>& prefix, int next_problem,
                               long long next_time, const QMatrix& q, const ModelTheta& th,
                               const PosteriorNet& phi, const PredictorNet& net) {
    std::vector<ExerciseRecord> extended = prefix;
    extended.push_back({next_problem, next_time, 0});  // response unused
    std::vector<std::vector<double>> q_rows;
    if (!prefix.empty()) q_rows = posterior_forward(prefix, q, th, phi);
    auto inputs = predictor_inputs(extended, q, th, q_rows);
    PlainCtx cx(net.ps);
    auto z = predictor_logits_t(cx, net, inputs);
    return sigmoid(z.back());
}

/// Mean BCE over steps t >= 2 of every training student; one Adam step per
/// epoch over the whole set. theta and phi stay frozen.
struct PredictorTrainResult {
    std::vector<double> loss_history;
};

inline PredictorTrainResult train_predictor(const std::vector<StudentSequence>& students,
                                            const QMatrix& q, const ModelTheta& th,
                                            const PosteriorNet& phi, PredictorNet& net,
                                            std::size_t epochs, double lr, double l2) {
    PredictorTrainResult res;
    // q rows and inputs depend only on frozen theta/phi; build once
    std::vector<std::vector<std::vector<double>>> all_inputs;
    std::vector<const StudentSequence*> seqs;
    for (const auto& s : students) {
        if (s.records.size() < 2) continue;
        auto q_rows = posterior_forward(s.records, q, th, phi);
        all_inputs.push_back(predictor_inputs(s.records, q, th, q_rows));
        seqs.push_back(&s);
    }
    Adam opt;
    opt.init(net.ps);
    for (std::size_t e = 0; e < epochs; ++e) {
        Tape tape(net.ps);
        TapeCtx cx(tape);
        Expr total = cx.c(0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            auto z = predictor_logits_t(cx, net, all_inputs[i]);
            const auto& recs = seqs[i]->records;
            for (std::size_t s = 1; s < recs.size(); ++s) {
                total = total - (recs[s].response ? log_sigmoid(z[s]) : log_sigmoid(-z[s]));
                ++count;
            }
        }
        Expr loss = total / cx.c(static_cast<double>(count));
        res.loss_history.push_back(loss.value());
        auto grads = tape.backward(loss.id);
        opt.step(net.ps, grads, lr, l2);
    }
    return res;
}

}  // namespace traced
