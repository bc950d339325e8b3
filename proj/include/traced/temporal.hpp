#pragma once

#include <array>
#include <deque>
#include <optional>
#include <vector>

#include "traced/dataset.hpp"
#include "traced/response_model.hpp"
#include "traced/theta.hpp"

namespace traced {

/// Rolling per-concept timing state for one student, advanced record by
/// record in time order.
struct ConceptClock {
    std::vector<std::optional<long long>> last_seen;
    std::deque<std::pair<long long, int>> window;  // (time, problem) within delta_hat
    std::optional<long long> t_first;
    long long t_last = 0;

    explicit ConceptClock(std::size_t K) : last_seen(K) {}
};

struct StepFeatures {
    std::vector<double> dtau;  // [K] seconds since concept last seen (or since t_first)
    std::vector<double> freq;  // [K] records touching the concept within the window
};

/// Advance the clock by one record. dtau/freq are computed for every
/// concept; freq includes the current record.
inline StepFeatures clock_update(ConceptClock& clock, const ExerciseRecord& rec,
                                 const QMatrix& q, double delta_hat) {
    if (clock.t_first && rec.time < clock.t_last)
        throw OutOfOrderRecord("clock_update: record time decreased");
    if (!clock.t_first) clock.t_first = rec.time;
    clock.t_last = rec.time;

    std::size_t K = q.concepts;
    StepFeatures f;
    f.dtau.resize(K);
    f.freq.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        long long ref = clock.last_seen[k] ? *clock.last_seen[k] : *clock.t_first;
        f.dtau[k] = static_cast<double>(rec.time - ref);
    }
    clock.window.emplace_back(rec.time, rec.problem);
    while (!clock.window.empty() &&
           static_cast<double>(rec.time - clock.window.front().first) >= delta_hat)
        clock.window.pop_front();
    for (const auto& [t, p] : clock.window)
        for (std::size_t k = 0; k < K; ++k)
            if (q.at(p, k)) f.freq[k] += 1.0;
    for (std::size_t k = 0; k < K; ++k)
        if (q.at(rec.problem, k)) clock.last_seen[k] = rec.time;
    return f;
}

/// Per-step (dtau, freq) rows for a whole sequence.
struct TimelineFeatures {
    std::vector<StepFeatures> steps;  // [T]
};

inline TimelineFeatures compute_features(const std::vector<ExerciseRecord>& records,
                                         const QMatrix& q, double delta_hat) {
    TimelineFeatures tf;
    ConceptClock clock(q.concepts);
    tf.steps.reserve(records.size());
    for (const auto& r : records) tf.steps.push_back(clock_update(clock, r, q, delta_hat));
    return tf;
}

// ---- hazards ----

template <class Ctx>
typename Ctx::S forgetting_logit_t(const Ctx& cx, const ModelTheta& th, std::size_t k,
                                   double dtau) {
    // dtau / theta_f + b_f, with theta_f = exp(log_theta_f) > 0
    return cx.c(dtau) * exp_(-cx.p(th.log_theta_f, k)) + cx.p(th.b_f, k);
}

template <class Ctx>
typename Ctx::S learning_logit_t(const Ctx& cx, const ModelTheta& th, std::size_t k, double f) {
    // theta_l1 * f / (f + theta_l2) + b_l, with theta_l2 = exp(log_theta_l2) > 0
    return cx.p(th.theta_l1, k) * cx.c(f) / (cx.c(f) + exp_(cx.p(th.log_theta_l2, k))) +
           cx.p(th.b_l, k);
}

inline double forgetting_prob(std::size_t k, double dtau, const ModelTheta& th) {
    PlainCtx cx(th.ps);
    return sigmoid(forgetting_logit_t(cx, th, k, dtau));
}

inline double learning_prob(std::size_t k, double f, const ModelTheta& th) {
    PlainCtx cx(th.ps);
    return sigmoid(learning_logit_t(cx, th, k, f));
}

/// Row-stochastic 2x2 transition in state order (1, 0):
/// [[1-pF, pF], [pL, 1-pL]].
inline std::array<std::array<double, 2>, 2> transition_matrix(std::size_t k, double dtau,
                                                              double f, const ModelTheta& th) {
    double pF = forgetting_prob(k, dtau, th);
    double pL = learning_prob(k, f, th);
    return {{{1.0 - pF, pF}, {pL, 1.0 - pL}}};
}

inline double initial_mastery(std::size_t k, const ModelTheta& th) {
    return sigmoid(th.ps.array(th.pi_logit).at(k));
}

/// Prior mastery trajectory p(u_k^t = 1): row 1 is sigma(pi), later rows are
/// the previous row pushed through each concept's transition. Every concept
/// transitions at every step.
inline std::vector<std::vector<double>> prior_propagate(
    const std::vector<ExerciseRecord>& records, const QMatrix& q, const ModelTheta& th,
    const TimelineFeatures& tf) {
    std::size_t T = records.size(), K = q.concepts;
    std::vector<std::vector<double>> prior(T, std::vector<double>(K));
    for (std::size_t k = 0; k < K; ++k) prior[0][k] = initial_mastery(k, th);
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
            double pF = forgetting_prob(k, tf.steps[t].dtau[k], th);
            double pL = learning_prob(k, tf.steps[t].freq[k], th);
            double m = prior[t - 1][k];
            prior[t][k] = m * (1.0 - pF) + (1.0 - m) * pL;
        }
    }
    return prior;
}

inline std::vector<std::vector<double>> prior_propagate(
    const std::vector<ExerciseRecord>& records, const QMatrix& q, const ModelTheta& th) {
    return prior_propagate(records, q, th, compute_features(records, q, th.delta_hat));
}

}  // namespace traced
