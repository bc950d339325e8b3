#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "traced/adam.hpp"
#include "traced/metrics.hpp"
#include "traced/nn.hpp"
#include "traced/rng.hpp"
#include "traced/tape.hpp"
#include "traced/theta.hpp"

namespace traced {

struct UniverseExhausted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LabeledPair {
    int left = 0;
    int right = 0;
    int label = 0;
};

/// Shared architecture of both graph heads: 30 hidden tanh units over
/// [E_l (+) E_r (+) E_l - E_r], sigmoid output.
struct HeadNet {
    std::size_t d = 0;
    ParamStore ps;
    DenseRef hidden;
    DenseRef out;

    static HeadNet create(std::size_t d, std::uint64_t seed, std::size_t hidden_units = 30) {
        HeadNet n;
        n.d = d;
        n.hidden.weight = n.ps.add("W_h", Array({hidden_units, 3 * d}), true);
        n.hidden.bias = n.ps.add("b_h", Array({hidden_units}), false);
        n.out.weight = n.ps.add("W_o", Array({1, hidden_units}), true);
        n.out.bias = n.ps.add("b_o", Array({1}), false);
        glorot_init_store(n.ps, seed);
        return n;
    }
};

template <class Ctx>
typename Ctx::S head_logit_t(const Ctx& cx, const HeadNet& net, const std::vector<double>& left,
                             const std::vector<double>& right) {
    if (left.size() != net.d || right.size() != net.d)
        throw ShapeMismatch("head_logit: embedding dimension");
    Vec<Ctx> x;
    x.reserve(3 * net.d);
    for (double v : left) x.push_back(cx.c(v));
    for (double v : right) x.push_back(cx.c(v));
    for (std::size_t i = 0; i < net.d; ++i) x.push_back(cx.c(left[i] - right[i]));
    auto h = dense_forward(cx, net.ps, net.hidden, x);
    for (auto& v : h) v = tanh_(v);
    return dense_forward(cx, net.ps, net.out, h)[0];
}

inline std::vector<double> embedding_row(const Array& table, std::size_t i) {
    if (i >= table.rows()) throw IndexOutOfRange("embedding_row");
    std::vector<double> out(table.cols());
    for (std::size_t j = 0; j < table.cols(); ++j) out[j] = table.at(i, j);
    return out;
}

/// Concept-concept inclusion probability over a concept embedding table.
inline double relation_forward(std::size_t i, std::size_t j, const Array& E,
                               const HeadNet& net) {
    PlainCtx cx(net.ps);
    return sigmoid(head_logit_t(cx, net, embedding_row(E, i), embedding_row(E, j)));
}

/// Problem-concept membership probability.
inline double concept_forward(std::size_t e, std::size_t k, const Array& E_e, const Array& E_c,
                              const HeadNet& net) {
    PlainCtx cx(net.ps);
    return sigmoid(head_logit_t(cx, net, embedding_row(E_e, e), embedding_row(E_c, k)));
}

/// `ratio` uniform negatives per positive, rejection-sampled outside the
/// positive set.
inline std::vector<LabeledPair> negative_sample(const std::vector<LabeledPair>& positives,
                                                std::size_t n_left, std::size_t n_right,
                                                std::size_t ratio, std::uint64_t seed) {
    std::set<std::pair<int, int>> pos_set;
    for (const auto& p : positives) pos_set.emplace(p.left, p.right);
    std::size_t universe = n_left * n_right;
    std::size_t wanted = positives.size() * ratio;
    if (universe <= pos_set.size() || universe - pos_set.size() < wanted)
        throw UniverseExhausted("negative_sample: not enough non-positive pairs");
    Rng rng(seed);
    std::vector<LabeledPair> out;
    std::set<std::pair<int, int>> drawn;
    while (out.size() < wanted) {
        int l = static_cast<int>(rng.below(n_left));
        int r = static_cast<int>(rng.below(n_right));
        if (pos_set.count({l, r}) || drawn.count({l, r})) continue;
        drawn.emplace(l, r);
        out.push_back({l, r, 0});
    }
    return out;
}

struct HeadMetrics {
    double auc = 0, acc = 0, rmse = 0, mae = 0;
};

struct HeadTrainResult {
    HeadMetrics train;
    HeadMetrics test;
    std::vector<double> loss_history;
};

inline HeadMetrics head_metrics(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    HeadMetrics m;
    m.auc = auc(scores, labels);
    auto tm = threshold_metrics(scores, labels);
    m.acc = tm.acc;
    m.rmse = tm.rmse;
    m.mae = tm.mae;
    return m;
}

/// BCE training with frozen embedding tables; 80/20 split of the shuffled
/// pairs, metrics on both parts.
inline HeadTrainResult train_head(HeadNet& net, std::vector<LabeledPair> pairs,
                                  const Array& E_left, const Array& E_right,
                                  std::size_t epochs, double lr, double l2,
                                  std::uint64_t seed, double train_frac = 0.8) {
    Rng rng(seed);
    shuffle(pairs, rng);
    std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(pairs.size()));
    if (n_train == 0 || n_train == pairs.size())
        throw EmptyInput("train_head: split leaves an empty part");

    HeadTrainResult res;
    Adam opt;
    opt.init(net.ps);
    for (std::size_t e = 0; e < epochs; ++e) {
        Tape tape(net.ps);
        TapeCtx cx(tape);
        Expr total = cx.c(0.0);
        for (std::size_t i = 0; i < n_train; ++i) {
            const auto& p = pairs[i];
            Expr z = head_logit_t(cx, net, embedding_row(E_left, p.left),
                                  embedding_row(E_right, p.right));
            total = total - (p.label ? log_sigmoid(z) : log_sigmoid(-z));
        }
        Expr loss = total / cx.c(static_cast<double>(n_train));
        res.loss_history.push_back(loss.value());
        opt.step(net.ps, tape.backward(loss.id), lr, l2);
    }

    auto eval = [&](std::size_t begin, std::size_t end) {
        std::vector<double> scores;
        std::vector<int> labels;
        PlainCtx cx(net.ps);
        for (std::size_t i = begin; i < end; ++i) {
            const auto& p = pairs[i];
            scores.push_back(sigmoid(head_logit_t(cx, net, embedding_row(E_left, p.left),
                                                  embedding_row(E_right, p.right))));
            labels.push_back(p.label);
        }
        return head_metrics(scores, labels);
    };
    res.train = eval(0, n_train);
    res.test = eval(n_train, pairs.size());
    return res;
}

}  // namespace traced
