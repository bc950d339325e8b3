#pragma once

#include <stdexcept>
#include <vector>

#include "traced/param_store.hpp"
#include "traced/tape.hpp"

namespace traced {

struct EmptySequence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Param-store indices of one affine layer: weight [out][in], bias [out].
struct DenseRef {
    int weight = -1;
    int bias = -1;
};

/// Param-store indices of one LSTM cell: per gate, input weights
/// Zx [d_h][d_in], recurrent weights Zh [d_h][d_h], bias b [d_h].
struct LSTMCellRef {
    int Zx_i, Zh_i, b_i;
    int Zx_f, Zh_f, b_f;
    int Zx_o, Zh_o, b_o;
    int Zx_c, Zh_c, b_c;
};

inline LSTMCellRef add_lstm_params(ParamStore& ps, const std::string& prefix,
                                   std::size_t d_h, std::size_t d_in) {
    LSTMCellRef r{};
    auto mat = [&](const std::string& g, const char* part) {
        return ps.add(prefix + "_Z" + part + "_" + g, Array({d_h, part[0] == 'x' ? d_in : d_h}), true);
    };
    auto vec = [&](const std::string& g) { return ps.add(prefix + "_b_" + g, Array({d_h}), false); };
    r.Zx_i = mat("i", "x"); r.Zh_i = mat("i", "h"); r.b_i = vec("i");
    r.Zx_f = mat("f", "x"); r.Zh_f = mat("f", "h"); r.b_f = vec("f");
    r.Zx_o = mat("o", "x"); r.Zh_o = mat("o", "h"); r.b_o = vec("o");
    r.Zx_c = mat("c", "x"); r.Zh_c = mat("c", "h"); r.b_c = vec("c");
    return r;
}

template <class Ctx>
using Vec = std::vector<typename Ctx::S>;

/// out_i = sum_j W_ij x_j + b_i
template <class Ctx>
Vec<Ctx> dense_forward(const Ctx& cx, const ParamStore& ps, DenseRef d, const Vec<Ctx>& x) {
    const Array& W = ps.array(d.weight);
    const Array& b = ps.array(d.bias);
    if (W.cols() != x.size()) throw ShapeMismatch("dense_forward: input size");
    if (W.rows() != b.size()) throw ShapeMismatch("dense_forward: bias size");
    Vec<Ctx> out;
    out.reserve(W.rows());
    for (std::size_t i = 0; i < W.rows(); ++i) {
        auto acc = cx.p(d.bias, i);
        for (std::size_t j = 0; j < W.cols(); ++j)
            acc = acc + cx.p(d.weight, i * W.cols() + j) * x[j];
        out.push_back(acc);
    }
    return out;
}

template <class Ctx>
struct LSTMState {
    Vec<Ctx> h;
    Vec<Ctx> c;
};

template <class Ctx>
LSTMState<Ctx> lstm_zero_state(const Ctx& cx, std::size_t d_h) {
    LSTMState<Ctx> s;
    s.h.assign(d_h, cx.c(0.0));
    s.c.assign(d_h, cx.c(0.0));
    return s;
}

/// i,f,o = sigma(Zx x + Zh h + b); c' = f c + i tanh(Zxc x + Zhc h + bc); h' = o tanh(c')
template <class Ctx>
LSTMState<Ctx> lstm_cell_step(const Ctx& cx, const ParamStore& ps, const LSTMCellRef& p,
                              const Vec<Ctx>& x, const LSTMState<Ctx>& s) {
    const Array& Zx = ps.array(p.Zx_i);
    const Array& Zh = ps.array(p.Zh_i);
    std::size_t d_h = Zx.rows();
    if (Zx.cols() != x.size() || Zh.cols() != s.h.size() || s.h.size() != d_h)
        throw ShapeMismatch("lstm_cell_step");

    auto gate_pre = [&](int zx, int zh, int b, std::size_t row) {
        auto acc = cx.p(b, row);
        std::size_t cx_ = ps.array(zx).cols();
        for (std::size_t j = 0; j < cx_; ++j) acc = acc + cx.p(zx, row * cx_ + j) * x[j];
        for (std::size_t j = 0; j < d_h; ++j) acc = acc + cx.p(zh, row * d_h + j) * s.h[j];
        return acc;
    };

    LSTMState<Ctx> out;
    out.h.reserve(d_h);
    out.c.reserve(d_h);
    for (std::size_t r = 0; r < d_h; ++r) {
        auto ig = sigmoid(gate_pre(p.Zx_i, p.Zh_i, p.b_i, r));
        auto fg = sigmoid(gate_pre(p.Zx_f, p.Zh_f, p.b_f, r));
        auto og = sigmoid(gate_pre(p.Zx_o, p.Zh_o, p.b_o, r));
        auto cand = tanh_(gate_pre(p.Zx_c, p.Zh_c, p.b_c, r));
        auto c_new = fg * s.c[r] + ig * cand;
        out.c.push_back(c_new);
        out.h.push_back(og * tanh_(c_new));
    }
    return out;
}

/// Left fold of lstm_cell_step from the zero state; returns all T states.
template <class Ctx>
std::vector<LSTMState<Ctx>> lstm_sequence_forward(const Ctx& cx, const ParamStore& ps,
                                                  const LSTMCellRef& p,
                                                  const std::vector<Vec<Ctx>>& xs) {
    if (xs.empty()) throw EmptySequence("lstm_sequence_forward: empty input");
    std::vector<LSTMState<Ctx>> states;
    states.reserve(xs.size());
    LSTMState<Ctx> s = lstm_zero_state(cx, ps.array(p.Zx_i).rows());
    for (const auto& x : xs) {
        s = lstm_cell_step(cx, ps, p, x, s);
        states.push_back(s);
    }
    return states;
}

}  // namespace traced
