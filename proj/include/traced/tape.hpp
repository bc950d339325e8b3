#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "traced/param_store.hpp"

namespace traced {

struct UntracedNode : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double sigmoid(double x) {
    // stable branch form
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

/// log sigma(x) = -softplus(-x), stable for large |x|.
inline double log_sigmoid(double x) {
    if (x >= 0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

constexpr double kProbFloor = 1e-12;

inline double clamp_prob(double p) {
    if (p < kProbFloor) return kProbFloor;
    if (p > 1.0 - kProbFloor) return 1.0 - kProbFloor;
    return p;
}

inline double tanh_(double x) { return std::tanh(x); }
inline double log_(double x) { return std::log(x); }
inline double exp_(double x) { return std::exp(x); }

/// Reverse-mode tape over scalar nodes. Parameters come from a ParamStore
/// registered up front; backward() returns one gradient Array per store entry.
class Tape {
 public:
    enum class Op : std::uint8_t {
        Leaf,
        Param,
        Add,
        Sub,
        Mul,
        Div,
        Neg,
        Sigmoid,
        Tanh,
        Log,
        Exp,
        LogSigmoid,
        ClampProb,
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double val = 0;
        int pid = -1;        // param array index, for Op::Param
        std::size_t off = 0;  // element offset within the param array
    };

    explicit Tape(const ParamStore& ps) : ps_(&ps), cache_(ps.count()) {}

    int leaf(double v) { return push({Op::Leaf, -1, -1, v}); }

    /// Taped read of a parameter element. Cached so repeated reads of the
    /// same element share one node.
    int param(int pid, std::size_t off) {
        auto& slots = cache_[pid];
        if (slots.empty()) slots.assign(ps_->array(pid).size(), -1);
        if (slots[off] >= 0) return slots[off];
        int id = push({Op::Param, -1, -1, ps_->array(pid).at(off), pid, off});
        slots[off] = id;
        return id;
    }

    int add(int a, int b) { return push({Op::Add, a, b, val(a) + val(b)}); }
    int sub(int a, int b) { return push({Op::Sub, a, b, val(a) - val(b)}); }
    int mul(int a, int b) { return push({Op::Mul, a, b, val(a) * val(b)}); }
    int div(int a, int b) { return push({Op::Div, a, b, val(a) / val(b)}); }
    int neg(int a) { return push({Op::Neg, a, -1, -val(a)}); }
    int sigmoid(int a) { return push({Op::Sigmoid, a, -1, traced::sigmoid(val(a))}); }
    int tanh_(int a) { return push({Op::Tanh, a, -1, std::tanh(val(a))}); }
    int log_(int a) { return push({Op::Log, a, -1, std::log(val(a))}); }
    int exp_(int a) { return push({Op::Exp, a, -1, std::exp(val(a))}); }
    int log_sigmoid(int a) { return push({Op::LogSigmoid, a, -1, traced::log_sigmoid(val(a))}); }
    int clamp_prob(int a) { return push({Op::ClampProb, a, -1, traced::clamp_prob(val(a))}); }

    double val(int id) const {
        check(id);
        return nodes_[id].val;
    }

    std::size_t size() const { return nodes_.size(); }
    const ParamStore& store() const { return *ps_; }

    /// Reverse accumulation from `loss`. Gradients of parameters the loss
    /// never touched come back as zero arrays.
    std::vector<Array> backward(int loss) const {
        check(loss);
        if (!std::isfinite(nodes_[loss].val)) throw NonFiniteLoss("non-finite loss value");
        std::vector<double> grad(nodes_.size(), 0.0);
        grad[loss] = 1.0;
        std::vector<Array> out = ps_->zeros_like();
        for (int i = loss; i >= 0; --i) {
            double g = grad[i];
            if (g == 0.0) continue;
            const Node& n = nodes_[i];
            switch (n.op) {
                case Op::Leaf:
                    break;
                case Op::Param:
                    out[n.pid].at(n.off) += g;
                    break;
                case Op::Add:
                    grad[n.a] += g;
                    grad[n.b] += g;
                    break;
                case Op::Sub:
                    grad[n.a] += g;
                    grad[n.b] -= g;
                    break;
                case Op::Mul:
                    grad[n.a] += g * nodes_[n.b].val;
                    grad[n.b] += g * nodes_[n.a].val;
                    break;
                case Op::Div:
                    grad[n.a] += g / nodes_[n.b].val;
                    grad[n.b] -= g * n.val / nodes_[n.b].val;
                    break;
                case Op::Neg:
                    grad[n.a] -= g;
                    break;
                case Op::Sigmoid:
                    grad[n.a] += g * n.val * (1.0 - n.val);
                    break;
                case Op::Tanh:
                    grad[n.a] += g * (1.0 - n.val * n.val);
                    break;
                case Op::Log:
                    grad[n.a] += g / nodes_[n.a].val;
                    break;
                case Op::Exp:
                    grad[n.a] += g * n.val;
                    break;
                case Op::LogSigmoid:
                    grad[n.a] += g * traced::sigmoid(-nodes_[n.a].val);
                    break;
                case Op::ClampProb: {
                    double x = nodes_[n.a].val;
                    if (x > kProbFloor && x < 1.0 - kProbFloor) grad[n.a] += g;
                    break;
                }
            }
        }
        return out;
    }

 private:
    int push(Node n) {
        nodes_.push_back(n);
        return static_cast<int>(nodes_.size()) - 1;
    }
    void check(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw UntracedNode("node id out of range");
    }

    const ParamStore* ps_;
    std::vector<Node> nodes_;
    std::vector<std::vector<int>> cache_;
};

/// Expression handle so taped code reads like plain arithmetic.
struct Expr {
    Tape* t = nullptr;
    int id = -1;

    double value() const { return t->val(id); }
};

inline Expr operator+(Expr a, Expr b) { return {a.t, a.t->add(a.id, b.id)}; }
inline Expr operator-(Expr a, Expr b) { return {a.t, a.t->sub(a.id, b.id)}; }
inline Expr operator*(Expr a, Expr b) { return {a.t, a.t->mul(a.id, b.id)}; }
inline Expr operator/(Expr a, Expr b) { return {a.t, a.t->div(a.id, b.id)}; }
inline Expr operator-(Expr a) { return {a.t, a.t->neg(a.id)}; }
inline Expr sigmoid(Expr a) { return {a.t, a.t->sigmoid(a.id)}; }
inline Expr tanh_(Expr a) { return {a.t, a.t->tanh_(a.id)}; }
inline Expr log_(Expr a) { return {a.t, a.t->log_(a.id)}; }
inline Expr exp_(Expr a) { return {a.t, a.t->exp_(a.id)}; }
inline Expr log_sigmoid(Expr a) { return {a.t, a.t->log_sigmoid(a.id)}; }
inline Expr clamp_prob(Expr a) { return {a.t, a.t->clamp_prob(a.id)}; }

/// Plain evaluation context: parameters are read straight from the store.
struct PlainCtx {
    using S = double;
    const ParamStore* ps;

    explicit PlainCtx(const ParamStore& s) : ps(&s) {}
    S p(int arr, std::size_t off) const { return ps->array(arr).at(off); }
    S c(double v) const { return v; }
};

/// Taped context: parameter reads and constants become tape nodes.
struct TapeCtx {
    using S = Expr;
    Tape* t;

    explicit TapeCtx(Tape& tape) : t(&tape) {}
    S p(int arr, std::size_t off) const { return {t, t->param(arr, off)}; }
    S c(double v) const { return {t, t->leaf(v)}; }
};

}  // namespace traced
