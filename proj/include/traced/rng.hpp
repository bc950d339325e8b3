#pragma once

#include <cstdint>
#include <random>

#include "traced/array.hpp"
#include "traced/param_store.hpp"

namespace traced {

/// Deterministic RNG wrapper. All stochastic code paths take one of these
/// so a seed pins the whole run.
class Rng {
 public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return unit_(engine_); }
    double normal(double mean, double stddev) {
        return mean + stddev * normal_(engine_);
    }
    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
        return d(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

 private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Glorot-normal init: N(0, 2/(fan_in+fan_out)) for matrices.
/// Rank-1 arrays are treated as bias vectors and zero-initialized.
inline Array glorot_init(const std::vector<std::size_t>& shape, std::uint64_t seed) {
    Array a(shape);
    if (shape.size() < 2) return a;
    double fan_out = static_cast<double>(shape[0]);
    double fan_in = static_cast<double>(Array::count(shape)) / fan_out;
    double stddev = std::sqrt(2.0 / (fan_in + fan_out));
    Rng rng(seed);
    for (auto& v : a.data) v = rng.normal(0.0, stddev);
    return a;
}

/// Glorot-init every array in a store; each array gets its own stream
/// derived from the seed and its index, so layout changes stay local.
inline void glorot_init_store(ParamStore& ps, std::uint64_t seed) {
    for (std::size_t i = 0; i < ps.count(); ++i)
        ps.array(static_cast<int>(i)) =
            glorot_init(ps.array(static_cast<int>(i)).shape, seed * 1000003ULL + i);
}

/// Add N(0, scale) noise to every element. Oracle tests use this to get
/// non-degenerate parameters (bias vectors init to zero otherwise).
inline void perturb_store(ParamStore& ps, Rng& rng, double scale) {
    for (std::size_t i = 0; i < ps.count(); ++i)
        for (auto& v : ps.array(static_cast<int>(i)).data) v += rng.normal(0.0, scale);
}

/// Fisher-Yates shuffle with explicit draws, so the permutation depends only
/// on the seed and not on library distribution internals.
template <typename T>
void shuffle(std::vector<T>& xs, Rng& rng) {
    for (std::size_t i = xs.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(xs[i - 1], xs[j]);
    }
}

}  // namespace traced
