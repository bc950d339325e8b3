#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "traced/array.hpp"

namespace traced {

/// Named bundle of parameter arrays. Order is insertion order and is the
/// canonical index used by tapes, optimizers, and checkpoints.
class ParamStore {
 public:
    int add(const std::string& name, Array a, bool is_weight) {
        if (find(name) >= 0) throw std::runtime_error("duplicate param: " + name);
        names_.push_back(name);
        arrays_.push_back(std::move(a));
        is_weight_.push_back(is_weight);
        return static_cast<int>(names_.size()) - 1;
    }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return static_cast<int>(i);
        return -1;
    }

    int index(const std::string& name) const {
        int i = find(name);
        if (i < 0) throw std::runtime_error("unknown param: " + name);
        return i;
    }

    std::size_t count() const { return arrays_.size(); }
    const std::string& name(int i) const { return names_[i]; }
    Array& array(int i) { return arrays_[i]; }
    const Array& array(int i) const { return arrays_[i]; }
    Array& array(const std::string& n) { return arrays_[index(n)]; }
    const Array& array(const std::string& n) const { return arrays_[index(n)]; }
    bool is_weight(int i) const { return is_weight_[i]; }

    std::vector<Array> zeros_like() const {
        std::vector<Array> out;
        out.reserve(arrays_.size());
        for (const auto& a : arrays_) out.emplace_back(a.shape);
        return out;
    }

    double l2_of_weights() const {
        double s = 0;
        for (std::size_t i = 0; i < arrays_.size(); ++i)
            if (is_weight_[i])
                for (double v : arrays_[i].data) s += v * v;
        return s;
    }

    /// Content hash, used by tests asserting a phase left a store untouched.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](std::uint64_t x) {
            h ^= x;
            h *= 1099511628211ULL;
        };
        for (std::size_t i = 0; i < arrays_.size(); ++i) {
            mix(std::hash<std::string>{}(names_[i]));
            for (double v : arrays_[i].data) {
                std::uint64_t bits;
                static_assert(sizeof(bits) == sizeof(v));
                std::memcpy(&bits, &v, sizeof(bits));
                mix(bits);
            }
        }
        return h;
    }

 private:
    std::vector<std::string> names_;
    std::vector<Array> arrays_;
    std::vector<bool> is_weight_;
};

}  // namespace traced
