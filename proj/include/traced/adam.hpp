#pragma once

#include <cmath>
#include <vector>

#include "traced/param_store.hpp"

namespace traced {

/// Constant-learning-rate Adam. The L2 coefficient is added to weight
/// gradients (not bias gradients) before the moment update.
class Adam {
 public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(const ParamStore& ps) {
        m_ = ps.zeros_like();
        v_ = ps.zeros_like();
        t_ = 0;
    }

    void step(ParamStore& ps, const std::vector<Array>& grads, double lr, double l2 = 0.0) {
        if (m_.empty()) init(ps);
        ++t_;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < ps.count(); ++i) {
            Array& w = ps.array(static_cast<int>(i));
            require_same_shape(w, grads[i], "Adam::step");
            bool decay = ps.is_weight(static_cast<int>(i)) && l2 != 0.0;
            for (std::size_t j = 0; j < w.size(); ++j) {
                double g = grads[i].at(j);
                if (decay) g += 2.0 * l2 * w.at(j);
                double& m = m_[i].at(j);
                double& v = v_[i].at(j);
                m = beta1 * m + (1.0 - beta1) * g;
                v = beta2 * v + (1.0 - beta2) * g * g;
                w.at(j) -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
            }
        }
    }

    long iterations() const { return t_; }

    std::vector<Array>& first_moments() { return m_; }
    std::vector<Array>& second_moments() { return v_; }
    void restore(std::vector<Array> m, std::vector<Array> v, long t) {
        m_ = std::move(m);
        v_ = std::move(v);
        t_ = t;
    }

 private:
    std::vector<Array> m_;
    std::vector<Array> v_;
    long t_ = 0;
};

/// Plain SGD, selectable behind config.
inline void sgd_step(ParamStore& ps, const std::vector<Array>& grads, double lr, double l2 = 0.0) {
    for (std::size_t i = 0; i < ps.count(); ++i) {
        Array& w = ps.array(static_cast<int>(i));
        bool decay = ps.is_weight(static_cast<int>(i)) && l2 != 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            double g = grads[i].at(j);
            if (decay) g += 2.0 * l2 * w.at(j);
            w.at(j) -= lr * g;
        }
    }
}

}  // namespace traced
