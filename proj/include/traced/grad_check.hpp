#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "traced/param_store.hpp"
#include "traced/tape.hpp"

namespace traced {

/// Central-difference gradient check. `loss` must evaluate the scalar loss
/// from the current contents of `ps`; `analytic` holds d loss / d param.
/// Returns the max relative error over all coordinates.
inline double gradient_check(ParamStore& ps,
                             const std::function<double()>& loss,
                             const std::vector<Array>& analytic,
                             double eps = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < ps.count(); ++i) {
        Array& w = ps.array(static_cast<int>(i));
        for (std::size_t j = 0; j < w.size(); ++j) {
            double saved = w.at(j);
            w.at(j) = saved + eps;
            double up = loss();
            w.at(j) = saved - eps;
            double down = loss();
            w.at(j) = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NonFiniteLoss("gradient_check: perturbed loss not finite");
            double numeric = (up - down) / (2.0 * eps);
            double a = analytic[i].at(j);
            double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

/// Convenience: builds the tape loss once for the analytic gradient, then
/// re-evaluates it plainly at perturbed parameters.
inline double gradient_check(ParamStore& ps,
                             const std::function<Expr(Tape&)>& build,
                             double eps = 1e-5) {
    Tape tape(ps);
    Expr loss = build(tape);
    std::vector<Array> analytic = tape.backward(loss.id);
    auto eval = [&]() {
        Tape t2(ps);
        return build(t2).value();
    };
    return gradient_check(ps, eval, analytic, eps);
}

}  // namespace traced
