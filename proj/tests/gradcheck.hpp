#pragma once

// Central finite-difference oracle for gradient checks. Kept independent of
// the autodiff path: it only calls the forward function and compares leaf
// grads against (f(x+h) - f(x-h)) / 2h.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ewt/tensor.hpp"

namespace ewt::testing {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  // which input/element was worst
};

// f maps the current values of `inputs` to a scalar Tensor. All inputs must
// already have requires_grad set.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> inputs, double step = 1e-4) {
    for (auto& in : inputs) in.zero_grad();
    Tensor<double> loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs) analytic.push_back(in.grad());

    GradCheckResult res;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& vals = inputs[i].data();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            double orig = vals[j];
            vals[j] = orig + step;
            double fp = f().item();
            vals[j] = orig - step;
            double fm = f().item();
            vals[j] = orig;
            double numeric = (fp - fm) / (2 * step);
            double a = analytic[i][j];
            // Absolute floor keeps finite-difference noise on near-zero
            // gradients from dominating the relative error.
            auto rel_of = [&](double num) {
                double denom = std::max({std::abs(a), std::abs(num), 1e-3});
                return std::abs(a - num) / denom;
            };
            double rel = rel_of(numeric);
            if (rel > 1e-5) {
                // Re-measure at a tenth of the step: both truncation error and
                // ReLU-kink crossings shrink with h, while 64-bit roundoff is
                // still far below the tolerance. Keep the better estimate.
                double h = step / 10;
                vals[j] = orig + h;
                double fp2 = f().item();
                vals[j] = orig - h;
                double fm2 = f().item();
                vals[j] = orig;
                rel = std::min(rel, rel_of((fp2 - fm2) / (2 * h)));
            }
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = "input " + std::to_string(i) + " elem " + std::to_string(j) +
                            " analytic=" + std::to_string(a) + " numeric=" + std::to_string(numeric);
            }
        }
    }
    return res;
}

}  // namespace ewt::testing
