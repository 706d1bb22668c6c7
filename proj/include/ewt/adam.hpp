#pragma once

#include <cmath>
#include <vector>

#include "ewt/tensor.hpp"

namespace ewt {

// Bias-corrected Adam (Kingma & Ba). One state slot per parameter tensor.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;
};

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, T lr, T beta1 = T(0.9),
               T beta2 = T(0.999), T eps = T(1e-8)) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), T(0));
            state.v[i].assign(params[i].numel(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw DimensionError("adam_step: state/params size mismatch");
    state.step += 1;
    T bc1 = T(1) - std::pow(beta1, T(state.step));
    T bc2 = T(1) - std::pow(beta2, T(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data();
        const auto& g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.size() || g.size() != p.size())
            throw DimensionError("adam_step: gradient/state shape mismatch at slot " + std::to_string(i));
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
            v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
            T mhat = m[j] / bc1;
            T vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace ewt
