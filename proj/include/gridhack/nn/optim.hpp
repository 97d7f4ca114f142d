#pragma once

#include <cmath>

#include "gridhack/nn/tensor.hpp"

namespace gridhack::nn {

// Bias-corrected Adam with a fixed learning rate; moment buffers live on
// the parameters themselves.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
    long step_count = 0;

    void reset() { step_count = 0; }
};

template <typename S>
void adam_step(ParamStore<S>& params, AdamState& state, double lr) {
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (auto& p : params.all()) {
        if (!p->trainable) continue;
        p->m = S(state.beta1) * p->m + S(1.0 - state.beta1) * p->grad;
        p->v = S(state.beta2) * p->v + S(1.0 - state.beta2) * p->grad.square();
        const ArrayX<S> m_hat = p->m / S(bc1);
        const ArrayX<S> v_hat = p->v / S(bc2);
        p->value -= S(lr) * m_hat / (v_hat.sqrt() + S(state.eps));
    }
}

// Scales every trainable gradient so the global L2 norm is at most
// max_norm; returns the pre-clip norm.
template <typename S>
double clip_global_grad_norm(ParamStore<S>& params, double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("clip: max_norm must be > 0");
    double sq = 0.0;
    for (const auto& p : params.all()) {
        if (!p->trainable) continue;
        sq += static_cast<double>(p->grad.square().sum());
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const S factor = S(max_norm / norm);
        for (auto& p : params.all()) {
            if (p->trainable) p->grad *= factor;
        }
    }
    return norm;
}

// Reset Adam moments alongside the step counter (used at warm starts).
template <typename S>
void reset_optimizer(ParamStore<S>& params, AdamState& state) {
    state.reset();
    for (auto& p : params.all()) {
        p->m.setZero();
        p->v.setZero();
    }
}

}  // namespace gridhack::nn
