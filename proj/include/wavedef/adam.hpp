#pragma once

#include "wavedef/common.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/**
 * @brief Adam optimizer state: moments plus hyperparameters.
 *
 * Moment buffers are positionally aligned with the parameter list they were
 * initialized from; step_count increases by exactly 1 per adam_step.
 */
struct AdamState {
    int64_t step_count = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    float lr = 2e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    static AdamState init(const std::vector<Tensor>& params, float lr, float beta1 = 0.9f,
                          float beta2 = 0.999f, float eps = 1e-8f) {
        require(lr > 0.0f, "AdamState: lr must be positive");
        AdamState s;
        s.lr = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.eps = eps;
        s.first_moment.reserve(params.size());
        s.second_moment.reserve(params.size());
        for (const Tensor& p : params) {
            s.first_moment.push_back(Tensor::zeros(p.shape()));
            s.second_moment.push_back(Tensor::zeros(p.shape()));
        }
        return s;
    }
};

/// Standard Adam update with bias correction; params updated in place
/// (copy-on-write keeps tensors already recorded on a tape intact).
inline void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                      AdamState& state) {
    require(params.size() == grads.size() && params.size() == state.first_moment.size(),
            "adam_step: params/grads/state lengths disagree");
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), t);
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), t);

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const Tensor& g = grads[i];
        require(p.shape() == g.shape(), "adam_step: param/grad shape mismatch at index " +
                                            std::to_string(i) + ": " + shape_str(p.shape()) +
                                            " vs " + shape_str(g.shape()));
        float* m = state.first_moment[i].mutable_data();
        float* v = state.second_moment[i].mutable_data();
        float* pd = p.mutable_data();
        const float* gd = g.data();
        for (int64_t j = 0; j < p.numel(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * gd[j];
            v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * gd[j] * gd[j];
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            pd[j] -= static_cast<float>(state.lr * mh / (std::sqrt(vh) + state.eps));
        }
        require_finite(pd, p.numel(), "adam_step");
    }
}

}  // namespace wavedef
