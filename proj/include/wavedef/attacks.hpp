#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "wavedef/common.hpp"
#include "wavedef/models.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/**
 * @brief L-infinity attack parameters.
 *
 * Pixel-unit budget: epsilon bounds the max-abs perturbation, step_size the
 * per-iteration move. fgsm is the single-step special case; bim iterates from
 * the clean image; pgd adds a uniform random start inside the ball.
 */
struct AttackConfig {
    std::string kind = "pgd";  // fgsm | bim | pgd
    float epsilon = 8.0f / 255.0f;
    float step_size = 2.0f / 255.0f;
    int64_t iterations = 20;
    bool random_start = true;  // pgd convention; fgsm/bim never restart
    uint32_t seed = 0;

    void validate() const {
        require(kind == "fgsm" || kind == "bim" || kind == "pgd",
                "AttackConfig: unknown kind '" + kind + "' (expected fgsm, bim, or pgd)");
        require(epsilon >= 0.0f, "AttackConfig: epsilon must be >= 0");
        require(iterations >= 1, "AttackConfig: iterations must be >= 1");
        if (kind != "fgsm")
            require(step_size > 0.0f, "AttackConfig: step_size must be > 0 for iterative kinds");
    }
};

/// Canonical parameterization per kind at a given budget: fgsm takes one
/// epsilon-sized step; bim spreads the budget as epsilon/iterations; pgd uses
/// a fixed 2/255 step with a random start.
inline AttackConfig attack_preset(const std::string& kind, float epsilon = 8.0f / 255.0f,
                                  int64_t iterations = 20) {
    AttackConfig cfg;
    cfg.kind = kind;
    cfg.epsilon = epsilon;
    cfg.iterations = kind == "fgsm" ? 1 : iterations;
    cfg.random_start = kind == "pgd";
    if (kind == "fgsm")
        cfg.step_size = epsilon;
    else if (kind == "bim")
        cfg.step_size = epsilon / static_cast<float>(cfg.iterations);
    else
        cfg.step_size = 2.0f / 255.0f;
    cfg.validate();
    return cfg;
}

namespace detail {

/// One sign-gradient ascent step on cross-entropy, in place over a chunk.
inline void attack_step(const ForwardFn& model, float* adv, const float* clean,
                        const Shape& chunk_shape, const std::vector<int64_t>& labels,
                        float step, float eps) {
    Tensor x(chunk_shape);
    const int64_t numel = x.numel();
    std::copy(adv, adv + numel, x.mutable_data());
    x.set_requires_grad(true);

    Tape t;
    Value xin = t.leaf(x);
    Value loss = cross_entropy(t, model(t, xin), labels);
    GradientMap grads = t.backward(loss);
    const Tensor& g = grads.at(xin);

    for (int64_t i = 0; i < numel; ++i) {
        const float s = g.flat(i) > 0.0f ? 1.0f : (g.flat(i) < 0.0f ? -1.0f : 0.0f);
        float v = adv[i] + step * s;
        v = std::min(std::max(v, clean[i] - eps), clean[i] + eps);  // epsilon-ball projection
        adv[i] = std::min(std::max(v, 0.0f), 1.0f);                 // pixel-domain clamp
    }
}

}  // namespace detail

/**
 * @brief Crafts an adversarial batch against a differentiable model.
 *
 * Untargeted: ascends cross-entropy on the given labels with sign-gradient
 * steps, projecting onto the epsilon-ball around the clean batch and the
 * [0,1] pixel domain after every step. Deterministic given cfg.seed.
 */
inline Tensor craft(const ForwardFn& model, const Tensor& x, const std::vector<int64_t>& labels,
                    const AttackConfig& cfg) {
    cfg.validate();
    require(x.rank() == 4, "craft: expected NCHW batch, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0);
    require(static_cast<int64_t>(labels.size()) == n,
            "craft: label count " + std::to_string(labels.size()) + " != batch " +
                std::to_string(n));
    for (int64_t i = 0; i < x.numel(); ++i)
        require(x.flat(i) >= 0.0f && x.flat(i) <= 1.0f, "craft: clean pixels must lie in [0,1]");

    Tensor adv = x;
    float* a = adv.mutable_data();
    const float* c = x.data();

    if (cfg.kind == "pgd" && cfg.random_start) {
        Rng rng(cfg.seed);
        std::uniform_real_distribution<float> u(-cfg.epsilon, cfg.epsilon);
        for (int64_t i = 0; i < adv.numel(); ++i)
            a[i] = std::min(std::max(c[i] + u(rng), 0.0f), 1.0f);
    }

    const int64_t iters = cfg.kind == "fgsm" ? 1 : cfg.iterations;
    const float step = cfg.kind == "fgsm" ? cfg.epsilon : cfg.step_size;
    const int64_t stride = x.numel() / n;
    constexpr int64_t kChunk = 32;  // bounds the tape footprint per backward pass

    for (int64_t it = 0; it < iters; ++it) {
        for (int64_t at = 0; at < n; at += kChunk) {
            const int64_t take = std::min(kChunk, n - at);
            const std::vector<int64_t> ls(labels.begin() + at, labels.begin() + at + take);
            detail::attack_step(model, a + at * stride, c + at * stride,
                                {take, x.dim(1), x.dim(2), x.dim(3)}, ls, step, cfg.epsilon);
        }
    }
    return adv;
}

/// Exhaustive budget check: max-abs perturbation within epsilon (+tol) and
/// every pixel in [0,1]. Used by crafting tests and re-checked at evaluation.
inline void verify_attack_budget(const Tensor& clean, const Tensor& adv, float epsilon,
                                 float tol = 1e-7f) {
    require(clean.shape() == adv.shape(), "verify_attack_budget: shape mismatch");
    for (int64_t i = 0; i < clean.numel(); ++i) {
        const float d = std::abs(adv.flat(i) - clean.flat(i));
        require_runtime(d <= epsilon + tol,
                        "attack budget violated: |delta| = " + std::to_string(d) + " > epsilon " +
                            std::to_string(epsilon));
        require_runtime(adv.flat(i) >= 0.0f && adv.flat(i) <= 1.0f,
                        "attack budget violated: pixel outside [0,1]");
    }
}

}  // namespace wavedef
