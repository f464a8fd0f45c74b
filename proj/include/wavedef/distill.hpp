#pragma once

#include <cmath>
#include <vector>

#include "wavedef/blackbox.hpp"
#include "wavedef/common.hpp"
#include "wavedef/train.hpp"

namespace wavedef {

/// Queries the black box in bounded slices so in-process tapes stay small.
inline Tensor query_probs_chunked(const BlackBoxHandle& handle, const Tensor& images,
                                  int64_t chunk = 64) {
    require(images.rank() == 4, "query_probs_chunked: expected NCHW");
    const int64_t n = images.dim(0);
    const int64_t stride = images.numel() / n;
    Tensor probs;
    for (int64_t at = 0; at < n; at += chunk) {
        const int64_t take = std::min(chunk, n - at);
        Tensor part({take, images.dim(1), images.dim(2), images.dim(3)});
        std::copy(images.data() + at * stride, images.data() + (at + take) * stride,
                  part.mutable_data());
        Tensor p = handle.query(part);
        if (at == 0) probs = Tensor({n, p.dim(1)});
        std::copy(p.data(), p.data() + p.numel(), probs.mutable_data() + at * p.dim(1));
    }
    return probs;
}

/// (1/N) sum_n sum_c p log p with the 0*log(0) = 0 convention: the constant
/// part of the batch-mean KL(p || q) when p is fixed.
inline double kl_constant_term(const Tensor& probs) {
    require(probs.rank() == 2, "kl_constant_term: expected (N, C) probabilities");
    double acc = 0.0;
    for (int64_t i = 0; i < probs.numel(); ++i) {
        const double p = probs.flat(i);
        if (p > 0.0) acc += p * std::log(p);
    }
    return acc / static_cast<double>(probs.dim(0));
}

/// Soft cross-entropy node: -(1/N) sum_n sum_c ref[n,c] * log_softmax(logits).
/// Adding kl_constant_term(ref) to its value gives batch-mean KL(ref || q),
/// and both share the same gradient in the logits.
inline Value soft_cross_entropy(Tape& t, Value logits, const Tensor& ref_probs) {
    const Tensor& L = t.value(logits);
    require(L.shape() == ref_probs.shape(),
            "soft_cross_entropy: logits " + shape_str(L.shape()) + " vs reference " +
                shape_str(ref_probs.shape()));
    const float inv_n = -1.0f / static_cast<float>(L.dim(0));
    Value logq = log_softmax(t, logits);
    Value weighted = mul(t, t.constant(ref_probs), logq);
    return affine(t, sum_all(t, weighted), inv_n, 0.0f);
}

struct DistillConfig {
    int64_t epochs = 30;
    int64_t batch_size = 64;
    float lr = 1e-3f;
    float confidence_floor = 0.3f;
    uint32_t seed = 0;
};

struct DistillResult {
    Classifier student;
    Tensor retained_images;          // S_d: samples the black box labeled confidently
    Tensor retained_probs;           // the black box's soft labels over S_d
    std::vector<double> kl_history;  // per-epoch batch-mean KL(teacher || student)
};

/**
 * @brief Query-based distillation: trains a student to mimic the black box
 * on a synthetic sample stream.
 *
 * The black box is queried exactly once per synthetic sample; samples whose
 * max teacher probability falls below the confidence floor are dropped, and
 * the student minimizes KL(teacher || softmax(student)) over the retained
 * set with Adam.
 */
inline DistillResult distill_surrogate(const BlackBoxHandle& teacher,
                                       const ClassifierSpec& student_spec,
                                       const Tensor& synthetic, const DistillConfig& cfg) {
    require(synthetic.rank() == 4 && synthetic.dim(0) >= 1,
            "distill_surrogate: synthetic source must be a nonempty NCHW batch");
    require(cfg.epochs >= 1 && cfg.batch_size >= 1,
            "distill_surrogate: epochs and batch_size must be >= 1");

    // One query per synthetic sample; soft labels reused for every epoch.
    const Tensor teacher_probs = query_probs_chunked(teacher, synthetic);

    std::vector<int64_t> keep;
    for (int64_t i = 0; i < synthetic.dim(0); ++i) {
        float best = 0.0f;
        for (int64_t c = 0; c < teacher_probs.dim(1); ++c)
            best = std::max(best, teacher_probs.at({i, c}));
        if (best >= cfg.confidence_floor) keep.push_back(i);
    }
    require_runtime(!keep.empty(),
                    "distill_surrogate: no synthetic sample met the confidence floor " +
                        std::to_string(cfg.confidence_floor));

    DistillResult res{Classifier(student_spec, cfg.seed), gather_rows(synthetic, keep),
                      Tensor({static_cast<int64_t>(keep.size()), teacher_probs.dim(1)}),
                      {}};
    const int64_t classes = teacher_probs.dim(1);
    for (size_t i = 0; i < keep.size(); ++i)
        std::copy(teacher_probs.data() + keep[i] * classes,
                  teacher_probs.data() + (keep[i] + 1) * classes,
                  res.retained_probs.mutable_data() + static_cast<int64_t>(i) * classes);

    AdamState opt = AdamState::init(res.student.store().params(), cfg.lr);
    Rng rng(cfg.seed + 1);  // distinct stream from the student's init
    const int64_t n = res.retained_images.dim(0);
    for (int64_t e = 0; e < cfg.epochs; ++e) {
        const std::vector<int64_t> order = epoch_order(n, rng);
        double kl_sum = 0.0;
        int64_t batches = 0;
        for (int64_t at = 0; at < n; at += cfg.batch_size) {
            const int64_t take = std::min(cfg.batch_size, n - at);
            const std::vector<int64_t> idx(order.begin() + at, order.begin() + at + take);
            Tensor bx = gather_rows(res.retained_images, idx);
            Tensor bp({take, classes});
            for (int64_t i = 0; i < take; ++i)
                std::copy(res.retained_probs.data() + idx[static_cast<size_t>(i)] * classes,
                          res.retained_probs.data() + (idx[static_cast<size_t>(i)] + 1) * classes,
                          bp.mutable_data() + i * classes);

            Tape t;
            Value ce = soft_cross_entropy(t, res.student.forward(t, t.constant(bx)), bp);
            res.student.store().clear_grads();
            t.backward(ce);
            std::vector<Tensor> grads = res.student.store().grads();
            adam_step(res.student.store().params(), grads, opt);
            kl_sum += t.precise_scalar(ce) + kl_constant_term(bp);
            batches += 1;
        }
        res.kl_history.push_back(kl_sum / static_cast<double>(batches));
    }
    return res;
}

/// Fraction (percent) of samples where two predictors emit the same label.
inline double agreement_percent(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    require(a.size() == b.size() && !a.empty(), "agreement_percent: misaligned label sets");
    int64_t same = 0;
    for (size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
    return 100.0 * static_cast<double>(same) / static_cast<double>(a.size());
}

}  // namespace wavedef
