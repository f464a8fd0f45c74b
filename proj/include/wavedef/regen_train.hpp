#pragma once

#include <string>
#include <vector>

#include "wavedef/adam.hpp"
#include "wavedef/common.hpp"
#include "wavedef/models.hpp"
#include "wavedef/tensor.hpp"
#include "wavedef/train.hpp"
#include "wavedef/wcsm.hpp"
#include "wavedef/wnr.hpp"

namespace wavedef {

/// Weights of the three regenerator losses; all default to 1.
struct LossWeights {
    float lambda1 = 1.0f;  // cosine similarity (maximized)
    float lambda2 = 1.0f;  // KL divergence between regenerated adv and clean
    float lambda3 = 1.0f;  // spatial L1 consistency

    void validate() const {
        require(lambda1 >= 0.0f && lambda2 >= 0.0f && lambda3 >= 0.0f &&
                    std::isfinite(lambda1) && std::isfinite(lambda2) && std::isfinite(lambda3),
                "LossWeights: weights must be finite and >= 0");
    }
};

struct RegenTrainConfig {
    int64_t epochs = 60;
    int64_t batch_size = 128;
    float lr = 2e-4f;
    uint32_t seed = 0;

    void validate() const {
        require(epochs >= 1, "RegenTrainConfig: epochs must be >= 1");
        require(batch_size >= 1, "RegenTrainConfig: batch_size must be >= 1");
        require(lr > 0.0f, "RegenTrainConfig: lr must be positive");
    }
};

/// Constant-then-decay schedule: full rate for the first third of training,
/// then lr0 * (E - e) / E, which reaches one third of lr0 at e = 2E/3 and
/// zero at e = E.
inline double regen_lr_at(int64_t epoch, int64_t total_epochs, double lr0) {
    require(total_epochs >= 1 && epoch >= 0 && epoch < total_epochs,
            "regen_lr_at: epoch out of range");
    if (3 * epoch < total_epochs) return lr0;
    return lr0 * static_cast<double>(total_epochs - epoch) / static_cast<double>(total_epochs);
}

/// The three loss terms and their weighted combination as tape nodes.
struct RegenLossNodes {
    Value l_cs, l_kl, l_sc, total;
};

/**
 * @brief Builds the regenerator training loss on an existing tape.
 *
 * l_cs: batch-mean cosine similarity between the surrogate's logits on the
 * regenerated clean batch and on the original clean batch. l_kl: batch-mean
 * KL between the surrogate's soft predictions on the regenerated adversarial
 * and regenerated clean batches. l_sc: L1 pull of both regenerated batches
 * toward the original clean pixels. total = -w1*l_cs + w2*l_kl + w3*l_sc, so
 * minimizing the total maximizes prediction alignment.
 */
inline RegenLossNodes regen_loss_nodes(Tape& t, Value regen_clean, Value regen_adv,
                                       const Tensor& original_clean, const ForwardFn& surrogate,
                                       const LossWeights& w) {
    w.validate();
    const Tensor& rc = t.value(regen_clean);
    require(rc.shape() == original_clean.shape() && rc.shape() == t.value(regen_adv).shape(),
            "regen_loss_nodes: clean/adversarial/original batches must share one shape");

    Value clean_const = t.constant(original_clean);
    Value logits_regen_clean = surrogate(t, regen_clean);
    Value logits_regen_adv = surrogate(t, regen_adv);
    Value logits_orig = surrogate(t, clean_const);

    RegenLossNodes n;
    n.l_cs = mean_all(t, cosine_rows(t, logits_regen_clean, logits_orig));
    n.l_kl = kl_between_logits(t, logits_regen_adv, logits_regen_clean);
    n.l_sc = add(t, l1_distance(t, regen_clean, clean_const),
                 l1_distance(t, regen_adv, clean_const));
    n.total = add(t, affine(t, n.l_cs, -w.lambda1, 0.0f),
                  add(t, affine(t, n.l_kl, w.lambda2, 0.0f), affine(t, n.l_sc, w.lambda3, 0.0f)));
    return n;
}

/// Scalar loss values computed outside any training step.
struct RegenLosses {
    double l_cs = 0.0, l_kl = 0.0, l_sc = 0.0, total = 0.0;
};

/// Evaluates the loss terms for given image batches (no training).
inline RegenLosses regen_losses(const Tensor& regenerated_clean, const Tensor& regenerated_adv,
                                const Tensor& original_clean, const ForwardFn& surrogate,
                                const LossWeights& w = {}) {
    Tape t;
    RegenLossNodes n = regen_loss_nodes(t, t.constant(regenerated_clean),
                                        t.constant(regenerated_adv), original_clean, surrogate, w);
    RegenLosses out;
    out.l_cs = t.precise_scalar(n.l_cs);
    out.l_kl = t.precise_scalar(n.l_kl);
    out.l_sc = t.precise_scalar(n.l_sc);
    out.total = t.precise_scalar(n.total);
    require_runtime(std::isfinite(out.total), "regen_losses: non-finite loss");
    return out;
}

/// Per-epoch training record, mirroring the emitted CSV columns.
struct RegenEpochStats {
    int64_t epoch = 0;
    double l_cs = 0.0, l_kl = 0.0, l_sc = 0.0, total = 0.0, lr = 0.0;
};

/// CSV emission: epoch, L_cs, L_kl, L_sc, total, lr.
inline std::string regen_history_csv(const std::vector<RegenEpochStats>& history) {
    std::string out = "epoch,L_cs,L_kl,L_sc,total,lr\n";
    for (const RegenEpochStats& s : history)
        out += std::to_string(s.epoch) + "," + fmt_double(s.l_cs) + "," + fmt_double(s.l_kl) +
               "," + fmt_double(s.l_sc) + "," + fmt_double(s.total) + "," + fmt_double(s.lr) +
               "\n";
    return out;
}

/**
 * @brief Trains the regenerator against a frozen surrogate.
 *
 * The retained synthetic set and its precomputed adversarial counterpart are
 * both filtered through the noise remover at the selected k before training;
 * the regenerator learns to map filtered images back toward the originals
 * while aligning the surrogate's predictions. The surrogate and the noise
 * remover are never modified.
 */
inline std::vector<RegenEpochStats> train_regenerator(Regenerator& regen,
                                                      const ForwardFn& surrogate,
                                                      const Tensor& s_d, const Tensor& s_da,
                                                      const WnrConfig& wnr, const LossWeights& w,
                                                      const RegenTrainConfig& cfg) {
    cfg.validate();
    w.validate();
    require(s_d.rank() == 4 && s_d.shape() == s_da.shape(),
            "train_regenerator: S_d and S_da must be aligned NCHW batches");

    // The noise remover runs once up front; its output is what R_n sees.
    const Tensor filtered_clean = wnr.apply_batch(s_d);
    const Tensor filtered_adv = wnr.apply_batch(s_da);

    AdamState opt = AdamState::init(regen.store().params(), cfg.lr);
    Rng rng(cfg.seed);
    const int64_t n = s_d.dim(0);
    std::vector<RegenEpochStats> history;
    history.reserve(static_cast<size_t>(cfg.epochs));

    for (int64_t e = 0; e < cfg.epochs; ++e) {
        opt.lr = static_cast<float>(regen_lr_at(e, cfg.epochs, cfg.lr));
        const std::vector<int64_t> order = epoch_order(n, rng);
        RegenEpochStats stats;
        stats.epoch = e;
        stats.lr = opt.lr;
        int64_t batches = 0;

        for (int64_t at = 0; at < n; at += cfg.batch_size) {
            const int64_t take = std::min(cfg.batch_size, n - at);
            const std::vector<int64_t> idx(order.begin() + at, order.begin() + at + take);
            Tensor bc = gather_rows(filtered_clean, idx);
            Tensor ba = gather_rows(filtered_adv, idx);
            Tensor borig = gather_rows(s_d, idx);

            Tape t;
            Value rc = regen.forward(t, t.constant(bc));
            Value ra = regen.forward(t, t.constant(ba));
            RegenLossNodes nodes = regen_loss_nodes(t, rc, ra, borig, surrogate, w);
            regen.store().clear_grads();
            t.backward(nodes.total);
            std::vector<Tensor> grads = regen.store().grads();
            adam_step(regen.store().params(), grads, opt);

            stats.l_cs += t.precise_scalar(nodes.l_cs);
            stats.l_kl += t.precise_scalar(nodes.l_kl);
            stats.l_sc += t.precise_scalar(nodes.l_sc);
            stats.total += t.precise_scalar(nodes.total);
            batches += 1;
        }
        stats.l_cs /= static_cast<double>(batches);
        stats.l_kl /= static_cast<double>(batches);
        stats.l_sc /= static_cast<double>(batches);
        stats.total /= static_cast<double>(batches);
        history.push_back(stats);
    }
    return history;
}

}  // namespace wavedef
