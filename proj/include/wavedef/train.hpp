#pragma once

#include <numeric>
#include <vector>

#include "wavedef/adam.hpp"
#include "wavedef/common.hpp"
#include "wavedef/dataset.hpp"
#include "wavedef/models.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/// Rows of an NCHW tensor gathered by index, preserving order.
inline Tensor gather_rows(const Tensor& images, const std::vector<int64_t>& idx) {
    require(images.rank() == 4, "gather_rows: expected NCHW, got " + shape_str(images.shape()));
    const int64_t stride = images.numel() / images.dim(0);
    Tensor out({static_cast<int64_t>(idx.size()), images.dim(1), images.dim(2), images.dim(3)});
    float* op = out.mutable_data();
    for (size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < images.dim(0), "gather_rows: index out of range");
        std::copy(images.data() + idx[i] * stride, images.data() + (idx[i] + 1) * stride,
                  op + static_cast<int64_t>(i) * stride);
    }
    return out;
}

/// Deterministic shuffled index order for one epoch.
inline std::vector<int64_t> epoch_order(int64_t n, Rng& rng) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

/// One supervised cross-entropy epoch over the dataset; returns the mean
/// per-batch loss.
inline double classifier_epoch(Classifier& model, const Tensor& images,
                               const std::vector<int64_t>& labels, int64_t batch_size,
                               AdamState& opt, Rng& rng) {
    require(images.dim(0) == static_cast<int64_t>(labels.size()),
            "classifier_epoch: image/label count mismatch");
    require(batch_size >= 1, "classifier_epoch: batch_size must be >= 1");
    const int64_t n = images.dim(0);
    const std::vector<int64_t> order = epoch_order(n, rng);

    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t at = 0; at < n; at += batch_size) {
        const int64_t take = std::min(batch_size, n - at);
        std::vector<int64_t> idx(order.begin() + at, order.begin() + at + take);
        Tensor bx = gather_rows(images, idx);
        std::vector<int64_t> by(static_cast<size_t>(take));
        for (int64_t i = 0; i < take; ++i)
            by[static_cast<size_t>(i)] = labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];

        Tape t;
        Value loss = cross_entropy(t, model.forward(t, t.constant(bx)), by);
        model.store().clear_grads();
        t.backward(loss);
        std::vector<Tensor> grads = model.store().grads();
        adam_step(model.store().params(), grads, opt);
        loss_sum += t.precise_scalar(loss);
        batches += 1;
    }
    return loss_sum / static_cast<double>(batches);
}

/// Supervised training driver: Adam, shuffled batches, per-epoch mean loss.
inline std::vector<double> train_classifier(Classifier& model, const Dataset& train,
                                            int64_t epochs, int64_t batch_size, float lr,
                                            uint32_t seed) {
    require(epochs >= 1, "train_classifier: epochs must be >= 1");
    AdamState opt = AdamState::init(model.store().params(), lr);
    Rng rng(seed);
    std::vector<double> history;
    history.reserve(static_cast<size_t>(epochs));
    for (int64_t e = 0; e < epochs; ++e)
        history.push_back(
            classifier_epoch(model, train.images, train.labels, batch_size, opt, rng));
    return history;
}

/// Batched no-grad predictions for an NCHW set.
inline std::vector<int64_t> predict_labels(const ForwardFn& forward, const Tensor& images,
                                           int64_t batch_size = 256) {
    const int64_t n = images.dim(0);
    const int64_t stride = images.numel() / n;
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t at = 0; at < n; at += batch_size) {
        const int64_t take = std::min(batch_size, n - at);
        Tensor bx({take, images.dim(1), images.dim(2), images.dim(3)});
        std::copy(images.data() + at * stride, images.data() + (at + take) * stride,
                  bx.mutable_data());
        const Tensor logits = infer_logits(forward, bx);
        std::vector<int64_t> pred = argmax_rows(logits);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

/// Top-1 accuracy (percent) of a forward function on a labeled dataset.
inline double eval_accuracy(const ForwardFn& forward, const Dataset& ds) {
    return accuracy_percent(predict_labels(forward, ds.images), ds.labels);
}

}  // namespace wavedef
