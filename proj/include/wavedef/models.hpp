#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wavedef/common.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/// Differentiable forward pass: batch input node -> logits/image node.
using ForwardFn = std::function<Value(Tape&, Value)>;

namespace detail {

/// Kaiming-style normal initialization for a conv/linear weight.
inline Tensor he_normal(Shape shape, int64_t fan_in, Rng& rng) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0f / static_cast<float>(fan_in)));
}

}  // namespace detail

/// Named learnable tensors plus the bookkeeping shared by every model here.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        t.set_requires_grad(true);
        names_.push_back(name);
        params_.push_back(std::move(t));
        return params_.back();
    }

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<std::string>& names() const { return names_; }

    const Tensor& by_name(const std::string& name) const {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return params_[i];
        throw std::invalid_argument("ParamStore: no parameter named '" + name + "'");
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const Tensor& p : params_) n += p.numel();
        return n;
    }

    /// Gradients of all parameters, in parameter order (after a backward pass).
    std::vector<Tensor> grads() const {
        std::vector<Tensor> g;
        g.reserve(params_.size());
        for (const Tensor& p : params_) g.push_back(p.grad());
        return g;
    }

    void clear_grads() {
        for (Tensor& p : params_) p.clear_grad();
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
};

/**
 * @brief Architecture selector for the desk-scale classifier family.
 *
 * cnn_half uses exactly half of cnn_small's channel width at every layer;
 * cnn_residual adds two residual blocks at matched downsampling points, giving
 * the highest capacity of the three.
 */
struct ClassifierSpec {
    std::string arch = "cnn_small";  // cnn_small | cnn_half | cnn_residual
    int64_t num_classes = 10;
    Shape input = {3, 32, 32};
    int64_t width = 16;  // base channel width of cnn_small

    int64_t effective_width() const { return arch == "cnn_half" ? width / 2 : width; }
};

/**
 * @brief Small convolutional classifier with deterministic seeded init.
 *
 * Three conv/pool stages then two linear layers; input spatial dims must be
 * divisible by 8. Parameters are copy-on-write tensors: recording them on a
 * tape and updating them through an optimizer never aliases.
 */
class Classifier {
public:
    Classifier(ClassifierSpec spec, uint32_t seed) : spec_(std::move(spec)) {
        require(spec_.arch == "cnn_small" || spec_.arch == "cnn_half" ||
                    spec_.arch == "cnn_residual",
                "Classifier: unknown arch '" + spec_.arch + "'");
        require(spec_.input.size() == 3, "Classifier: input must be C x H x W");
        require(spec_.num_classes >= 2, "Classifier: need at least 2 classes");
        const int64_t w = spec_.effective_width();
        require(w >= 1, "Classifier: width too small for arch " + spec_.arch);
        const int64_t C = spec_.input[0], H = spec_.input[1], W = spec_.input[2];
        require(H % 8 == 0 && W % 8 == 0,
                "Classifier: input dims must be divisible by 8, got " + shape_str(spec_.input));

        Rng rng(seed);
        auto conv = [&](const std::string& name, int64_t out_c, int64_t in_c) {
            store_.add(name + ".w", detail::he_normal({out_c, in_c, 3, 3}, in_c * 9, rng));
            store_.add(name + ".b", Tensor::zeros({out_c}));
        };
        conv("conv1", w, C);
        if (spec_.arch == "cnn_residual") {
            conv("res1.a", w, w);
            conv("res1.b", w, w);
        }
        conv("conv2", 2 * w, w);
        if (spec_.arch == "cnn_residual") {
            conv("res2.a", 2 * w, 2 * w);
            conv("res2.b", 2 * w, 2 * w);
        }
        conv("conv3", 4 * w, 2 * w);
        const int64_t flat = 4 * w * (H / 8) * (W / 8);
        store_.add("fc1.w", detail::he_normal({4 * w, flat}, flat, rng));
        store_.add("fc1.b", Tensor::zeros({4 * w}));
        // Small final-layer init keeps initial logits near zero, so an
        // untrained net predicts near-uniform probabilities on any input.
        store_.add("fc2.w", Tensor::randn({spec_.num_classes, 4 * w}, rng, 0.01f));
        store_.add("fc2.b", Tensor::zeros({spec_.num_classes}));
    }

    /// NCHW batch node -> logits node of shape (N, num_classes).
    Value forward(Tape& t, Value x) const {
        auto conv_block = [&](Value in, const std::string& name) {
            Value y = conv2d(t, in, t.leaf(store_.by_name(name + ".w")), 1, 1);
            return bias_add_channels(t, y, t.leaf(store_.by_name(name + ".b")));
        };
        auto res_block = [&](Value in, const std::string& name) {
            Value y = relu(t, conv_block(in, name + ".a"));
            return relu(t, add(t, in, conv_block(y, name + ".b")));
        };
        Value h = max_pool2d(t, relu(t, conv_block(x, "conv1")), 2, 2);
        if (spec_.arch == "cnn_residual") h = res_block(h, "res1");
        h = max_pool2d(t, relu(t, conv_block(h, "conv2")), 2, 2);
        if (spec_.arch == "cnn_residual") h = res_block(h, "res2");
        h = max_pool2d(t, relu(t, conv_block(h, "conv3")), 2, 2);
        const Tensor& ht = t.value(h);
        h = reshape(t, h, {ht.dim(0), ht.numel() / ht.dim(0)});
        h = relu(t, linear(t, h, t.leaf(store_.by_name("fc1.w")), t.leaf(store_.by_name("fc1.b"))));
        return linear(t, h, t.leaf(store_.by_name("fc2.w")), t.leaf(store_.by_name("fc2.b")));
    }

    ForwardFn forward_fn() const {
        return [this](Tape& t, Value x) { return forward(t, x); };
    }

    const ClassifierSpec& spec() const { return spec_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    /// Canonical identity string stored in checkpoints and verified on load.
    std::string checkpoint_tag() const {
        return "classifier:" + spec_.arch + ":classes=" + std::to_string(spec_.num_classes) +
               ":input=" + shape_str(spec_.input) + ":width=" + std::to_string(spec_.width);
    }

private:
    ClassifierSpec spec_;
    ParamStore store_;
};

/**
 * @brief U-Net regenerator shape: five stride-2 encoder stages and five
 * mirrored decoder stages with skip concatenation.
 *
 * The default width reproduces encoder channels [64,128,256,512,512] and
 * decoder output channels [1024,512,256,128,out]; smaller widths scale every
 * stage proportionally.
 */
struct RegeneratorSpec {
    int depth = 5;
    int64_t base_width = 64;
    int64_t in_channels = 3;
    int64_t out_channels = 3;
    float leaky_slope = 0.2f;
    int64_t kernel = 4, stride = 2, padding = 1;

    std::vector<int64_t> enc_channels() const {
        const int64_t w = base_width;
        return {w, 2 * w, 4 * w, 8 * w, 8 * w};
    }
    std::vector<int64_t> dec_channels() const {
        const int64_t w = base_width;
        return {16 * w, 8 * w, 4 * w, 2 * w, out_channels};
    }
};

/**
 * @brief Image-to-image U-Net with instance normalization and tanh output
 * rescaled to [0, 1].
 *
 * Layer order is activation -> (de)convolution -> norm. Convolutions feeding
 * a normalization layer carry no bias (the norm would cancel it and its
 * gradient would be exactly zero); the 1x1 bottleneck and the output layer
 * skip normalization and keep their biases.
 */
class Regenerator {
public:
    Regenerator(RegeneratorSpec spec, uint32_t seed) : spec_(std::move(spec)) {
        require(spec_.depth == 5, "Regenerator: depth is fixed at 5");
        require(spec_.base_width >= 1 && spec_.in_channels >= 1 && spec_.out_channels >= 1,
                "Regenerator: degenerate spec");
        const std::vector<int64_t> enc = spec_.enc_channels();
        const std::vector<int64_t> dec = spec_.dec_channels();
        Rng rng(seed);
        // DCGAN-style init: N(0, 0.02) on every weight.
        auto weight = [&](const std::string& name, Shape shape) {
            store_.add(name, Tensor::randn(std::move(shape), rng, 0.02f));
        };
        const int64_t k = spec_.kernel;
        weight("enc1.w", {enc[0], spec_.in_channels, k, k});
        store_.add("enc1.b", Tensor::zeros({enc[0]}));
        weight("enc2.w", {enc[1], enc[0], k, k});
        weight("enc3.w", {enc[2], enc[1], k, k});
        weight("enc4.w", {enc[3], enc[2], k, k});
        weight("enc5.w", {enc[4], enc[3], k, k});
        store_.add("enc5.b", Tensor::zeros({enc[4]}));
        // Transposed-conv weights are (in, out, k, k); decoder stage i consumes
        // the previous decoder output concatenated with its skip.
        weight("dec1.w", {enc[4], dec[0], k, k});
        weight("dec2.w", {dec[0] + enc[3], dec[1], k, k});
        weight("dec3.w", {dec[1] + enc[2], dec[2], k, k});
        weight("dec4.w", {dec[2] + enc[1], dec[3], k, k});
        weight("dec5.w", {dec[3] + enc[0], dec[4], k, k});
        store_.add("dec5.b", Tensor::zeros({dec[4]}));
    }

    /// NCHW batch in [0,1] -> NCHW batch in [0,1]; spatial dims must be
    /// divisible by 2^depth = 32.
    Value forward(Tape& t, Value x) const {
        const Tensor& xt = t.value(x);
        require(xt.rank() == 4 && xt.dim(1) == spec_.in_channels,
                "Regenerator::forward: expected N x " + std::to_string(spec_.in_channels) +
                    " x H x W, got " + shape_str(xt.shape()));
        require(xt.dim(2) % 32 == 0 && xt.dim(3) % 32 == 0,
                "Regenerator::forward: spatial dims must be divisible by 32, got " +
                    shape_str(xt.shape()));
        const int64_t s = spec_.stride, p = spec_.padding;
        auto conv_w = [&](Value in, const std::string& name) {
            return conv2d(t, in, t.leaf(store_.by_name(name)), s, p);
        };
        auto deconv_w = [&](Value in, const std::string& name) {
            return conv_transpose2d(t, in, t.leaf(store_.by_name(name)), s, p);
        };
        Value e1 = bias_add_channels(t, conv_w(x, "enc1.w"), t.leaf(store_.by_name("enc1.b")));
        Value e2 = instance_norm2d(t, conv_w(leaky_relu(t, e1, spec_.leaky_slope), "enc2.w"));
        Value e3 = instance_norm2d(t, conv_w(leaky_relu(t, e2, spec_.leaky_slope), "enc3.w"));
        Value e4 = instance_norm2d(t, conv_w(leaky_relu(t, e3, spec_.leaky_slope), "enc4.w"));
        Value e5 = bias_add_channels(t, conv_w(leaky_relu(t, e4, spec_.leaky_slope), "enc5.w"),
                                     t.leaf(store_.by_name("enc5.b")));
        Value d1 = instance_norm2d(t, deconv_w(relu(t, e5), "dec1.w"));
        Value d2 = instance_norm2d(t, deconv_w(relu(t, concat_channels(t, d1, e4)), "dec2.w"));
        Value d3 = instance_norm2d(t, deconv_w(relu(t, concat_channels(t, d2, e3)), "dec3.w"));
        Value d4 = instance_norm2d(t, deconv_w(relu(t, concat_channels(t, d3, e2)), "dec4.w"));
        Value d5 = bias_add_channels(t, deconv_w(relu(t, concat_channels(t, d4, e1)), "dec5.w"),
                                     t.leaf(store_.by_name("dec5.b")));
        return affine(t, tanh(t, d5), 0.5f, 0.5f);
    }

    ForwardFn forward_fn() const {
        return [this](Tape& t, Value x) { return forward(t, x); };
    }

    const RegeneratorSpec& spec() const { return spec_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    std::string checkpoint_tag() const {
        return "regenerator:w=" + std::to_string(spec_.base_width) +
               ":in=" + std::to_string(spec_.in_channels) +
               ":out=" + std::to_string(spec_.out_channels);
    }

private:
    RegeneratorSpec spec_;
    ParamStore store_;
};

/// Non-differentiable inference: logits for a batch with gradients disabled.
inline Tensor infer_logits(const ForwardFn& forward, const Tensor& batch) {
    Tape t;
    Value out = forward(t, t.constant(batch));
    return t.value(out);
}

/// Row-wise argmax of a logits/probability matrix.
inline std::vector<int64_t> argmax_rows(const Tensor& m) {
    require(m.rank() == 2, "argmax_rows: expected a matrix, got " + shape_str(m.shape()));
    std::vector<int64_t> out(static_cast<size_t>(m.dim(0)));
    for (int64_t r = 0; r < m.dim(0); ++r) {
        const float* row = m.data() + r * m.dim(1);
        int64_t best = 0;
        for (int64_t c = 1; c < m.dim(1); ++c)
            if (row[c] > row[best]) best = c;
        out[static_cast<size_t>(r)] = best;
    }
    return out;
}

/// Fraction of predictions equal to labels, as a percentage in [0, 100].
inline double accuracy_percent(const std::vector<int64_t>& pred,
                               const std::vector<int64_t>& labels) {
    require(pred.size() == labels.size() && !pred.empty(),
            "accuracy_percent: size mismatch or empty");
    int64_t hit = 0;
    for (size_t i = 0; i < pred.size(); ++i) hit += (pred[i] == labels[i]) ? 1 : 0;
    return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace wavedef
