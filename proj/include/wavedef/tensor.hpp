#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>

#include "wavedef/common.hpp"

namespace wavedef {

/**
 * @brief Dense row-major float32 tensor with value semantics.
 *
 * Copies are cheap (shared storage, copy-on-write through mutable_data()).
 * A tensor is immutable once it participates in a Tape graph; the optimizer
 * produces fresh tensors instead of mutating shared ones. The optional
 * gradient slot is shared across copies so that parameters held by a model
 * observe gradients filled in by Tape::backward.
 */
class Tensor {
public:
    Tensor() : shape_{0}, data_(std::make_shared<std::vector<float>>()) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<float>>(static_cast<size_t>(wavedef::numel(shape_)),
                                                     0.0f)) {
        require(check_shape(shape_), "Tensor: shape dims must be positive, got " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, float v) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), v);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0f); }

    static Tensor scalar(float v) { return full({1}, v); }

    /// Adopts an existing buffer; rejects NaN/Inf (external data enters here).
    static Tensor from_vector(Shape shape, std::vector<float> v) {
        require(wavedef::numel(shape) == static_cast<int64_t>(v.size()),
                "Tensor::from_vector: shape " + shape_str(shape) + " wants " +
                    std::to_string(wavedef::numel(shape)) + " values, got " +
                    std::to_string(v.size()));
        require_finite(v.data(), static_cast<int64_t>(v.size()), "Tensor::from_vector");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<float>>(std::move(v));
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, float mean = 0.0f) {
        Tensor t(std::move(shape));
        std::normal_distribution<float> d(mean, stddev);
        for (float& x : *t.data_) x = d(rng);
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, float lo, float hi) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<float> d(lo, hi);
        for (float& x : *t.data_) x = d(rng);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_->size()); }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    bool empty() const { return data_->empty(); }

    const float* data() const { return data_->data(); }

    /// Copy-on-write mutable access. Never call on tensors already recorded
    /// on a tape (graph replay must stay bit-identical).
    float* mutable_data() {
        if (data_.use_count() != 1) data_ = std::make_shared<std::vector<float>>(*data_);
        return data_->data();
    }

    float flat(int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    /// Multi-index accessor for tests and small fixtures (row-major).
    float at(std::initializer_list<int64_t> idx) const {
        require(idx.size() == shape_.size(), "Tensor::at: rank mismatch");
        int64_t off = 0, stride = 1;
        const int64_t* p = idx.begin();
        for (int64_t d = static_cast<int64_t>(shape_.size()) - 1; d >= 0; --d) {
            require(p[d] >= 0 && p[d] < shape_[d], "Tensor::at: index out of range");
            off += p[d] * stride;
            stride *= shape_[d];
        }
        return (*data_)[static_cast<size_t>(off)];
    }

    Tensor reshaped(Shape new_shape) const {
        require(wavedef::numel(new_shape) == numel(),
                "Tensor::reshaped: " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                    " changes element count");
        Tensor t = *this;
        t.shape_ = std::move(new_shape);
        return t;
    }

    bool requires_grad() const { return requires_grad_; }

    /// Copy that shares the data buffer but is cut off from gradient
    /// machinery: no requires_grad, no grad slot.
    Tensor detached() const {
        Tensor t = *this;
        t.requires_grad_ = false;
        t.grad_slot_.reset();
        return t;
    }

    Tensor& set_requires_grad(bool enabled) {
        requires_grad_ = enabled;
        if (enabled && !grad_slot_) grad_slot_ = std::make_shared<std::shared_ptr<Tensor>>();
        return *this;
    }

    bool has_grad() const { return grad_slot_ && *grad_slot_; }

    const Tensor& grad() const {
        require_runtime(has_grad(), "Tensor::grad: no gradient has been computed");
        return **grad_slot_;
    }

    void clear_grad() {
        if (grad_slot_) grad_slot_->reset();
    }

private:
    static bool check_shape(const Shape& s) {
        for (int64_t d : s)
            if (d <= 0) return false;
        return true;
    }

    friend class Tape;

    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
    bool requires_grad_ = false;
    std::shared_ptr<std::shared_ptr<Tensor>> grad_slot_;  // shared across copies
};

/// Handle to a node on a Tape.
struct Value {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

class Tape;

/// Gradients returned by Tape::backward, addressable by node handle.
class GradientMap {
public:
    const Tensor& at(Value v) const {
        require(v.valid() && static_cast<size_t>(v.id) < grads_.size(),
                "GradientMap::at: unknown node id");
        require(tracked_[static_cast<size_t>(v.id)],
                "GradientMap::at: node " + std::to_string(v.id) +
                    " is detached (requires_grad was false)");
        return grads_[static_cast<size_t>(v.id)];
    }

private:
    friend class Tape;
    std::vector<Tensor> grads_;
    std::vector<bool> tracked_;
};

/**
 * @brief Eager reverse-mode tape.
 *
 * Ops execute their forward pass immediately and append a node holding the
 * result plus a backward closure. Nodes are created in topological order by
 * construction, so the reverse sweep is a single right-to-left pass with a
 * fixed accumulation order (bit-deterministic). One tape = one graph; build a
 * fresh tape per training step.
 */
class Tape {
public:
    /// Registers an input node. Gradient tracking follows t.requires_grad();
    /// tracked leaves get their tensor's grad slot filled by backward().
    /// Registering the same tracked tensor again returns the existing node,
    /// so a parameter is a single graph node per tape no matter how many
    /// forward passes consume it — its gradient accumulates across all paths.
    Value leaf(const Tensor& t) {
        require(!t.empty(), "Tape::leaf: empty tensor");
        if (t.requires_grad() && t.grad_slot_) {
            auto it = leaf_index_.find(t.grad_slot_.get());
            if (it != leaf_index_.end() && nodes_[it->second].out.data_ == t.data_)
                return Value{static_cast<int32_t>(it->second)};
        }
        Node n;
        n.op = "leaf";
        n.out = t;
        n.requires_grad = t.requires_grad();
        n.leaf_slot = t.grad_slot_;
        nodes_.push_back(std::move(n));
        if (t.requires_grad() && t.grad_slot_)
            leaf_index_[t.grad_slot_.get()] = nodes_.size() - 1;
        return Value{static_cast<int32_t>(nodes_.size() - 1)};
    }

    /// Registers a non-differentiable input (labels, targets, fixed data).
    Value constant(const Tensor& t) {
        Tensor c = t;
        c.requires_grad_ = false;
        c.grad_slot_.reset();
        return leaf(c);
    }

    const Tensor& value(Value v) const { return node(v).out; }
    bool requires_grad(Value v) const { return node(v).requires_grad; }
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

    /// Used by op implementations: record a computed node.
    /// The output buffer is scanned for NaN/Inf here — every op result feeds
    /// some later op, so this one check enforces the finiteness contract.
    /// Scalar reductions pass their 64-bit accumulation as `precise` so the
    /// full-precision loss stays readable (float storage quantizes at ~1e-7
    /// relative, too coarse for finite-difference probes).
    Value push(const char* op, Tensor out, std::vector<Value> inputs,
               std::function<void(Tape&, const Tensor&)> backward_fn,
               double precise = std::numeric_limits<double>::quiet_NaN()) {
        require_finite(out.data(), out.numel(), op);
        Node n;
        n.op = op;
        n.out = std::move(out);
        n.precise = precise;
        n.requires_grad = false;
        for (Value in : inputs) {
            require(in.valid() && in.id < static_cast<int32_t>(nodes_.size()),
                    std::string(op) + ": input from a different or empty tape");
            if (node(in).requires_grad) n.requires_grad = true;
        }
        if (n.requires_grad) n.backward_fn = std::move(backward_fn);
        nodes_.push_back(std::move(n));
        return Value{static_cast<int32_t>(nodes_.size() - 1)};
    }

    /// Full-precision value of a scalar node where the op recorded one
    /// (reductions and scalar arithmetic over them); float value otherwise.
    double precise_scalar(Value v) const {
        const Node& n = node(v);
        require(n.out.numel() == 1, "Tape::precise_scalar: node is not scalar");
        return std::isnan(n.precise) ? static_cast<double>(n.out.flat(0)) : n.precise;
    }

    /// Precise value of an input if it is a scalar carrying one (for ops
    /// that propagate precision through scalar arithmetic).
    double input_precise(Value v) const {
        const Node& n = node(v);
        if (n.out.numel() != 1) return std::numeric_limits<double>::quiet_NaN();
        return n.precise;
    }

    /// Backward-pass accumulation buffer for node v (zero-initialized on
    /// first touch, shaped like the node's output). Closures add into it.
    float* grad_buffer(Value v) {
        Node& n = node(v);
        Tensor& g = grads_[static_cast<size_t>(v.id)];
        if (g.empty()) g = Tensor::zeros(n.out.shape());
        return g.mutable_data();
    }

    /// True when a backward closure should bother accumulating into v.
    bool wants_grad(Value v) const { return node(v).requires_grad; }

    /// Upstream gradient of node v during the backward sweep (may be empty
    /// if no consumer contributed, i.e. v does not influence the loss).
    const Tensor& pending_grad(Value v) const { return grads_[static_cast<size_t>(v.id)]; }

    /**
     * @brief Reverse sweep from a scalar loss node.
     *
     * Returns gradients for every requires_grad node and fills the grad slot
     * of tracked leaf tensors. Asking the map for a detached node throws.
     */
    GradientMap backward(Value loss) {
        require(loss.valid() && loss.id < static_cast<int32_t>(nodes_.size()),
                "Tape::backward: invalid loss node");
        require(node(loss).out.numel() == 1,
                "Tape::backward: loss must be scalar, got shape " +
                    shape_str(node(loss).out.shape()));
        require(node(loss).requires_grad,
                "Tape::backward: loss does not depend on any tracked input");

        grads_.assign(nodes_.size(), Tensor{});
        grads_[static_cast<size_t>(loss.id)] = Tensor::ones({1});

        for (int32_t id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            const Tensor& g = grads_[static_cast<size_t>(id)];
            if (!n.requires_grad || g.empty() || !n.backward_fn) continue;
            n.backward_fn(*this, g);
        }

        GradientMap map;
        map.grads_.resize(nodes_.size());
        map.tracked_.resize(nodes_.size(), false);
        for (size_t id = 0; id < nodes_.size(); ++id) {
            Node& n = nodes_[id];
            if (!n.requires_grad) continue;
            Tensor g = grads_[id].empty() ? Tensor::zeros(n.out.shape()) : std::move(grads_[id]);
            require_finite(g.data(), g.numel(), "backward gradient");
            if (n.leaf_slot) *n.leaf_slot = std::make_shared<Tensor>(g);
            map.grads_[id] = std::move(g);
            map.tracked_[id] = true;
        }
        grads_.clear();
        return map;
    }

private:
    struct Node {
        const char* op;
        Tensor out;
        double precise = std::numeric_limits<double>::quiet_NaN();
        bool requires_grad;
        std::function<void(Tape&, const Tensor&)> backward_fn;
        std::shared_ptr<std::shared_ptr<Tensor>> leaf_slot;
    };

    Node& node(Value v) { return nodes_.at(static_cast<size_t>(v.id)); }
    const Node& node(Value v) const { return nodes_.at(static_cast<size_t>(v.id)); }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::unordered_map<void*, size_t> leaf_index_;  // grad slot -> leaf node
};

// ---------------------------------------------------------------------------
// Convolution plumbing: im2col / col2im over a shared geometry.
//
// "big" is the full-resolution plane (the conv input, or the transposed-conv
// output); "grid" is the strided lattice (the conv output, or the
// transposed-conv input). cols is [C*K*K, gridH*gridW].
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
    int64_t channels, ksize, stride, pad;
    int64_t big_h, big_w;
    int64_t grid_h, grid_w;

    int64_t cols_rows() const { return channels * ksize * ksize; }
    int64_t cols_cols() const { return grid_h * grid_w; }
};

inline void im2col(const ConvGeom& g, const float* big, float* cols) {
    for (int64_t c = 0; c < g.channels; ++c) {
        const float* plane = big + c * g.big_h * g.big_w;
        for (int64_t kh = 0; kh < g.ksize; ++kh) {
            for (int64_t kw = 0; kw < g.ksize; ++kw) {
                float* row = cols + ((c * g.ksize + kh) * g.ksize + kw) * g.cols_cols();
                for (int64_t gh = 0; gh < g.grid_h; ++gh) {
                    const int64_t ih = gh * g.stride - g.pad + kh;
                    float* out = row + gh * g.grid_w;
                    if (ih < 0 || ih >= g.big_h) {
                        std::fill(out, out + g.grid_w, 0.0f);
                        continue;
                    }
                    const float* in_row = plane + ih * g.big_w;
                    for (int64_t gw = 0; gw < g.grid_w; ++gw) {
                        const int64_t iw = gw * g.stride - g.pad + kw;
                        out[gw] = (iw >= 0 && iw < g.big_w) ? in_row[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds cols back onto the big plane.
inline void col2im(const ConvGeom& g, const float* cols, float* big) {
    for (int64_t c = 0; c < g.channels; ++c) {
        float* plane = big + c * g.big_h * g.big_w;
        for (int64_t kh = 0; kh < g.ksize; ++kh) {
            for (int64_t kw = 0; kw < g.ksize; ++kw) {
                const float* row = cols + ((c * g.ksize + kh) * g.ksize + kw) * g.cols_cols();
                for (int64_t gh = 0; gh < g.grid_h; ++gh) {
                    const int64_t ih = gh * g.stride - g.pad + kh;
                    if (ih < 0 || ih >= g.big_h) continue;
                    float* out_row = plane + ih * g.big_w;
                    const float* in = row + gh * g.grid_w;
                    for (int64_t gw = 0; gw < g.grid_w; ++gw) {
                        const int64_t iw = gw * g.stride - g.pad + kw;
                        if (iw >= 0 && iw < g.big_w) out_row[iw] += in[gw];
                    }
                }
            }
        }
    }
}

/// C[M x N] += A[M x K] * B^T, with B stored [N x K] (contiguous dot products).
inline void gemm_bt(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        const float* a = A + m * K;
        for (int64_t n = 0; n < N; ++n) {
            const float* b = B + n * K;
            float acc = 0.0f;
            for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
            C[m * N + n] += acc;
        }
    }
}

/// C[M x N] += A^T * B, with A stored [K x M].
inline void gemm_at(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t k = 0; k < K; ++k) {
        const float* a = A + k * M;
        const float* b = B + k * N;
        for (int64_t m = 0; m < M; ++m) {
            const float am = a[m];
            if (am == 0.0f) continue;
            float* c = C + m * N;
            for (int64_t n = 0; n < N; ++n) c[n] += am * b[n];
        }
    }
}

inline void check_4d(const Tensor& t, const char* op) {
    require(t.rank() == 4, std::string(op) + ": expected NCHW tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Each validates shapes, runs forward eagerly, and records a backward
// closure. Gradient accumulation order is fixed by tape order.
// ---------------------------------------------------------------------------

/// out = conv2d(input NCHW, weight OIKK); no bias (see bias_add_channels).
inline Value conv2d(Tape& t, Value input, Value weight, int64_t stride, int64_t padding) {
    const Tensor& X = t.value(input);
    const Tensor& W = t.value(weight);
    detail::check_4d(X, "conv2d");
    detail::check_4d(W, "conv2d weight");
    require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
    require(W.dim(2) == W.dim(3), "conv2d: only square kernels supported");
    require(X.dim(1) == W.dim(1),
            "conv2d: input channels " + std::to_string(X.dim(1)) + " != weight I " +
                std::to_string(W.dim(1)));
    const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int64_t O = W.dim(0), K = W.dim(2);
    const int64_t OH = (H + 2 * padding - K) / stride + 1;
    const int64_t OW = (Wd + 2 * padding - K) / stride + 1;
    require(OH >= 1 && OW >= 1, "conv2d: kernel does not fit input");

    detail::ConvGeom g{C, K, stride, padding, H, Wd, OH, OW};
    Tensor out({N, O, OH, OW});
    std::vector<float> cols(static_cast<size_t>(g.cols_rows() * g.cols_cols()));
    float* op = out.mutable_data();
    for (int64_t n = 0; n < N; ++n) {
        detail::im2col(g, X.data() + n * C * H * Wd, cols.data());
        gemm_rm(W.data(), cols.data(), op + n * O * OH * OW, O, g.cols_rows(), g.cols_cols(),
                /*accumulate=*/false);
    }

    return t.push("conv2d", std::move(out), {input, weight},
                  [input, weight, X, W, g, N](Tape& tp, const Tensor& gout) {
                      const int64_t O = W.dim(0);
                      const int64_t kk = g.cols_rows(), hw = g.cols_cols();
                      const int64_t in_plane = g.channels * g.big_h * g.big_w;
                      std::vector<float> cols(static_cast<size_t>(kk * hw));
                      std::vector<float> dcols(static_cast<size_t>(kk * hw));
                      float* gx = tp.wants_grad(input) ? tp.grad_buffer(input) : nullptr;
                      float* gw = tp.wants_grad(weight) ? tp.grad_buffer(weight) : nullptr;
                      for (int64_t n = 0; n < N; ++n) {
                          const float* go = gout.data() + n * O * hw;
                          if (gw) {
                              detail::im2col(g, X.data() + n * in_plane, cols.data());
                              detail::gemm_bt(go, cols.data(), gw, O, hw, kk);
                          }
                          if (gx) {
                              std::fill(dcols.begin(), dcols.end(), 0.0f);
                              detail::gemm_at(W.data(), go, dcols.data(), kk, O, hw);
                              detail::col2im(g, dcols.data(), gx + n * in_plane);
                          }
                      }
                  });
}

/// out = conv_transpose2d(input NCHW, weight I-O-K-K); the exact adjoint of a
/// stride-s conv, so output spatial size = (H-1)*stride - 2*padding + K.
inline Value conv_transpose2d(Tape& t, Value input, Value weight, int64_t stride,
                              int64_t padding) {
    const Tensor& X = t.value(input);
    const Tensor& W = t.value(weight);
    detail::check_4d(X, "conv_transpose2d");
    detail::check_4d(W, "conv_transpose2d weight");
    require(stride >= 1 && padding >= 0, "conv_transpose2d: stride must be >= 1 and padding >= 0");
    require(W.dim(2) == W.dim(3), "conv_transpose2d: only square kernels supported");
    require(X.dim(1) == W.dim(0),
            "conv_transpose2d: input channels " + std::to_string(X.dim(1)) +
                " != weight I " + std::to_string(W.dim(0)));
    const int64_t N = X.dim(0), I = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int64_t O = W.dim(1), K = W.dim(2);
    const int64_t OH = (H - 1) * stride - 2 * padding + K;
    const int64_t OW = (Wd - 1) * stride - 2 * padding + K;
    require(OH >= 1 && OW >= 1, "conv_transpose2d: output size would be empty");

    detail::ConvGeom g{O, K, stride, padding, OH, OW, H, Wd};
    const int64_t kk = g.cols_rows(), hw = g.cols_cols();
    Tensor out({N, O, OH, OW});
    std::vector<float> cols(static_cast<size_t>(kk * hw));
    float* op = out.mutable_data();
    std::fill(op, op + out.numel(), 0.0f);
    for (int64_t n = 0; n < N; ++n) {
        std::fill(cols.begin(), cols.end(), 0.0f);
        // cols[O*K*K, H*W] = Wmat^T [I, O*K*K]^T * X[n] [I, H*W]
        detail::gemm_at(W.data(), X.data() + n * I * H * Wd, cols.data(), kk, I, hw);
        detail::col2im(g, cols.data(), op + n * O * OH * OW);
    }

    return t.push("conv_transpose2d", std::move(out), {input, weight},
                  [input, weight, X, W, g, N, I](Tape& tp, const Tensor& gout) {
                      const int64_t kk = g.cols_rows(), hw = g.cols_cols();
                      const int64_t out_plane = g.channels * g.big_h * g.big_w;
                      std::vector<float> dcols(static_cast<size_t>(kk * hw));
                      float* gx = tp.wants_grad(input) ? tp.grad_buffer(input) : nullptr;
                      float* gw = tp.wants_grad(weight) ? tp.grad_buffer(weight) : nullptr;
                      for (int64_t n = 0; n < N; ++n) {
                          detail::im2col(g, gout.data() + n * out_plane, dcols.data());
                          if (gx) {
                              gemm_rm(W.data(), dcols.data(), gx + n * I * hw, I, kk, hw,
                                      /*accumulate=*/true);
                          }
                          if (gw) {
                              detail::gemm_bt(X.data() + n * I * hw, dcols.data(), gw, I, hw, kk);
                          }
                      }
                  });
}

/// out[N,O] = x[N,I] * W[O,I]^T + b[O]
inline Value linear(Tape& t, Value input, Value weight, Value bias) {
    const Tensor& X = t.value(input);
    const Tensor& W = t.value(weight);
    const Tensor& B = t.value(bias);
    require(X.rank() == 2 && W.rank() == 2 && B.rank() == 1, "linear: x must be [N,I], w [O,I], b [O]");
    require(X.dim(1) == W.dim(1), "linear: inner dims disagree (" + shape_str(X.shape()) + " vs " +
                                      shape_str(W.shape()) + ")");
    require(B.dim(0) == W.dim(0), "linear: bias length != output features");
    const int64_t N = X.dim(0), I = X.dim(1), O = W.dim(0);

    Tensor out({N, O});
    float* op = out.mutable_data();
    detail::gemm_bt(X.data(), W.data(), op, N, I, O);  // out starts zeroed
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) op[n * O + o] += B.flat(o);

    return t.push("linear", std::move(out), {input, weight, bias},
                  [input, weight, bias, X, W, N, I, O](Tape& tp, const Tensor& gout) {
                      if (tp.wants_grad(input)) {
                          // gx[N,I] += gout[N,O] * W[O,I]
                          gemm_rm(gout.data(), W.data(), tp.grad_buffer(input), N, O, I, true);
                      }
                      if (tp.wants_grad(weight)) {
                          // gw[O,I] += gout^T[O,N] * X[N,I]
                          detail::gemm_at(gout.data(), X.data(), tp.grad_buffer(weight), O, N, I);
                      }
                      if (tp.wants_grad(bias)) {
                          float* gb = tp.grad_buffer(bias);
                          for (int64_t o = 0; o < O; ++o) {
                              double acc = 0.0;
                              for (int64_t n = 0; n < N; ++n) acc += gout.flat(n * O + o);
                              gb[o] += static_cast<float>(acc);
                          }
                      }
                  });
}

/// out[n,c,h,w] = x[n,c,h,w] + b[c]
inline Value bias_add_channels(Tape& t, Value input, Value bias) {
    const Tensor& X = t.value(input);
    const Tensor& B = t.value(bias);
    detail::check_4d(X, "bias_add_channels");
    require(B.rank() == 1 && B.dim(0) == X.dim(1), "bias_add_channels: bias length != channels");
    const int64_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);

    Tensor out(X.shape());
    float* op = out.mutable_data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const float b = B.flat(c);
            const float* xp = X.data() + (n * C + c) * HW;
            float* o = op + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) o[i] = xp[i] + b;
        }

    return t.push("bias_add_channels", std::move(out), {input, bias},
                  [input, bias, N, C, HW](Tape& tp, const Tensor& gout) {
                      if (tp.wants_grad(input)) {
                          float* gx = tp.grad_buffer(input);
                          for (int64_t i = 0; i < gout.numel(); ++i) gx[i] += gout.flat(i);
                      }
                      if (tp.wants_grad(bias)) {
                          float* gb = tp.grad_buffer(bias);
                          for (int64_t c = 0; c < C; ++c) {
                              double acc = 0.0;
                              for (int64_t n = 0; n < N; ++n) {
                                  const float* g = gout.data() + (n * C + c) * HW;
                                  for (int64_t i = 0; i < HW; ++i) acc += g[i];
                              }
                              gb[c] += static_cast<float>(acc);
                          }
                      }
                  });
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
}

template <typename Fwd, typename Bwd>
Value binary_elementwise(Tape& t, const char* name, Value a, Value b, Fwd fwd, Bwd bwd) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    check_same_shape(A, B, name);
    Tensor out(A.shape());
    float* op = out.mutable_data();
    for (int64_t i = 0; i < A.numel(); ++i) op[i] = fwd(A.flat(i), B.flat(i));
    // Scalar arithmetic keeps full precision flowing (loss compositions).
    double precise = std::numeric_limits<double>::quiet_NaN();
    if (A.numel() == 1) {
        const double pa = t.input_precise(a), pb = t.input_precise(b);
        if (!std::isnan(pa) && !std::isnan(pb))
            precise = fwd(static_cast<double>(pa), static_cast<double>(pb));
    }
    return t.push(name, std::move(out), {a, b},
                  [a, b, A, B, bwd](Tape& tp, const Tensor& gout) {
                      float* ga = tp.wants_grad(a) ? tp.grad_buffer(a) : nullptr;
                      float* gb = tp.wants_grad(b) ? tp.grad_buffer(b) : nullptr;
                      for (int64_t i = 0; i < gout.numel(); ++i) {
                          float da, db;
                          bwd(A.flat(i), B.flat(i), da, db);
                          if (ga) ga[i] += gout.flat(i) * da;
                          if (gb) gb[i] += gout.flat(i) * db;
                      }
                  },
                  precise);
}

}  // namespace detail

inline Value add(Tape& t, Value a, Value b) {
    return detail::binary_elementwise(
        t, "add", a, b, [](auto x, auto y) { return x + y; },
        [](float, float, float& da, float& db) { da = 1.0f; db = 1.0f; });
}

inline Value sub(Tape& t, Value a, Value b) {
    return detail::binary_elementwise(
        t, "sub", a, b, [](auto x, auto y) { return x - y; },
        [](float, float, float& da, float& db) { da = 1.0f; db = -1.0f; });
}

inline Value mul(Tape& t, Value a, Value b) {
    return detail::binary_elementwise(
        t, "mul", a, b, [](auto x, auto y) { return x * y; },
        [](float x, float y, float& da, float& db) { da = y; db = x; });
}

/// out = scale * x + offset (elementwise, scalar constants)
inline Value affine(Tape& t, Value x, float scale, float offset) {
    const Tensor& X = t.value(x);
    Tensor out(X.shape());
    float* op = out.mutable_data();
    for (int64_t i = 0; i < X.numel(); ++i) op[i] = scale * X.flat(i) + offset;
    double precise = std::numeric_limits<double>::quiet_NaN();
    if (X.numel() == 1 && !std::isnan(t.input_precise(x)))
        precise = static_cast<double>(scale) * t.input_precise(x) + offset;
    return t.push(
        "affine", std::move(out), {x},
        [x, scale](Tape& tp, const Tensor& gout) {
            if (!tp.wants_grad(x)) return;
            float* gx = tp.grad_buffer(x);
            for (int64_t i = 0; i < gout.numel(); ++i) gx[i] += scale * gout.flat(i);
        },
        precise);
}

inline Value relu(Tape& t, Value x) {
    const Tensor& X = t.value(x);
    Tensor out(X.shape());
    float* op = out.mutable_data();
    for (int64_t i = 0; i < X.numel(); ++i) op[i] = X.flat(i) > 0.0f ? X.flat(i) : 0.0f;
    return t.push("relu", std::move(out), {x}, [x, X](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < gout.numel(); ++i)
            if (X.flat(i) > 0.0f) gx[i] += gout.flat(i);
    });
}

inline Value leaky_relu(Tape& t, Value x, float slope) {
    const Tensor& X = t.value(x);
    Tensor out(X.shape());
    float* op = out.mutable_data();
    for (int64_t i = 0; i < X.numel(); ++i) {
        const float v = X.flat(i);
        op[i] = v > 0.0f ? v : slope * v;
    }
    return t.push("leaky_relu", std::move(out), {x}, [x, X, slope](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < gout.numel(); ++i)
            gx[i] += gout.flat(i) * (X.flat(i) > 0.0f ? 1.0f : slope);
    });
}

inline Value tanh(Tape& t, Value x) {
    const Tensor& X = t.value(x);
    Tensor out(X.shape());
    float* op = out.mutable_data();
    for (int64_t i = 0; i < X.numel(); ++i) op[i] = std::tanh(X.flat(i));
    Tensor Y = out;  // saved activation
    return t.push("tanh", std::move(out), {x}, [x, Y](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < gout.numel(); ++i) {
            const float y = Y.flat(i);
            gx[i] += gout.flat(i) * (1.0f - y * y);
        }
    });
}

/// Per-(sample, channel) normalization over H*W, no affine parameters.
inline Value instance_norm2d(Tape& t, Value x, float eps = 1e-5f) {
    const Tensor& X = t.value(x);
    detail::check_4d(X, "instance_norm2d");
    require(eps > 0.0f, "instance_norm2d: eps must be positive");
    const int64_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
    require(HW > 1, "instance_norm2d: spatial size 1 is degenerate (output would be all zeros)");

    Tensor out(X.shape());
    Tensor inv_std({N, C});
    float* op = out.mutable_data();
    float* sp = inv_std.mutable_data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const float* xp = X.data() + nc * HW;
        double sum = 0.0, sum_sq = 0.0;
        for (int64_t i = 0; i < HW; ++i) {
            sum += xp[i];
            sum_sq += static_cast<double>(xp[i]) * xp[i];
        }
        const double mean = sum / static_cast<double>(HW);
        const double var = sum_sq / static_cast<double>(HW) - mean * mean;
        const double is = 1.0 / std::sqrt(std::max(var, 0.0) + static_cast<double>(eps));
        sp[nc] = static_cast<float>(is);
        float* o = op + nc * HW;
        for (int64_t i = 0; i < HW; ++i)
            o[i] = static_cast<float>((xp[i] - mean) * is);
    }

    Tensor Y = out;  // normalized output, reused in backward
    return t.push("instance_norm2d", std::move(out), {x},
                  [x, Y, inv_std, HW](Tape& tp, const Tensor& gout) {
                      if (!tp.wants_grad(x)) return;
                      float* gx = tp.grad_buffer(x);
                      const int64_t planes = inv_std.numel();
                      for (int64_t nc = 0; nc < planes; ++nc) {
                          const float* g = gout.data() + nc * HW;
                          const float* y = Y.data() + nc * HW;
                          double g_mean = 0.0, gy_mean = 0.0;
                          for (int64_t i = 0; i < HW; ++i) {
                              g_mean += g[i];
                              gy_mean += static_cast<double>(g[i]) * y[i];
                          }
                          g_mean /= static_cast<double>(HW);
                          gy_mean /= static_cast<double>(HW);
                          const float is = inv_std.flat(nc);
                          float* out_g = gx + nc * HW;
                          for (int64_t i = 0; i < HW; ++i)
                              out_g[i] += static_cast<float>(
                                  is * (g[i] - g_mean - y[i] * gy_mean));
                      }
                  });
}

/// Non-padded max pooling; ties resolve to the first (row-major) maximum.
inline Value max_pool2d(Tape& t, Value x, int64_t kernel, int64_t stride) {
    const Tensor& X = t.value(x);
    detail::check_4d(X, "max_pool2d");
    require(kernel >= 1 && stride >= 1, "max_pool2d: kernel and stride must be >= 1");
    const int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    const int64_t OH = (H - kernel) / stride + 1;
    const int64_t OW = (W - kernel) / stride + 1;
    require(OH >= 1 && OW >= 1, "max_pool2d: kernel does not fit input");

    Tensor out({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
    float* op = out.mutable_data();
    int64_t oi = 0;
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const float* plane = X.data() + nc * H * W;
        for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow, ++oi) {
                float best = -std::numeric_limits<float>::infinity();
                int64_t best_idx = 0;
                for (int64_t kh = 0; kh < kernel; ++kh)
                    for (int64_t kw = 0; kw < kernel; ++kw) {
                        const int64_t idx = (oh * stride + kh) * W + (ow * stride + kw);
                        if (plane[idx] > best) {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                op[oi] = best;
                (*argmax)[static_cast<size_t>(oi)] = nc * H * W + best_idx;
            }
    }

    return t.push("max_pool2d", std::move(out), {x}, [x, argmax](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < gout.numel(); ++i)
            gx[(*argmax)[static_cast<size_t>(i)]] += gout.flat(i);
    });
}

namespace detail {

inline void check_rows(const Tensor& x, const char* op) {
    require(x.rank() == 2, std::string(op) + ": expected [N, classes], got " + shape_str(x.shape()));
}

}  // namespace detail

/// Row-wise softmax on [N, C]; numerically stabilized by the row max.
inline Value softmax(Tape& t, Value x) {
    const Tensor& X = t.value(x);
    detail::check_rows(X, "softmax");
    const int64_t N = X.dim(0), C = X.dim(1);
    Tensor out(X.shape());
    float* op = out.mutable_data();
    for (int64_t n = 0; n < N; ++n) {
        const float* row = X.data() + n * C;
        float* o = op + n * C;
        const float m = *std::max_element(row, row + C);
        double denom = 0.0;
        for (int64_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c]) - m);
        for (int64_t c = 0; c < C; ++c)
            o[c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - m) / denom);
    }
    Tensor Y = out;
    return t.push("softmax", std::move(out), {x}, [x, Y, C](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        const int64_t N = Y.dim(0);
        for (int64_t n = 0; n < N; ++n) {
            const float* y = Y.data() + n * C;
            const float* g = gout.data() + n * C;
            double dot = 0.0;
            for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(g[c]) * y[c];
            float* out_g = gx + n * C;
            for (int64_t c = 0; c < C; ++c)
                out_g[c] += static_cast<float>(y[c] * (g[c] - dot));
        }
    });
}

inline Value log_softmax(Tape& t, Value x) {
    const Tensor& X = t.value(x);
    detail::check_rows(X, "log_softmax");
    const int64_t N = X.dim(0), C = X.dim(1);
    Tensor out(X.shape());
    float* op = out.mutable_data();
    for (int64_t n = 0; n < N; ++n) {
        const float* row = X.data() + n * C;
        float* o = op + n * C;
        const float m = *std::max_element(row, row + C);
        double denom = 0.0;
        for (int64_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c]) - m);
        const double log_denom = std::log(denom) + m;
        for (int64_t c = 0; c < C; ++c) o[c] = static_cast<float>(row[c] - log_denom);
    }
    Tensor Y = out;
    return t.push("log_softmax", std::move(out), {x}, [x, Y, C](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        const int64_t N = Y.dim(0);
        for (int64_t n = 0; n < N; ++n) {
            const float* y = Y.data() + n * C;
            const float* g = gout.data() + n * C;
            double gsum = 0.0;
            for (int64_t c = 0; c < C; ++c) gsum += g[c];
            float* out_g = gx + n * C;
            for (int64_t c = 0; c < C; ++c)
                out_g[c] += static_cast<float>(g[c] - std::exp(static_cast<double>(y[c])) * gsum);
        }
    });
}

/// Concatenate two NCHW tensors along the channel axis.
inline Value concat_channels(Tape& t, Value a, Value b) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    detail::check_4d(A, "concat_channels");
    detail::check_4d(B, "concat_channels");
    require(A.dim(0) == B.dim(0) && A.dim(2) == B.dim(2) && A.dim(3) == B.dim(3),
            "concat_channels: batch/spatial dims disagree (" + shape_str(A.shape()) + " vs " +
                shape_str(B.shape()) + ")");
    const int64_t N = A.dim(0), Ca = A.dim(1), Cb = B.dim(1), HW = A.dim(2) * A.dim(3);

    Tensor out({N, Ca + Cb, A.dim(2), A.dim(3)});
    float* op = out.mutable_data();
    for (int64_t n = 0; n < N; ++n) {
        std::memcpy(op + n * (Ca + Cb) * HW, A.data() + n * Ca * HW,
                    static_cast<size_t>(Ca * HW) * sizeof(float));
        std::memcpy(op + (n * (Ca + Cb) + Ca) * HW, B.data() + n * Cb * HW,
                    static_cast<size_t>(Cb * HW) * sizeof(float));
    }

    return t.push("concat_channels", std::move(out), {a, b},
                  [a, b, N, Ca, Cb, HW](Tape& tp, const Tensor& gout) {
                      float* ga = tp.wants_grad(a) ? tp.grad_buffer(a) : nullptr;
                      float* gb = tp.wants_grad(b) ? tp.grad_buffer(b) : nullptr;
                      for (int64_t n = 0; n < N; ++n) {
                          const float* g = gout.data() + n * (Ca + Cb) * HW;
                          if (ga)
                              for (int64_t i = 0; i < Ca * HW; ++i) ga[n * Ca * HW + i] += g[i];
                          if (gb)
                              for (int64_t i = 0; i < Cb * HW; ++i)
                                  gb[n * Cb * HW + i] += g[Ca * HW + i];
                      }
                  });
}

/// Zero-copy view with a new shape (same element count).
inline Value reshape(Tape& t, Value x, Shape new_shape) {
    const Tensor& X = t.value(x);
    Tensor out = X.reshaped(std::move(new_shape));
    return t.push("reshape", std::move(out), {x}, [x](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        for (int64_t i = 0; i < gout.numel(); ++i) gx[i] += gout.flat(i);
    });
}

inline Value sum_all(Tape& t, Value x) {
    const Tensor& X = t.value(x);
    double acc = 0.0;
    for (int64_t i = 0; i < X.numel(); ++i) acc += X.flat(i);
    return t.push(
        "sum_all", Tensor::scalar(static_cast<float>(acc)), {x},
        [x](Tape& tp, const Tensor& gout) {
            if (!tp.wants_grad(x)) return;
            float* gx = tp.grad_buffer(x);
            const float g = gout.flat(0);
            const Tensor& X = tp.value(x);
            for (int64_t i = 0; i < X.numel(); ++i) gx[i] += g;
        },
        acc);
}

inline Value mean_all(Tape& t, Value x) {
    const Tensor& X = t.value(x);
    double acc = 0.0;
    for (int64_t i = 0; i < X.numel(); ++i) acc += X.flat(i);
    const int64_t n = X.numel();
    return t.push(
        "mean_all", Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))), {x},
        [x, n](Tape& tp, const Tensor& gout) {
            if (!tp.wants_grad(x)) return;
            float* gx = tp.grad_buffer(x);
            const float g = gout.flat(0) / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        },
        acc / static_cast<double>(n));
}

/// [N, ...] -> [N]: sums every axis but the first.
inline Value rows_sum(Tape& t, Value x) {
    const Tensor& X = t.value(x);
    require(X.rank() >= 2, "rows_sum: needs at least 2 dims, got " + shape_str(X.shape()));
    const int64_t N = X.dim(0), M = X.numel() / N;
    Tensor out({N});
    float* op = out.mutable_data();
    for (int64_t n = 0; n < N; ++n) {
        double acc = 0.0;
        const float* row = X.data() + n * M;
        for (int64_t i = 0; i < M; ++i) acc += row[i];
        op[n] = static_cast<float>(acc);
    }
    return t.push("rows_sum", std::move(out), {x}, [x, N, M](Tape& tp, const Tensor& gout) {
        if (!tp.wants_grad(x)) return;
        float* gx = tp.grad_buffer(x);
        for (int64_t n = 0; n < N; ++n) {
            const float g = gout.flat(n);
            float* row = gx + n * M;
            for (int64_t i = 0; i < M; ++i) row[i] += g;
        }
    });
}

/// Batch-mean L1 distance: (1/N) * sum_n sum_elems |a - b|.
/// First axis is the batch; the inner sum is a true per-sample L1 norm.
inline Value l1_distance(Tape& t, Value a, Value b) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    detail::check_same_shape(A, B, "l1_distance");
    require(A.rank() >= 1, "l1_distance: scalar inputs unsupported");
    const int64_t N = A.dim(0);
    double acc = 0.0;
    for (int64_t i = 0; i < A.numel(); ++i) acc += std::abs(static_cast<double>(A.flat(i)) - B.flat(i));
    const float val = static_cast<float>(acc / static_cast<double>(N));

    return t.push(
        "l1_distance", Tensor::scalar(val), {a, b},
        [a, b, A, B, N](Tape& tp, const Tensor& gout) {
                      float* ga = tp.wants_grad(a) ? tp.grad_buffer(a) : nullptr;
                      float* gb = tp.wants_grad(b) ? tp.grad_buffer(b) : nullptr;
                      const float g = gout.flat(0) / static_cast<float>(N);
                      for (int64_t i = 0; i < A.numel(); ++i) {
                          const float d = A.flat(i) - B.flat(i);
                          const float s = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
                          if (ga) ga[i] += g * s;
                          if (gb) gb[i] -= g * s;
                      }
        },
        acc / static_cast<double>(N));
}

/// Per-row cosine similarity of two [N, C] tensors -> [N].
inline Value cosine_rows(Tape& t, Value a, Value b) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    detail::check_same_shape(A, B, "cosine_rows");
    detail::check_rows(A, "cosine_rows");
    const int64_t N = A.dim(0), C = A.dim(1);

    Tensor out({N});
    Tensor norms({N, 2});
    float* op = out.mutable_data();
    float* np = norms.mutable_data();
    for (int64_t n = 0; n < N; ++n) {
        const float* x = A.data() + n * C;
        const float* y = B.data() + n * C;
        double dot = 0.0, nx = 0.0, ny = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            dot += static_cast<double>(x[c]) * y[c];
            nx += static_cast<double>(x[c]) * x[c];
            ny += static_cast<double>(y[c]) * y[c];
        }
        const double na = std::sqrt(std::max(nx, 1e-24));
        const double nb = std::sqrt(std::max(ny, 1e-24));
        np[n * 2] = static_cast<float>(na);
        np[n * 2 + 1] = static_cast<float>(nb);
        op[n] = static_cast<float>(dot / (na * nb));
    }

    Tensor Y = out;
    return t.push("cosine_rows", std::move(out), {a, b},
                  [a, b, A, B, Y, norms, C](Tape& tp, const Tensor& gout) {
                      float* ga = tp.wants_grad(a) ? tp.grad_buffer(a) : nullptr;
                      float* gb = tp.wants_grad(b) ? tp.grad_buffer(b) : nullptr;
                      const int64_t N = Y.numel();
                      for (int64_t n = 0; n < N; ++n) {
                          const float g = gout.flat(n);
                          if (g == 0.0f) continue;
                          const float* x = A.data() + n * C;
                          const float* y = B.data() + n * C;
                          const float na = norms.flat(n * 2), nb = norms.flat(n * 2 + 1);
                          const float cs = Y.flat(n);
                          const float inv = 1.0f / (na * nb);
                          if (ga) {
                              float* o = ga + n * C;
                              for (int64_t c = 0; c < C; ++c)
                                  o[c] += g * (y[c] * inv - cs * x[c] / (na * na));
                          }
                          if (gb) {
                              float* o = gb + n * C;
                              for (int64_t c = 0; c < C; ++c)
                                  o[c] += g * (x[c] * inv - cs * y[c] / (nb * nb));
                          }
                      }
                  });
}

/// Mean negative log-likelihood of integer labels under row log-probs.
inline Value nll_loss(Tape& t, Value log_probs, const std::vector<int64_t>& labels) {
    const Tensor& L = t.value(log_probs);
    detail::check_rows(L, "nll_loss");
    const int64_t N = L.dim(0), C = L.dim(1);
    require(static_cast<int64_t>(labels.size()) == N,
            "nll_loss: label count " + std::to_string(labels.size()) + " != batch " +
                std::to_string(N));
    double acc = 0.0;
    for (int64_t n = 0; n < N; ++n) {
        require(labels[static_cast<size_t>(n)] >= 0 && labels[static_cast<size_t>(n)] < C,
                "nll_loss: label out of range");
        acc -= L.flat(n * C + labels[static_cast<size_t>(n)]);
    }
    const float val = static_cast<float>(acc / static_cast<double>(N));

    auto labels_copy = std::make_shared<std::vector<int64_t>>(labels);
    return t.push(
        "nll_loss", Tensor::scalar(val), {log_probs},
        [log_probs, labels_copy, N, C](Tape& tp, const Tensor& gout) {
            if (!tp.wants_grad(log_probs)) return;
            float* gx = tp.grad_buffer(log_probs);
            const float g = gout.flat(0) / static_cast<float>(N);
            for (int64_t n = 0; n < N; ++n)
                gx[n * C + (*labels_copy)[static_cast<size_t>(n)]] -= g;
        },
        acc / static_cast<double>(N));
}

/// Cross-entropy of integer labels against raw logits.
inline Value cross_entropy(Tape& t, Value logits, const std::vector<int64_t>& labels) {
    return nll_loss(t, log_softmax(t, logits), labels);
}

/// Row-wise KL(softmax(p_logits) || softmax(q_logits)), batch-mean.
inline Value kl_between_logits(Tape& t, Value p_logits, Value q_logits) {
    Value p = softmax(t, p_logits);
    Value diff = sub(t, log_softmax(t, p_logits), log_softmax(t, q_logits));
    return mean_all(t, rows_sum(t, mul(t, p, diff)));
}

}  // namespace wavedef
