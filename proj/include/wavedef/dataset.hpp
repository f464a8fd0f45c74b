#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "wavedef/common.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/// Labeled image set; images are NCHW in [0, 1].
struct Dataset {
    Tensor images;
    std::vector<int64_t> labels;

    int64_t size() const { return labels.empty() ? 0 : images.dim(0); }

    /// Copy of one image as a CHW tensor.
    Tensor image(int64_t i) const {
        const int64_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
        Tensor out({C, H, W});
        std::copy(images.data() + i * C * H * W, images.data() + (i + 1) * C * H * W,
                  out.mutable_data());
        return out;
    }

    /// Row-range slice [begin, end).
    Dataset slice(int64_t begin, int64_t end) const {
        require(begin >= 0 && begin < end && end <= size(), "Dataset::slice: bad range");
        const int64_t C = images.dim(1), H = images.dim(2), W = images.dim(3);
        Dataset out;
        out.images = Tensor({end - begin, C, H, W});
        std::copy(images.data() + begin * C * H * W, images.data() + end * C * H * W,
                  out.images.mutable_data());
        out.labels.assign(labels.begin() + begin, labels.begin() + end);
        return out;
    }
};

/**
 * @brief Loads a CIFAR-10 binary batch file.
 *
 * Each record is 3073 bytes: one label byte (0-9) followed by three
 * 1024-byte row-major channel planes (R, G, B). Pixels are scaled by 1/255.
 */
inline Dataset load_cifar10(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require_runtime(f.good(), "load_cifar10: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    constexpr int64_t record = 3073;
    require_runtime(!bytes.empty() && static_cast<int64_t>(bytes.size()) % record == 0,
                    "load_cifar10: " + path + " is truncated (" + std::to_string(bytes.size()) +
                        " bytes is not a multiple of 3073)");
    const int64_t n = static_cast<int64_t>(bytes.size()) / record;

    Dataset ds;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(static_cast<size_t>(n));
    float* out = ds.images.mutable_data();
    for (int64_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * record;
        require_runtime(rec[0] <= 9, "load_cifar10: record " + std::to_string(i) +
                                         " has label byte " + std::to_string(int(rec[0])));
        ds.labels[static_cast<size_t>(i)] = rec[0];
        for (int64_t j = 0; j < 3072; ++j)
            out[i * 3072 + j] = static_cast<float>(rec[1 + j]) / 255.0f;
    }
    return ds;
}

/// Writes a dataset back out in CIFAR-10 binary layout (round-trip tooling).
inline void save_cifar10(const std::string& path, const Dataset& ds) {
    require(ds.images.rank() == 4 && ds.images.dim(1) == 3 && ds.images.dim(2) == 32 &&
                ds.images.dim(3) == 32,
            "save_cifar10: dataset is not N x 3 x 32 x 32");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require_runtime(f.good(), "save_cifar10: cannot open " + path);
    for (int64_t i = 0; i < ds.size(); ++i) {
        const unsigned char label = static_cast<unsigned char>(ds.labels[static_cast<size_t>(i)]);
        f.put(static_cast<char>(label));
        const float* img = ds.images.data() + i * 3072;
        for (int64_t j = 0; j < 3072; ++j) {
            const float v = std::clamp(img[j], 0.0f, 1.0f);
            f.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
        }
    }
    require_runtime(f.good(), "save_cifar10: short write to " + path);
}

/// Shape/color recipe of the procedural dataset.
struct SyntheticSpec {
    int64_t num_classes = 10;
    int64_t count = 1000;
    int64_t height = 32, width = 32;
};

namespace detail {

/// Ten visually distinct foreground colors; class c uses palette[c % 10].
inline const float kPalette[10][3] = {
    {0.95f, 0.15f, 0.15f}, {0.15f, 0.90f, 0.15f}, {0.20f, 0.25f, 0.95f}, {0.95f, 0.90f, 0.10f},
    {0.90f, 0.15f, 0.90f}, {0.10f, 0.90f, 0.90f}, {0.95f, 0.55f, 0.10f}, {0.55f, 0.15f, 0.95f},
    {0.98f, 0.98f, 0.98f}, {0.55f, 0.35f, 0.15f},
};

}  // namespace detail

/**
 * @brief Procedural labeled images: one colored geometric shape per image on
 * a dark noise background.
 *
 * Class determines the foreground color (10-color palette) and the shape
 * family (even classes draw squares, odd classes draw discs); position and
 * size jitter per sample. Labels are assigned round-robin, so class counts
 * are exactly stratified. Deterministic given the seed.
 */
inline Dataset gen_synthetic_dataset(const SyntheticSpec& spec, uint32_t seed) {
    require(spec.num_classes >= 2, "gen_synthetic_dataset: need at least 2 classes");
    require(spec.count >= 1 && spec.height >= 16 && spec.width >= 16,
            "gen_synthetic_dataset: degenerate spec");
    Rng rng(seed);
    std::uniform_real_distribution<float> bg(0.0f, 0.35f);
    std::uniform_real_distribution<float> tint(-0.08f, 0.08f);
    const int64_t H = spec.height, W = spec.width;

    Dataset ds;
    ds.images = Tensor({spec.count, 3, H, W});
    ds.labels.resize(static_cast<size_t>(spec.count));
    float* out = ds.images.mutable_data();

    for (int64_t i = 0; i < spec.count; ++i) {
        const int64_t cls = i % spec.num_classes;
        ds.labels[static_cast<size_t>(i)] = cls;
        float* img = out + i * 3 * H * W;
        for (int64_t j = 0; j < 3 * H * W; ++j) img[j] = bg(rng);

        std::uniform_int_distribution<int64_t> half_size(5, 8);
        const int64_t r = half_size(rng);
        std::uniform_int_distribution<int64_t> cy_d(r, H - 1 - r), cx_d(r, W - 1 - r);
        const int64_t cy = cy_d(rng), cx = cx_d(rng);
        const float* color = detail::kPalette[cls % 10];
        const bool disc = (cls % 2) == 1;
        const float jr = tint(rng), jg = tint(rng), jb = tint(rng);

        for (int64_t y = cy - r; y <= cy + r; ++y)
            for (int64_t x = cx - r; x <= cx + r; ++x) {
                if (disc && (y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
                img[0 * H * W + y * W + x] = std::clamp(color[0] + jr, 0.0f, 1.0f);
                img[1 * H * W + y * W + x] = std::clamp(color[1] + jg, 0.0f, 1.0f);
                img[2 * H * W + y * W + x] = std::clamp(color[2] + jb, 0.0f, 1.0f);
            }
    }
    return ds;
}

/**
 * @brief Unlabeled synthetic-sample stream used for query-based distillation.
 *
 * uniform_noise draws i.i.d. U[0,1] pixels; procedural_shapes reuses the
 * labeled generator (labels discarded); file_proxy reads images from a
 * CIFAR-10 binary file.
 */
struct SyntheticSource {
    std::string kind = "procedural_shapes";  // uniform_noise | procedural_shapes | file_proxy
    int64_t count = 1024;
    uint32_t seed = 0;
    int64_t channels = 3, height = 32, width = 32;
    std::string path;  // file_proxy only
};

inline Tensor generate_source(const SyntheticSource& src) {
    require(src.count >= 1, "generate_source: count must be >= 1");
    if (src.kind == "uniform_noise") {
        Rng rng(src.seed);
        return Tensor::uniform({src.count, src.channels, src.height, src.width}, rng, 0.0f, 1.0f);
    }
    if (src.kind == "procedural_shapes") {
        require(src.channels == 3, "generate_source: procedural_shapes is 3-channel");
        SyntheticSpec spec;
        spec.count = src.count;
        spec.height = src.height;
        spec.width = src.width;
        return gen_synthetic_dataset(spec, src.seed).images;
    }
    if (src.kind == "file_proxy") {
        Dataset ds = load_cifar10(src.path);
        require(ds.size() >= src.count, "generate_source: file " + src.path + " has only " +
                                            std::to_string(ds.size()) + " of " +
                                            std::to_string(src.count) + " samples");
        return ds.slice(0, src.count).images;
    }
    throw std::invalid_argument("generate_source: unknown source kind '" + src.kind + "'");
}

}  // namespace wavedef
