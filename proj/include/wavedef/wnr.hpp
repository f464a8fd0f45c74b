#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "wavedef/common.hpp"
#include "wavedef/tensor.hpp"
#include "wavedef/wavelet.hpp"

namespace wavedef {

/// How the retained k% subset of detail coefficients is chosen.
enum class SelectionKind { top_k, bottom_k, random_k };

inline SelectionKind parse_selection_kind(const std::string& s) {
    if (s == "top_k" || s == "top") return SelectionKind::top_k;
    if (s == "bottom_k" || s == "bottom") return SelectionKind::bottom_k;
    if (s == "random_k" || s == "random") return SelectionKind::random_k;
    throw std::invalid_argument("parse_selection_kind: unknown strategy '" + s +
                                "' (supported: top_k, bottom_k, random_k)");
}

inline std::string selection_kind_name(SelectionKind k) {
    switch (k) {
        case SelectionKind::top_k: return "top_k";
        case SelectionKind::bottom_k: return "bottom_k";
        case SelectionKind::random_k: return "random_k";
    }
    return "?";
}

/// Strategy plus the seed that makes random_k reproducible.
struct SelectionStrategy {
    SelectionKind kind = SelectionKind::top_k;
    uint32_t seed = 0;
};

/// Boolean retention flags for the three detail bands of one level.
struct SubbandMask {
    std::vector<uint8_t> lh, hl, hh;
};

/**
 * @brief Per-coefficient retention flags covering every detail subband of a
 * (possibly multichannel) pyramid. The approximation band is always kept and
 * therefore carries no flags.
 */
struct SelectionMask {
    std::vector<std::vector<SubbandMask>> bands;  // [channel][level-1]

    int64_t true_count() const {
        int64_t n = 0;
        for (const auto& ch : bands)
            for (const SubbandMask& m : ch) {
                for (uint8_t b : m.lh) n += b;
                for (uint8_t b : m.hl) n += b;
                for (uint8_t b : m.hh) n += b;
            }
        return n;
    }
    int64_t flag_count() const {
        int64_t n = 0;
        for (const auto& ch : bands)
            for (const SubbandMask& m : ch)
                n += static_cast<int64_t>(m.lh.size() + m.hl.size() + m.hh.size());
        return n;
    }
};

namespace detail {

/// One rankable detail coefficient. Ties in magnitude are broken by the
/// ascending tuple (level, band, row, col, channel); band order is lh < hl < hh
/// and level 1 is the finest.
struct RankEntry {
    float mag;
    int32_t level, band;
    int64_t row, col;
    int32_t channel;
    uint8_t* flag;
};

inline bool tie_less(const RankEntry& a, const RankEntry& b) {
    return std::tie(a.level, a.band, a.row, a.col, a.channel) <
           std::tie(b.level, b.band, b.row, b.col, b.channel);
}

}  // namespace detail

/// Number of detail coefficients a k% selection retains: round-half-up of
/// k/100 * total, computed exactly in integers.
inline int64_t retained_count(int64_t total_details, int k_percent) {
    return (static_cast<int64_t>(k_percent) * total_details + 50) / 100;
}

/**
 * @brief Ranks every detail coefficient of the image's per-channel pyramids
 * and flags the retained k% subset.
 *
 * Ranking is global across all levels, subbands, and channels. top_k keeps
 * the largest magnitudes, bottom_k the smallest, random_k a seeded uniform
 * draw without replacement. The retained count is exactly
 * retained_count(M, k).
 */
inline SelectionMask build_mask(const std::vector<CoeffPyramid>& channels, int k_percent,
                                SelectionStrategy strategy) {
    require(k_percent >= 0 && k_percent <= 100,
            "build_mask: k_percent must be in [0, 100], got " + std::to_string(k_percent));
    require(!channels.empty(), "build_mask: no channels");

    SelectionMask mask;
    mask.bands.resize(channels.size());
    int64_t total = 0;
    for (size_t c = 0; c < channels.size(); ++c) {
        require(channels[c].levels == channels[0].levels,
                "build_mask: channels disagree on level count");
        mask.bands[c].resize(channels[c].details.size());
        for (size_t l = 0; l < channels[c].details.size(); ++l) {
            const DetailBands& d = channels[c].details[l];
            mask.bands[c][l].lh.assign(d.lh.v.size(), 0);
            mask.bands[c][l].hl.assign(d.hl.v.size(), 0);
            mask.bands[c][l].hh.assign(d.hh.v.size(), 0);
            total += d.lh.count() + d.hl.count() + d.hh.count();
        }
    }

    const int64_t want = retained_count(total, k_percent);
    if (want == 0) return mask;

    std::vector<detail::RankEntry> entries;
    entries.reserve(static_cast<size_t>(total));
    for (size_t c = 0; c < channels.size(); ++c) {
        for (size_t l = 0; l < channels[c].details.size(); ++l) {
            const DetailBands& d = channels[c].details[l];
            SubbandMask& m = mask.bands[c][l];
            const Subband* bands[3] = {&d.lh, &d.hl, &d.hh};
            std::vector<uint8_t>* flags[3] = {&m.lh, &m.hl, &m.hh};
            for (int b = 0; b < 3; ++b) {
                const Subband& s = *bands[b];
                for (int64_t r = 0; r < s.h; ++r)
                    for (int64_t col = 0; col < s.w; ++col)
                        entries.push_back({std::abs(s.at(r, col)), static_cast<int32_t>(l + 1), b,
                                           r, col, static_cast<int32_t>(c),
                                           flags[b]->data() + r * s.w + col});
            }
        }
    }

    const size_t take = static_cast<size_t>(std::min(want, total));
    switch (strategy.kind) {
        case SelectionKind::top_k:
            std::sort(entries.begin(), entries.end(),
                      [](const detail::RankEntry& a, const detail::RankEntry& b) {
                          if (a.mag != b.mag) return a.mag > b.mag;
                          return detail::tie_less(a, b);
                      });
            break;
        case SelectionKind::bottom_k:
            std::sort(entries.begin(), entries.end(),
                      [](const detail::RankEntry& a, const detail::RankEntry& b) {
                          if (a.mag != b.mag) return a.mag < b.mag;
                          return detail::tie_less(a, b);
                      });
            break;
        case SelectionKind::random_k: {
            Rng rng(strategy.seed);
            std::shuffle(entries.begin(), entries.end(), rng);
            break;
        }
    }
    for (size_t i = 0; i < take; ++i) *entries[i].flag = 1;
    return mask;
}

/// Zeroes every detail coefficient whose mask flag is false; ll is untouched.
inline std::vector<CoeffPyramid> apply_mask(std::vector<CoeffPyramid> channels,
                                            const SelectionMask& mask) {
    require(mask.bands.size() == channels.size(), "apply_mask: channel count mismatch");
    for (size_t c = 0; c < channels.size(); ++c) {
        require(mask.bands[c].size() == channels[c].details.size(),
                "apply_mask: level count mismatch");
        for (size_t l = 0; l < channels[c].details.size(); ++l) {
            DetailBands& d = channels[c].details[l];
            const SubbandMask& m = mask.bands[c][l];
            require(m.lh.size() == d.lh.v.size() && m.hl.size() == d.hl.v.size() &&
                        m.hh.size() == d.hh.v.size(),
                    "apply_mask: subband shape mismatch");
            for (size_t i = 0; i < d.lh.v.size(); ++i)
                if (!m.lh[i]) d.lh.v[i] = 0.0f;
            for (size_t i = 0; i < d.hl.v.size(); ++i)
                if (!m.hl[i]) d.hl.v[i] = 0.0f;
            for (size_t i = 0; i < d.hh.v.size(); ++i)
                if (!m.hh[i]) d.hh.v[i] = 0.0f;
        }
    }
    return channels;
}

/**
 * @brief Wavelet noise remover: decompose, keep the selected k% of detail
 * coefficients plus the full approximation, reconstruct, clamp to [0, 1].
 *
 * Input is one CHW image in the [0, 1] pixel domain with spatial dims
 * divisible by 2^levels.
 */
inline Tensor apply_wnr(const Tensor& img, int k_percent, SelectionStrategy strategy,
                        const WaveletFamily& family, int levels) {
    std::vector<CoeffPyramid> ps = wavedec2_chw(img, family, levels);
    SelectionMask mask = build_mask(ps, k_percent, strategy);
    ps = apply_mask(std::move(ps), mask);
    Tensor out = waverec2_chw(ps, family);
    float* q = out.mutable_data();
    for (int64_t i = 0; i < out.numel(); ++i) q[i] = std::clamp(q[i], 0.0f, 1.0f);
    return out;
}

/// Applies the noise remover independently to every image of an NCHW batch.
inline Tensor apply_wnr_batch(const Tensor& imgs, int k_percent, SelectionStrategy strategy,
                              const WaveletFamily& family, int levels) {
    require(imgs.rank() == 4, "apply_wnr_batch: expected NCHW, got " + shape_str(imgs.shape()));
    const int64_t N = imgs.dim(0), C = imgs.dim(1), H = imgs.dim(2), W = imgs.dim(3);
    Tensor out({N, C, H, W});
    float* op = out.mutable_data();
    const int64_t stride = C * H * W;
    for (int64_t n = 0; n < N; ++n) {
        Tensor img({C, H, W});
        std::copy(imgs.data() + n * stride, imgs.data() + (n + 1) * stride, img.mutable_data());
        Tensor purified = apply_wnr(img, k_percent, strategy, family, levels);
        std::copy(purified.data(), purified.data() + stride, op + n * stride);
    }
    return out;
}

/// Bundled noise-remover configuration: Daubechies family at two levels by
/// default, top-k selection, k in percent of retained detail coefficients.
struct WnrConfig {
    std::string family = "db2";
    int levels = 2;
    int k = 100;
    SelectionStrategy strategy;  // top_k, seed 0

    WnrConfig with_k(int k_percent) const {
        WnrConfig c = *this;
        c.k = k_percent;
        return c;
    }

    Tensor apply(const Tensor& chw) const {
        return apply_wnr(chw, k, strategy, filter_bank(family), levels);
    }
    Tensor apply_batch(const Tensor& nchw) const {
        return apply_wnr_batch(nchw, k, strategy, filter_bank(family), levels);
    }
};

}  // namespace wavedef
