// Wavelet noise remover tests: coefficient ranking, mask exactness, and the
// purify-reconstruct envelope.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <tuple>

#include "wavedef/wnr.hpp"

using namespace wavedef;

namespace {

Tensor random_image(Shape shape, uint32_t seed) {
    std::mt19937 rng(seed);
    return Tensor::uniform(std::move(shape), rng, 0.0f, 1.0f);
}

/// A pyramid with exactly four detail coefficients {3, -5, 2, 0.5}; the
/// subband shapes are synthetic (build_mask never reconstructs).
std::vector<CoeffPyramid> four_detail_pyramid() {
    CoeffPyramid p;
    p.levels = 1;
    p.ll = Subband(1, 1);
    DetailBands d;
    d.lh = Subband(1, 2);
    d.lh.v = {3.0f, -5.0f};
    d.hl = Subband(1, 1);
    d.hl.v = {2.0f};
    d.hh = Subband(1, 1);
    d.hh.v = {0.5f};
    p.details.push_back(std::move(d));
    return {std::move(p)};
}

float l2_error(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = double(a.data()[i]) - double(b.data()[i]);
        s += d * d;
    }
    return static_cast<float>(std::sqrt(s));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    float m = 0.0f;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("retained_count rounds half up exactly", "[wnr]") {
    REQUIRE(retained_count(4, 50) == 2);
    REQUIRE(retained_count(4, 13) == 1);   // 0.52 -> 1
    REQUIRE(retained_count(4, 12) == 0);   // 0.48 -> 0
    REQUIRE(retained_count(10, 25) == 3);  // exact half 2.5 rounds up
    REQUIRE(retained_count(24, 27) == 6);  // 6.48 -> 6
    REQUIRE(retained_count(2304, 16) == 369);
    REQUIRE(retained_count(576, 50) == 288);
    REQUIRE(retained_count(960, 0) == 0);
    REQUIRE(retained_count(960, 100) == 960);
}

TEST_CASE("build_mask selects by magnitude with exact counts", "[wnr]") {
    SECTION("k=0 retains nothing, k=100 retains everything") {
        Tensor img = random_image({3, 16, 16}, 11);
        std::vector<CoeffPyramid> ps = wavedec2_chw(img, filter_bank("daubechies-2"), 2);
        SelectionMask none = build_mask(ps, 0, {SelectionKind::top_k, 0});
        REQUIRE(none.true_count() == 0);
        SelectionMask all = build_mask(ps, 100, {SelectionKind::top_k, 0});
        REQUIRE(all.true_count() == all.flag_count());
        REQUIRE(all.flag_count() == 3 * (256 - 16));  // per channel: details = pixels - ll
    }

    SECTION("details {3, -5, 2, 0.5} at k=50 keep {-5, 3}") {
        std::vector<CoeffPyramid> ps = four_detail_pyramid();
        SelectionMask m = build_mask(ps, 50, {SelectionKind::top_k, 0});
        REQUIRE(m.true_count() == 2);
        REQUIRE(m.bands[0][0].lh[0] == 1);  // 3.0
        REQUIRE(m.bands[0][0].lh[1] == 1);  // -5.0
        REQUIRE(m.bands[0][0].hl[0] == 0);  // 2.0
        REQUIRE(m.bands[0][0].hh[0] == 0);  // 0.5

        // Rounding boundaries on the same pyramid.
        SelectionMask one = build_mask(ps, 13, {SelectionKind::top_k, 0});
        REQUIRE(one.true_count() == 1);
        REQUIRE(one.bands[0][0].lh[1] == 1);  // only the -5
        SelectionMask two = build_mask(ps, 38, {SelectionKind::top_k, 0});
        REQUIRE(two.true_count() == 2);

        // bottom_k mirrors the ordering.
        SelectionMask bot = build_mask(ps, 50, {SelectionKind::bottom_k, 0});
        REQUIRE(bot.bands[0][0].hh[0] == 1);  // 0.5
        REQUIRE(bot.bands[0][0].hl[0] == 1);  // 2.0
        REQUIRE(bot.bands[0][0].lh[0] == 0);
        REQUIRE(bot.bands[0][0].lh[1] == 0);
    }

    SECTION("mask count matches retained_count for every strategy and k") {
        Tensor img = random_image({3, 16, 16}, 12);
        std::vector<CoeffPyramid> ps = wavedec2_chw(img, filter_bank("haar"), 2);
        const int64_t M = 3 * (256 - 16);
        for (int k = 0; k <= 100; k += 7) {
            for (SelectionKind kind :
                 {SelectionKind::top_k, SelectionKind::bottom_k, SelectionKind::random_k}) {
                SelectionMask m = build_mask(ps, k, {kind, 123});
                INFO("k=" << k << " kind=" << selection_kind_name(kind));
                REQUIRE(m.true_count() == retained_count(M, k));
            }
        }
    }

    SECTION("k out of range") {
        std::vector<CoeffPyramid> ps = four_detail_pyramid();
        REQUIRE_THROWS_AS(build_mask(ps, -1, {SelectionKind::top_k, 0}), std::invalid_argument);
        REQUIRE_THROWS_AS(build_mask(ps, 101, {SelectionKind::top_k, 0}), std::invalid_argument);
    }
}

TEST_CASE("ties break by ascending (level, band, row, col, channel)", "[wnr]") {
    // Two channels, one level, every detail magnitude exactly 1: selection
    // order is decided purely by the tie rule.
    std::vector<CoeffPyramid> ps;
    for (int ch = 0; ch < 2; ++ch) {
        CoeffPyramid p;
        p.levels = 1;
        p.ll = Subband(2, 2);
        DetailBands d;
        for (Subband* s : {&d.lh, &d.hl, &d.hh}) {
            *s = Subband(2, 2);
            for (size_t i = 0; i < s->v.size(); ++i) s->v[i] = (i % 2 == 0) ? 1.0f : -1.0f;
        }
        p.details.push_back(std::move(d));
        ps.push_back(std::move(p));
    }
    // M = 24, k = 25 -> 6 retained: lh positions (0,0), (0,1), (1,0), each in
    // channel order.
    SelectionMask m = build_mask(ps, 25, {SelectionKind::top_k, 0});
    REQUIRE(m.true_count() == 6);
    for (int ch = 0; ch < 2; ++ch) {
        REQUIRE(m.bands[ch][0].lh[0] == 1);
        REQUIRE(m.bands[ch][0].lh[1] == 1);
        REQUIRE(m.bands[ch][0].lh[2] == 1);
        REQUIRE(m.bands[ch][0].lh[3] == 0);
        for (size_t i = 0; i < 4; ++i) {
            REQUIRE(m.bands[ch][0].hl[i] == 0);
            REQUIRE(m.bands[ch][0].hh[i] == 0);
        }
    }
}

TEST_CASE("random_k is a seeded uniform draw", "[wnr]") {
    Tensor img = random_image({3, 16, 16}, 13);
    std::vector<CoeffPyramid> ps = wavedec2_chw(img, filter_bank("daubechies-2"), 1);

    SelectionMask a = build_mask(ps, 40, {SelectionKind::random_k, 2024});
    SelectionMask b = build_mask(ps, 40, {SelectionKind::random_k, 2024});
    SelectionMask c = build_mask(ps, 40, {SelectionKind::random_k, 2025});

    auto flags = [](const SelectionMask& m) {
        std::vector<uint8_t> out;
        for (const auto& ch : m.bands)
            for (const SubbandMask& s : ch) {
                out.insert(out.end(), s.lh.begin(), s.lh.end());
                out.insert(out.end(), s.hl.begin(), s.hl.end());
                out.insert(out.end(), s.hh.begin(), s.hh.end());
            }
        return out;
    };
    REQUIRE(flags(a) == flags(b));
    REQUIRE(flags(a) != flags(c));
    REQUIRE(a.true_count() == retained_count(3 * (256 - 64), 40));
    REQUIRE(c.true_count() == a.true_count());
}

TEST_CASE("apply_wnr matches a brute-force sort-and-zero oracle", "[wnr]") {
    // Independent path: rank all per-channel detail coefficients of the
    // level-1 pyramids (768 per channel) in one global list, zero everything
    // outside the top 16%, reconstruct.
    Tensor img = random_image({3, 32, 32}, 21);
    const WaveletFamily& fam = filter_bank("daubechies-2");
    const int levels = 1;

    std::vector<CoeffPyramid> ps = wavedec2_chw(img, fam, levels);
    struct OEntry {
        float mag;
        int lvl, band;
        int64_t r, c;
        int ch;
        float* val;
    };
    std::vector<OEntry> entries;
    for (size_t ch = 0; ch < ps.size(); ++ch) {
        for (size_t l = 0; l < ps[ch].details.size(); ++l) {
            DetailBands& d = ps[ch].details[l];
            Subband* bands[3] = {&d.lh, &d.hl, &d.hh};
            for (int b = 0; b < 3; ++b)
                for (int64_t r = 0; r < bands[b]->h; ++r)
                    for (int64_t c = 0; c < bands[b]->w; ++c)
                        entries.push_back({std::abs(bands[b]->at(r, c)), int(l + 1), b, r, c,
                                           int(ch), &bands[b]->at(r, c)});
        }
    }
    REQUIRE(entries.size() == 2304);  // 768 detail coefficients per channel
    std::sort(entries.begin(), entries.end(), [](const OEntry& a, const OEntry& b) {
        if (a.mag != b.mag) return a.mag > b.mag;
        return std::make_tuple(a.lvl, a.band, a.r, a.c, a.ch) <
               std::make_tuple(b.lvl, b.band, b.r, b.c, b.ch);
    });
    const size_t keep = 369;  // round(16% of 2304)
    for (size_t i = keep; i < entries.size(); ++i) *entries[i].val = 0.0f;
    Tensor expect = waverec2_chw(ps, fam);
    float* ep = expect.mutable_data();
    for (int64_t i = 0; i < expect.numel(); ++i) ep[i] = std::clamp(ep[i], 0.0f, 1.0f);

    Tensor got = apply_wnr(img, 16, {SelectionKind::top_k, 0}, fam, levels);
    REQUIRE(max_abs_diff(got, expect) < 1e-6f);
}

TEST_CASE("apply_wnr identity cases", "[wnr]") {
    const WaveletFamily& fam = filter_bank("daubechies-2");

    SECTION("k=100 is the identity within tolerance") {
        Tensor img = random_image({3, 32, 32}, 31);
        Tensor out = apply_wnr(img, 100, {SelectionKind::top_k, 0}, fam, 2);
        REQUIRE(max_abs_diff(out, img) < 1e-5f);
    }

    SECTION("constant image is unchanged for any k") {
        Tensor img = Tensor::full({3, 16, 16}, 0.4f);
        for (int k : {0, 7, 50}) {
            Tensor out = apply_wnr(img, k, {SelectionKind::top_k, 0}, fam, 2);
            INFO("k=" << k);
            REQUIRE(max_abs_diff(out, img) < 1e-5f);
        }
    }

    SECTION("k=0 equals approximation-only reconstruction") {
        Tensor img = random_image({3, 16, 16}, 32);
        std::vector<CoeffPyramid> ps = wavedec2_chw(img, fam, 2);
        for (CoeffPyramid& p : ps)
            for (DetailBands& d : p.details) {
                std::fill(d.lh.v.begin(), d.lh.v.end(), 0.0f);
                std::fill(d.hl.v.begin(), d.hl.v.end(), 0.0f);
                std::fill(d.hh.v.begin(), d.hh.v.end(), 0.0f);
            }
        Tensor expect = waverec2_chw(ps, fam);
        float* ep = expect.mutable_data();
        for (int64_t i = 0; i < expect.numel(); ++i) ep[i] = std::clamp(ep[i], 0.0f, 1.0f);
        Tensor got = apply_wnr(img, 0, {SelectionKind::top_k, 0}, fam, 2);
        REQUIRE(max_abs_diff(got, expect) < 1e-6f);
    }
}

TEST_CASE("reconstruction error is non-increasing in k for top_k", "[wnr]") {
    const WaveletFamily& fam = filter_bank("daubechies-2");
    Tensor img = random_image({3, 16, 16}, 41);
    float prev = std::numeric_limits<float>::max();
    for (int k = 0; k <= 100; k += 10) {
        Tensor out = apply_wnr(img, k, {SelectionKind::top_k, 0}, fam, 2);
        const float err = l2_error(out, img);
        INFO("k=" << k << " err=" << err << " prev=" << prev);
        REQUIRE(err <= prev + 1e-5f);
        prev = err;
    }
    REQUIRE(prev < 1e-4f);  // k=100 is near-exact
}

TEST_CASE("top_k and bottom_k are complements at an even tie-free split", "[wnr]") {
    Tensor img = random_image({3, 16, 16}, 51);
    std::vector<CoeffPyramid> ps = wavedec2_chw(img, filter_bank("daubechies-2"), 1);
    // M = 3 * 192 = 576, k=50 -> exactly 288 each.
    SelectionMask top = build_mask(ps, 50, {SelectionKind::top_k, 0});
    SelectionMask bot = build_mask(ps, 50, {SelectionKind::bottom_k, 0});
    REQUIRE(top.true_count() == 288);
    REQUIRE(bot.true_count() == 288);
    for (size_t ch = 0; ch < top.bands.size(); ++ch)
        for (size_t l = 0; l < top.bands[ch].size(); ++l) {
            const SubbandMask& t = top.bands[ch][l];
            const SubbandMask& b = bot.bands[ch][l];
            for (size_t i = 0; i < t.lh.size(); ++i) REQUIRE((t.lh[i] ^ b.lh[i]) == 1);
            for (size_t i = 0; i < t.hl.size(); ++i) REQUIRE((t.hl[i] ^ b.hl[i]) == 1);
            for (size_t i = 0; i < t.hh.size(); ++i) REQUIRE((t.hh[i] ^ b.hh[i]) == 1);
        }
}

TEST_CASE("apply_wnr output stays in [0,1]", "[wnr]") {
    const WaveletFamily& fam = filter_bank("daubechies-4");
    Tensor impulse = Tensor::zeros({1, 16, 16});
    impulse.mutable_data()[5 * 16 + 7] = 1.0f;
    for (int k : {0, 10, 60}) {
        Tensor out = apply_wnr(impulse, k, {SelectionKind::top_k, 0}, fam, 2);
        for (int64_t i = 0; i < out.numel(); ++i) {
            REQUIRE(out.data()[i] >= 0.0f);
            REQUIRE(out.data()[i] <= 1.0f);
        }
    }
}

TEST_CASE("apply_wnr propagates decomposition errors", "[wnr]") {
    const WaveletFamily& fam = filter_bank("haar");
    Tensor bad = random_image({3, 10, 10}, 61);
    REQUIRE_THROWS_AS(apply_wnr(bad, 50, {SelectionKind::top_k, 0}, fam, 2),
                      std::invalid_argument);
    Tensor flat = random_image({16, 16}, 62);
    REQUIRE_THROWS_AS(apply_wnr(flat, 50, {SelectionKind::top_k, 0}, fam, 1),
                      std::invalid_argument);

    SECTION("batch helper keeps per-image semantics") {
        Tensor batch = random_image({2, 3, 16, 16}, 63);
        Tensor out = apply_wnr_batch(batch, 30, {SelectionKind::top_k, 0}, fam, 2);
        REQUIRE(out.shape() == batch.shape());
        // First image processed alone matches its batch slice.
        Tensor one({3, 16, 16});
        std::copy(batch.data(), batch.data() + 768, one.mutable_data());
        Tensor solo = apply_wnr(one, 30, {SelectionKind::top_k, 0}, fam, 2);
        for (int64_t i = 0; i < solo.numel(); ++i)
            REQUIRE(out.data()[i] == Catch::Approx(solo.data()[i]).margin(1e-7));
        REQUIRE_THROWS_AS(apply_wnr_batch(one, 30, {SelectionKind::top_k, 0}, fam, 2),
                          std::invalid_argument);
    }
}
