#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "wavedef/common.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/**
 * @brief A two-channel filter bank with periodized boundary handling.
 *
 * Convention (shared with tests/oracles/wavelet_oracle.py, which verifies it
 * as an exact matrix identity):
 *   analysis   a[i] = sum_t lo_dec[t] * x[(2i + t) mod N]
 *              d[i] = sum_t hi_dec[t] * x[(2i + t) mod N]
 *   synthesis  x[(2i + t - rec_offset_lo) mod N] += a[i] * lo_rec[t]
 *              x[(2i + t - rec_offset_hi) mod N] += d[i] * hi_rec[t]
 * Orthogonal families use identical analysis/synthesis taps and zero offsets,
 * making synthesis the exact transpose of analysis; perfect reconstruction
 * then holds for every even N, including N smaller than the filter length.
 */
struct WaveletFamily {
    std::string name;
    std::vector<double> lo_dec, hi_dec, lo_rec, hi_rec;
    int rec_offset_lo = 0;
    int rec_offset_hi = 0;
    bool orthogonal = true;
};

namespace detail {

/// hi[t] = (-1)^t * lo[L-1-t]: the orthogonal quadrature-mirror companion.
inline std::vector<double> qmf(const std::vector<double>& lo) {
    const size_t L = lo.size();
    std::vector<double> hi(L);
    for (size_t t = 0; t < L; ++t) hi[t] = ((t % 2) ? -1.0 : 1.0) * lo[L - 1 - t];
    return hi;
}

inline WaveletFamily orthogonal_family(std::string name, std::vector<double> lo) {
    WaveletFamily f;
    f.name = std::move(name);
    f.hi_dec = qmf(lo);
    f.lo_dec = std::move(lo);
    f.lo_rec = f.lo_dec;
    f.hi_rec = f.hi_dec;
    return f;
}

}  // namespace detail

/**
 * @brief Returns the filter bank for a named family.
 *
 * Supported: haar, daubechies-2 (db2), daubechies-4 (db4), coiflet-1 (coif1),
 * biorthogonal-2.2 (bior2.2). Tap values are closed forms where they exist;
 * db4 carries the published minimal-phase coefficients. All are verified by
 * the oracle script against orthonormality / vanishing-moment conditions.
 */
inline const WaveletFamily& filter_bank(const std::string& name) {
    static const double s2 = std::sqrt(2.0);
    static const double s3 = std::sqrt(3.0);
    static const double s7 = std::sqrt(7.0);

    static const WaveletFamily haar = detail::orthogonal_family("haar", {1.0 / s2, 1.0 / s2});

    static const WaveletFamily db2 = detail::orthogonal_family(
        "daubechies-2", {(1 + s3) / (4 * s2), (3 + s3) / (4 * s2), (3 - s3) / (4 * s2),
                         (1 - s3) / (4 * s2)});

    static const WaveletFamily db4 = detail::orthogonal_family(
        "daubechies-4",
        {0.23037781330885523, 0.7148465705525415, 0.6308807679295904, -0.02798376941698385,
         -0.18703481171888114, 0.030841381835986965, 0.032883011666982945,
         -0.010597401784997278});

    static const WaveletFamily coif1 = detail::orthogonal_family(
        "coiflet-1", {(s2 / 32) * (s7 - 3), (s2 / 32) * (1 - s7), (s2 / 32) * (14 - 2 * s7),
                      (s2 / 32) * (14 + 2 * s7), (s2 / 32) * (5 + s7), (s2 / 32) * (1 - s7)});

    static const WaveletFamily bior22 = [] {
        WaveletFamily f;
        f.name = "biorthogonal-2.2";
        f.orthogonal = false;
        f.lo_dec = {-s2 / 8, s2 / 4, 3 * s2 / 4, s2 / 4, -s2 / 8};
        f.lo_rec = {s2 / 4, s2 / 2, s2 / 4};
        // dec_hi[t] = (-1)^t * lo_rec[t];  rec_hi[t] = -(-1)^t * lo_dec[t].
        f.hi_dec = {s2 / 4, -s2 / 2, s2 / 4};
        f.hi_rec = {s2 / 8, s2 / 4, -3 * s2 / 4, s2 / 4, s2 / 8};
        f.rec_offset_lo = -1;
        f.rec_offset_hi = 1;
        return f;
    }();

    if (name == "haar") return haar;
    if (name == "daubechies-2" || name == "db2") return db2;
    if (name == "daubechies-4" || name == "db4") return db4;
    if (name == "coiflet-1" || name == "coif1") return coif1;
    if (name == "biorthogonal-2.2" || name == "bior2.2") return bior22;
    throw std::invalid_argument(
        "filter_bank: unknown wavelet family '" + name +
        "' (supported: haar, daubechies-2, daubechies-4, coiflet-1, biorthogonal-2.2)");
}

/// One subband plane of coefficients, row-major.
struct Subband {
    int64_t h = 0, w = 0;
    std::vector<float> v;

    Subband() = default;
    Subband(int64_t h_, int64_t w_) : h(h_), w(w_), v(static_cast<size_t>(h_ * w_), 0.0f) {}
    float& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * w + c)]; }
    float at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * w + c)]; }
    int64_t count() const { return h * w; }
};

/// The three detail orientations of one decomposition level.
/// lh = low along height / high along width (top-right quadrant), hl the
/// mirror, hh diagonal.
struct DetailBands {
    Subband lh, hl, hh;
};

/**
 * @brief Multilevel 2D coefficient pyramid for one image plane.
 *
 * details[0] is level 1 (finest, half resolution); ll is the approximation
 * at the coarsest level. Periodization keeps the total coefficient count
 * equal to the input pixel count.
 */
struct CoeffPyramid {
    int levels = 0;
    Subband ll;
    std::vector<DetailBands> details;

    int64_t detail_count() const {
        int64_t n = 0;
        for (const DetailBands& d : details) n += d.lh.count() + d.hl.count() + d.hh.count();
        return n;
    }
    int64_t total_count() const { return ll.count() + detail_count(); }
};

namespace detail {

/// One periodized analysis step on a length-n signal (n even).
inline void dwt1d(const double* x, int64_t n, const WaveletFamily& f, double* approx,
                  double* det) {
    const int64_t half = n / 2;
    const int64_t Ll = static_cast<int64_t>(f.lo_dec.size());
    const int64_t Lh = static_cast<int64_t>(f.hi_dec.size());
    for (int64_t i = 0; i < half; ++i) {
        double a = 0.0, d = 0.0;
        for (int64_t t = 0; t < Ll; ++t) a += f.lo_dec[static_cast<size_t>(t)] * x[(2 * i + t) % n];
        for (int64_t t = 0; t < Lh; ++t) d += f.hi_dec[static_cast<size_t>(t)] * x[(2 * i + t) % n];
        approx[i] = a;
        det[i] = d;
    }
}

/// Inverse step: scatter-add both branches back to length n.
inline void idwt1d(const double* approx, const double* det, int64_t half, const WaveletFamily& f,
                   double* x) {
    const int64_t n = half * 2;
    std::fill(x, x + n, 0.0);
    const int64_t Ll = static_cast<int64_t>(f.lo_rec.size());
    const int64_t Lh = static_cast<int64_t>(f.hi_rec.size());
    for (int64_t i = 0; i < half; ++i) {
        for (int64_t t = 0; t < Ll; ++t) {
            const int64_t idx = ((2 * i + t - f.rec_offset_lo) % n + n) % n;
            x[idx] += approx[i] * f.lo_rec[static_cast<size_t>(t)];
        }
        for (int64_t t = 0; t < Lh; ++t) {
            const int64_t idx = ((2 * i + t - f.rec_offset_hi) % n + n) % n;
            x[idx] += det[i] * f.hi_rec[static_cast<size_t>(t)];
        }
    }
}

/// Single-level 2D step: rows (width axis) first, then columns.
inline void dwt2d_level(const std::vector<double>& plane, int64_t h, int64_t w,
                        const WaveletFamily& f, Subband& ll, DetailBands& bands) {
    const int64_t hh = h / 2, hw = w / 2;
    std::vector<double> rows(static_cast<size_t>(h * w));
    std::vector<double> buf_a(static_cast<size_t>(std::max(hw, hh)));
    std::vector<double> buf_d(static_cast<size_t>(std::max(hw, hh)));
    for (int64_t r = 0; r < h; ++r) {
        dwt1d(plane.data() + r * w, w, f, buf_a.data(), buf_d.data());
        for (int64_t c = 0; c < hw; ++c) {
            rows[static_cast<size_t>(r * w + c)] = buf_a[static_cast<size_t>(c)];
            rows[static_cast<size_t>(r * w + hw + c)] = buf_d[static_cast<size_t>(c)];
        }
    }
    ll = Subband(hh, hw);
    bands.lh = Subband(hh, hw);
    bands.hl = Subband(hh, hw);
    bands.hh = Subband(hh, hw);
    std::vector<double> col(static_cast<size_t>(h));
    for (int64_t c = 0; c < w; ++c) {
        for (int64_t r = 0; r < h; ++r) col[static_cast<size_t>(r)] = rows[static_cast<size_t>(r * w + c)];
        dwt1d(col.data(), h, f, buf_a.data(), buf_d.data());
        for (int64_t r = 0; r < hh; ++r) {
            const float lo = static_cast<float>(buf_a[static_cast<size_t>(r)]);
            const float hi = static_cast<float>(buf_d[static_cast<size_t>(r)]);
            if (c < hw) {
                ll.at(r, c) = lo;
                bands.hl.at(r, c) = hi;
            } else {
                bands.lh.at(r, c - hw) = lo;
                bands.hh.at(r, c - hw) = hi;
            }
        }
    }
}

/// Single-level inverse: columns first, then rows (mirror of dwt2d_level).
inline void idwt2d_level(const Subband& ll, const DetailBands& bands, const WaveletFamily& f,
                         std::vector<double>& plane, int64_t h, int64_t w) {
    const int64_t hh = h / 2, hw = w / 2;
    std::vector<double> rows(static_cast<size_t>(h * w));
    std::vector<double> col_a(static_cast<size_t>(hh)), col_d(static_cast<size_t>(hh));
    std::vector<double> col(static_cast<size_t>(h));
    for (int64_t c = 0; c < w; ++c) {
        for (int64_t r = 0; r < hh; ++r) {
            if (c < hw) {
                col_a[static_cast<size_t>(r)] = ll.at(r, c);
                col_d[static_cast<size_t>(r)] = bands.hl.at(r, c);
            } else {
                col_a[static_cast<size_t>(r)] = bands.lh.at(r, c - hw);
                col_d[static_cast<size_t>(r)] = bands.hh.at(r, c - hw);
            }
        }
        idwt1d(col_a.data(), col_d.data(), hh, f, col.data());
        for (int64_t r = 0; r < h; ++r) rows[static_cast<size_t>(r * w + c)] = col[static_cast<size_t>(r)];
    }
    plane.assign(static_cast<size_t>(h * w), 0.0);
    std::vector<double> row_a(static_cast<size_t>(hw)), row_d(static_cast<size_t>(hw));
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < hw; ++c) {
            row_a[static_cast<size_t>(c)] = rows[static_cast<size_t>(r * w + c)];
            row_d[static_cast<size_t>(c)] = rows[static_cast<size_t>(r * w + hw + c)];
        }
        idwt1d(row_a.data(), row_d.data(), hw, f, plane.data() + r * w);
    }
}

}  // namespace detail

/**
 * @brief Multilevel periodized 2D decomposition of one H x W plane.
 *
 * H and W must be divisible by 2^levels so every intermediate size stays
 * even (exact halving). details[0] holds the finest level.
 */
inline CoeffPyramid wavedec2(const float* data, int64_t h, int64_t w, const WaveletFamily& family,
                             int levels) {
    require(levels >= 1, "wavedec2: levels must be >= 1, got " + std::to_string(levels));
    require(h >= 2 && w >= 2, "wavedec2: plane too small");
    const int64_t div = int64_t{1} << levels;
    require(h % div == 0 && w % div == 0,
            "wavedec2: dims " + std::to_string(h) + "x" + std::to_string(w) +
                " not divisible by 2^levels = " + std::to_string(div));

    CoeffPyramid p;
    p.levels = levels;
    std::vector<double> plane(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) plane[static_cast<size_t>(i)] = data[i];

    int64_t ch = h, cw = w;
    for (int level = 1; level <= levels; ++level) {
        Subband ll;
        DetailBands bands;
        detail::dwt2d_level(plane, ch, cw, family, ll, bands);
        p.details.push_back(std::move(bands));
        ch /= 2;
        cw /= 2;
        plane.resize(static_cast<size_t>(ch * cw));
        for (int64_t i = 0; i < ch * cw; ++i) plane[static_cast<size_t>(i)] = ll.v[static_cast<size_t>(i)];
        if (level == levels) p.ll = std::move(ll);
    }
    return p;
}

/// Exact inverse of wavedec2 for an unmodified pyramid.
inline std::vector<float> waverec2(const CoeffPyramid& p, const WaveletFamily& family,
                                   int64_t* out_h = nullptr, int64_t* out_w = nullptr) {
    require(p.levels >= 1 && static_cast<int>(p.details.size()) == p.levels,
            "waverec2: pyramid levels inconsistent with detail bands");
    int64_t ch = p.ll.h, cw = p.ll.w;
    std::vector<double> plane(static_cast<size_t>(ch * cw));
    for (int64_t i = 0; i < ch * cw; ++i) plane[static_cast<size_t>(i)] = p.ll.v[static_cast<size_t>(i)];

    for (int level = p.levels; level >= 1; --level) {
        const DetailBands& bands = p.details[static_cast<size_t>(level - 1)];
        require(bands.lh.h == ch && bands.lh.w == cw && bands.hl.h == ch && bands.hl.w == cw &&
                    bands.hh.h == ch && bands.hh.w == cw,
                "waverec2: subband shapes at level " + std::to_string(level) +
                    " disagree with the approximation (" + std::to_string(ch) + "x" +
                    std::to_string(cw) + ")");
        Subband ll(ch, cw);
        for (int64_t i = 0; i < ch * cw; ++i)
            ll.v[static_cast<size_t>(i)] = static_cast<float>(plane[static_cast<size_t>(i)]);
        std::vector<double> up;
        detail::idwt2d_level(ll, bands, family, up, ch * 2, cw * 2);
        plane = std::move(up);
        ch *= 2;
        cw *= 2;
    }

    std::vector<float> out(static_cast<size_t>(ch * cw));
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(plane[i]);
    if (out_h) *out_h = ch;
    if (out_w) *out_w = cw;
    return out;
}

/// Per-channel decomposition of a CHW image tensor.
inline std::vector<CoeffPyramid> wavedec2_chw(const Tensor& img, const WaveletFamily& family,
                                              int levels) {
    require(img.rank() == 3, "wavedec2_chw: expected CHW tensor, got " + shape_str(img.shape()));
    const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    std::vector<CoeffPyramid> out;
    out.reserve(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c)
        out.push_back(wavedec2(img.data() + c * H * W, H, W, family, levels));
    return out;
}

/// Per-channel reconstruction back to a CHW tensor.
inline Tensor waverec2_chw(const std::vector<CoeffPyramid>& pyramids,
                           const WaveletFamily& family) {
    require(!pyramids.empty(), "waverec2_chw: no channels");
    const int64_t C = static_cast<int64_t>(pyramids.size());
    int64_t h = 0, w = 0;
    std::vector<float> first = waverec2(pyramids[0], family, &h, &w);
    Tensor out({C, h, w});
    float* op = out.mutable_data();
    std::copy(first.begin(), first.end(), op);
    for (int64_t c = 1; c < C; ++c) {
        int64_t h2 = 0, w2 = 0;
        std::vector<float> plane = waverec2(pyramids[static_cast<size_t>(c)], family, &h2, &w2);
        require(h2 == h && w2 == w, "waverec2_chw: channel dims disagree");
        std::copy(plane.begin(), plane.end(), op + c * h * w);
    }
    return out;
}

}  // namespace wavedef
