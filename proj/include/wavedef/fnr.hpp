#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "wavedef/common.hpp"
#include "wavedef/tensor.hpp"

namespace wavedef {

/**
 * @brief Circular pass-region of a centered 2D spectrum.
 *
 * Indices are fft-shifted: the DC bin sits at (height/2, width/2) and a bin
 * passes iff its Euclidean distance from DC is at most radius.
 */
struct RadialMask {
    double radius = 0.0;
    int64_t height = 0, width = 0;

    bool contains(int64_t u, int64_t v) const {
        const double du = static_cast<double>(u - height / 2);
        const double dv = static_cast<double>(v - width / 2);
        return std::sqrt(du * du + dv * dv) <= radius;
    }
};

namespace detail {

/// Twiddle table W[k*n] = exp(-2*pi*i*k*n/N) (conjugated for the inverse).
inline std::vector<std::complex<double>> twiddles(int64_t n, bool inverse) {
    std::vector<std::complex<double>> w(static_cast<size_t>(n) * static_cast<size_t>(n));
    const double sign = inverse ? 2.0 : -2.0;
    for (int64_t k = 0; k < n; ++k)
        for (int64_t j = 0; j < n; ++j) {
            const double ang = sign * M_PI * static_cast<double>((k * j) % n) / static_cast<double>(n);
            w[static_cast<size_t>(k * n + j)] = {std::cos(ang), std::sin(ang)};
        }
    return w;
}

/// Separable 2D DFT of one H x W plane (unnormalized forward; inverse divides
/// by H*W).
inline std::vector<std::complex<double>> dft2(const std::vector<std::complex<double>>& x,
                                              int64_t h, int64_t w, bool inverse) {
    const std::vector<std::complex<double>> ww = twiddles(w, inverse);
    const std::vector<std::complex<double>> wh = twiddles(h, inverse);
    std::vector<std::complex<double>> rows(static_cast<size_t>(h * w));
    for (int64_t r = 0; r < h; ++r)
        for (int64_t v = 0; v < w; ++v) {
            std::complex<double> s = 0.0;
            for (int64_t c = 0; c < w; ++c)
                s += x[static_cast<size_t>(r * w + c)] * ww[static_cast<size_t>(v * w + c)];
            rows[static_cast<size_t>(r * w + v)] = s;
        }
    std::vector<std::complex<double>> out(static_cast<size_t>(h * w));
    for (int64_t v = 0; v < w; ++v)
        for (int64_t u = 0; u < h; ++u) {
            std::complex<double> s = 0.0;
            for (int64_t r = 0; r < h; ++r)
                s += rows[static_cast<size_t>(r * w + v)] * wh[static_cast<size_t>(u * h + r)];
            out[static_cast<size_t>(u * w + v)] = s;
        }
    if (inverse) {
        const double norm = 1.0 / static_cast<double>(h * w);
        for (std::complex<double>& c : out) c *= norm;
    }
    return out;
}

}  // namespace detail

/**
 * @brief Fourier noise remover: per channel, zero every frequency bin farther
 * than `radius` from the centered DC bin, invert, clamp to [0, 1].
 *
 * The pass mask is conjugate-symmetric, so the inverse transform is real up
 * to rounding; a residue above 1e-5 indicates a defect and raises an error.
 */
inline Tensor lowpass_filter(const Tensor& img, double radius) {
    require(img.rank() == 3, "lowpass_filter: expected CHW tensor, got " + shape_str(img.shape()));
    require(radius >= 0.0, "lowpass_filter: radius must be >= 0, got " + std::to_string(radius));
    const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);

    Tensor out({C, H, W});
    float* op = out.mutable_data();
    const RadialMask mask{radius, H, W};

    std::vector<std::complex<double>> plane(static_cast<size_t>(H * W));
    for (int64_t c = 0; c < C; ++c) {
        const float* xp = img.data() + c * H * W;
        for (int64_t i = 0; i < H * W; ++i) plane[static_cast<size_t>(i)] = xp[i];
        std::vector<std::complex<double>> spec = detail::dft2(plane, H, W, false);
        for (int64_t u = 0; u < H; ++u)
            for (int64_t v = 0; v < W; ++v) {
                // Unshifted bin (u, v) lands at ((u + H/2) mod H, (v + W/2) mod W)
                // in the centered spectrum.
                const int64_t su = (u + H / 2) % H;
                const int64_t sv = (v + W / 2) % W;
                if (!mask.contains(su, sv)) spec[static_cast<size_t>(u * W + v)] = 0.0;
            }
        std::vector<std::complex<double>> back = detail::dft2(spec, H, W, true);
        double residue = 0.0;
        for (const std::complex<double>& z : back) residue = std::max(residue, std::abs(z.imag()));
        require_runtime(residue < 1e-5, "lowpass_filter: non-real inverse transform (residue " +
                                            std::to_string(residue) + ")");
        float* o = op + c * H * W;
        for (int64_t i = 0; i < H * W; ++i)
            o[i] = std::clamp(static_cast<float>(back[static_cast<size_t>(i)].real()), 0.0f, 1.0f);
    }
    return out;
}

/// Applies the low-pass filter independently to every image of an NCHW batch.
inline Tensor lowpass_filter_batch(const Tensor& imgs, double radius) {
    require(imgs.rank() == 4,
            "lowpass_filter_batch: expected NCHW, got " + shape_str(imgs.shape()));
    const int64_t N = imgs.dim(0), C = imgs.dim(1), H = imgs.dim(2), W = imgs.dim(3);
    Tensor out({N, C, H, W});
    float* op = out.mutable_data();
    const int64_t stride = C * H * W;
    for (int64_t n = 0; n < N; ++n) {
        Tensor img({C, H, W});
        std::copy(imgs.data() + n * stride, imgs.data() + (n + 1) * stride, img.mutable_data());
        Tensor f = lowpass_filter(img, radius);
        std::copy(f.data(), f.data() + stride, op + n * stride);
    }
    return out;
}

}  // namespace wavedef
