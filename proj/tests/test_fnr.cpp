// Fourier noise remover tests: radial mask geometry, filtering behavior, and
// agreement with a direct O(N^4) transform oracle.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

#include "wavedef/fnr.hpp"

using namespace wavedef;

namespace {

Tensor random_image(Shape shape, uint32_t seed) {
    std::mt19937 rng(seed);
    return Tensor::uniform(std::move(shape), rng, 0.0f, 1.0f);
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    float m = 0.0f;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

float l2_error(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = double(a.data()[i]) - double(b.data()[i]);
        s += d * d;
    }
    return static_cast<float>(std::sqrt(s));
}

}  // namespace

TEST_CASE("radial mask measures distance from the centered DC bin", "[fnr]") {
    RadialMask m{2.0, 8, 8};
    REQUIRE(m.contains(4, 4));   // DC itself
    REQUIRE(m.contains(4, 6));   // distance 2, on the boundary
    REQUIRE(m.contains(2, 4));   // distance 2 vertically
    REQUIRE_FALSE(m.contains(4, 7));  // distance 3
    REQUIRE_FALSE(m.contains(6, 6));  // distance 2*sqrt(2)

    RadialMask dc{0.0, 8, 8};
    int count = 0;
    for (int64_t u = 0; u < 8; ++u)
        for (int64_t v = 0; v < 8; ++v) count += dc.contains(u, v) ? 1 : 0;
    REQUIRE(count == 1);
}

TEST_CASE("lowpass_filter limiting radii", "[fnr]") {
    Tensor img = random_image({3, 32, 32}, 7);

    SECTION("radius beyond the half-diagonal is the identity") {
        // Half-diagonal of a 32x32 spectrum = sqrt(16^2 + 16^2) ~ 22.63.
        Tensor out = lowpass_filter(img, 23.0);
        REQUIRE(max_abs_diff(out, img) < 1e-5f);
    }

    SECTION("radius 0 keeps only DC: every pixel becomes the channel mean") {
        Tensor out = lowpass_filter(img, 0.0);
        for (int64_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (int64_t i = 0; i < 1024; ++i) mean += img.data()[c * 1024 + i];
            mean /= 1024.0;
            for (int64_t i = 0; i < 1024; ++i)
                REQUIRE(out.data()[c * 1024 + i] == Catch::Approx(mean).margin(1e-5));
        }
    }

    SECTION("constant image unchanged at any radius") {
        Tensor flat = Tensor::full({2, 16, 16}, 0.37f);
        for (double r : {0.0, 3.7, 11.0}) {
            Tensor out = lowpass_filter(flat, r);
            INFO("radius " << r);
            REQUIRE(max_abs_diff(out, flat) < 1e-6f);
        }
    }

    SECTION("negative radius is rejected") {
        REQUIRE_THROWS_AS(lowpass_filter(img, -0.5), std::invalid_argument);
        Tensor flat = random_image({16, 16}, 1);
        REQUIRE_THROWS_AS(lowpass_filter(flat, 1.0), std::invalid_argument);
    }
}

TEST_CASE("lowpass_filter matches a direct quadruple-loop DFT oracle", "[fnr]") {
    // Independent O(N^4) reference: textbook DFT sums, no separability, no
    // shared code with the implementation.
    const int64_t H = 32, W = 32;
    Tensor img = random_image({1, H, W}, 21);
    const double radius = 11.0;

    std::vector<std::complex<double>> spec(H * W);
    for (int64_t u = 0; u < H; ++u)
        for (int64_t v = 0; v < W; ++v) {
            std::complex<double> s = 0.0;
            for (int64_t r = 0; r < H; ++r)
                for (int64_t c = 0; c < W; ++c) {
                    const double ang =
                        -2.0 * M_PI * (double(u * r) / H + double(v * c) / W);
                    s += double(img.data()[r * W + c]) *
                         std::complex<double>(std::cos(ang), std::sin(ang));
                }
            // Centered distance via signed frequencies.
            const double fu = (u <= H / 2) ? double(u) : double(u) - H;
            const double fv = (v <= W / 2) ? double(v) : double(v) - W;
            spec[u * W + v] = (std::sqrt(fu * fu + fv * fv) <= radius) ? s : 0.0;
        }
    std::vector<float> expect(H * W);
    for (int64_t r = 0; r < H; ++r)
        for (int64_t c = 0; c < W; ++c) {
            std::complex<double> s = 0.0;
            for (int64_t u = 0; u < H; ++u)
                for (int64_t v = 0; v < W; ++v) {
                    const double ang =
                        2.0 * M_PI * (double(u * r) / H + double(v * c) / W);
                    s += spec[u * W + v] * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            expect[r * W + c] =
                std::clamp(static_cast<float>(s.real() / double(H * W)), 0.0f, 1.0f);
        }

    Tensor got = lowpass_filter(img, radius);
    for (int64_t i = 0; i < H * W; ++i) {
        INFO("pixel " << i);
        REQUIRE(std::abs(got.data()[i] - expect[i]) < 1e-4f);
    }
}

TEST_CASE("reconstruction error is non-increasing in radius", "[fnr]") {
    Tensor img = random_image({3, 16, 16}, 31);
    float prev = std::numeric_limits<float>::max();
    for (double r = 0.0; r <= 12.0; r += 2.0) {
        Tensor out = lowpass_filter(img, r);
        const float err = l2_error(out, img);
        INFO("radius " << r << " err " << err);
        REQUIRE(err <= prev + 1e-5f);
        prev = err;
    }
    REQUIRE(prev < 1e-4f);  // full-pass radius reproduces the image
}

TEST_CASE("batch filtering matches per-image filtering", "[fnr]") {
    Tensor batch = random_image({2, 3, 16, 16}, 41);
    Tensor out = lowpass_filter_batch(batch, 5.0);
    REQUIRE(out.shape() == batch.shape());
    Tensor one({3, 16, 16});
    std::copy(batch.data() + 768, batch.data() + 1536, one.mutable_data());
    Tensor solo = lowpass_filter(one, 5.0);
    for (int64_t i = 0; i < solo.numel(); ++i)
        REQUIRE(out.data()[768 + i] == Catch::Approx(solo.data()[i]).margin(1e-7));
}
