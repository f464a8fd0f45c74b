#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavedef {

/// Row-major tensor extents. An empty shape denotes a scalar with one element.
using Shape = std::vector<int64_t>;

/// Deterministic generator used everywhere randomness is needed.
/// Every call site takes an explicit seed; nothing reads global entropy.
using Rng = std::mt19937;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Contract violations (bad shapes, out-of-range arguments, unknown names).
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

/// Runtime failures (I/O, protocol, numeric blow-ups).
inline void require_runtime(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

/// NaN/Inf entering the numeric pipeline is a hard error: attack and training
/// loops must fail loudly rather than silently saturate.
inline void require_finite(const float* p, int64_t n, const char* where) {
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
            throw std::runtime_error(std::string("non-finite value in ") + where +
                                     " at flat index " + std::to_string(i));
        }
    }
}

/// C[M x N] (+)= A[M x K] * B[K x N], all row-major contiguous.
/// The i-k-j loop keeps the inner stride-1 so the compiler can vectorize;
/// single-threaded on purpose (bit-determinism contract).
inline void gemm_rm(const float* A, const float* B, float* C,
                    int64_t M, int64_t K, int64_t N, bool accumulate) {
    if (!accumulate) {
        for (int64_t i = 0; i < M * N; ++i) C[i] = 0.0f;
    }
    for (int64_t i = 0; i < M; ++i) {
        const float* a_row = A + i * K;
        float* c_row = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const float a = a_row[k];
            if (a == 0.0f) continue;
            const float* b_row = B + k * N;
            for (int64_t j = 0; j < N; ++j) c_row[j] += a * b_row[j];
        }
    }
}

/// round-half-up to a nonnegative integer count.
inline int64_t round_half_up(double x) {
    return static_cast<int64_t>(std::floor(x + 0.5));
}

}  // namespace wavedef
