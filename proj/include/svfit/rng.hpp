// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

#include "svfit/matrix.hpp"

namespace svfit {

/// Deterministic random source. mt19937_64 is fully specified by the
/// standard and the normal transform below is fixed (Box-Muller with a
/// cached spare), so a given seed yields the same stream on every platform;
/// std::normal_distribution would not guarantee that.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Standard normal.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform index in [0, n). Rejection sampling; no modulo bias.
    std::size_t index(std::size_t n) {
        const std::uint64_t bound = n;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Matrix with i.i.d. N(0, stddev^2) entries, filled row-major.
inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng,
                              double stddev = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = stddev * rng.normal();
    return m;
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = rng.index(i);
        std::swap(items[i - 1], items[j]);
    }
}

} // namespace svfit
