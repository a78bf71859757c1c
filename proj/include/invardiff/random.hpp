// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "invardiff/tensor.hpp"

namespace invardiff {

/// Seeded generator with a fully specified output sequence. std::mt19937_64
/// is bit-defined by the standard; the distributions below are written out
/// so that draws do not depend on the standard library implementation.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Box-Muller, one draw per call.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

inline TokenTensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, SeededRng& rng) {
    TokenTensor t(rows, cols);
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

inline TokenTensor gaussian_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    SeededRng rng(seed);
    TokenTensor t(rows, cols);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

}  // namespace invardiff
