// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Transformer building blocks shared by the toy backbones, with their
// analytic FLOP counts. Internal header.

#pragma once

#include <cstdint>

#include "invardiff/random.hpp"
#include "invardiff/tensor.hpp"

namespace invardiff::detail {

struct AttentionWeights {
    TokenTensor wq, wk, wv, wo;

    AttentionWeights(std::size_t d, SeededRng& rng);
};

struct FeedForwardWeights {
    TokenTensor w1, w2;

    FeedForwardWeights(std::size_t d, std::size_t hidden, SeededRng& rng);
};

/// Multi-head attention of `queries` over `keys_values`; both inputs are
/// already normalized.
TokenTensor attention(const TokenTensor& queries, const TokenTensor& keys_values,
                      const AttentionWeights& w, std::size_t heads);

/// GELU(x W1) W2.
TokenTensor feed_forward(const TokenTensor& x, const FeedForwardWeights& w);

/// Sinusoidal embedding of step index t, length d.
std::vector<double> step_embedding(int t, std::size_t d);

/// Adds `v` to every row of x.
void add_row_vector(TokenTensor& x, std::span<const double> v);

std::uint64_t layer_norm_flops(std::uint64_t n, std::uint64_t d);
std::uint64_t attention_flops(std::uint64_t n_q, std::uint64_t n_k, std::uint64_t d,
                              std::uint64_t heads);
std::uint64_t feed_forward_flops(std::uint64_t n, std::uint64_t d, std::uint64_t hidden);

inline constexpr std::size_t kFfnExpansion = 4;

}  // namespace invardiff::detail
