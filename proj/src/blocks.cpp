// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "blocks.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace invardiff::detail {
namespace {

double init_bound(std::size_t d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

double gelu(double x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

}  // namespace

AttentionWeights::AttentionWeights(std::size_t d, SeededRng& rng)
    : wq(uniform_tensor(d, d, init_bound(d), rng)),
      wk(uniform_tensor(d, d, init_bound(d), rng)),
      wv(uniform_tensor(d, d, init_bound(d), rng)),
      wo(uniform_tensor(d, d, init_bound(d), rng)) {}

FeedForwardWeights::FeedForwardWeights(std::size_t d, std::size_t hidden, SeededRng& rng)
    : w1(uniform_tensor(d, hidden, init_bound(d), rng)),
      w2(uniform_tensor(hidden, d, init_bound(d), rng)) {}

TokenTensor attention(const TokenTensor& queries, const TokenTensor& keys_values,
                      const AttentionWeights& w, std::size_t heads) {
    const TokenTensor q = matmul(queries, w.wq);
    const TokenTensor k = matmul(keys_values, w.wk);
    const TokenTensor v = matmul(keys_values, w.wv);

    const std::size_t n_q = q.rows();
    const std::size_t n_k = k.rows();
    const std::size_t d = q.cols();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    TokenTensor mixed(n_q, d);
    std::vector<double> scores(n_k);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n_q; ++i) {
            const double* qi = q.row(i).data() + off;
            double max_score = -INFINITY;
            for (std::size_t j = 0; j < n_k; ++j) {
                const double* kj = k.row(j).data() + off;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                scores[j] = s * scale;
                max_score = std::max(max_score, scores[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < n_k; ++j) {
                scores[j] = std::exp(scores[j] - max_score);
                denom += scores[j];
            }
            double* out = mixed.row(i).data() + off;
            for (std::size_t j = 0; j < n_k; ++j) {
                const double p = scores[j] / denom;
                const double* vj = v.row(j).data() + off;
                for (std::size_t c = 0; c < dh; ++c) out[c] += p * vj[c];
            }
        }
    }
    return matmul(mixed, w.wo);
}

TokenTensor feed_forward(const TokenTensor& x, const FeedForwardWeights& w) {
    TokenTensor hidden = matmul(x, w.w1);
    for (double& v : hidden.data()) v = gelu(v);
    return matmul(hidden, w.w2);
}

std::vector<double> step_embedding(int t, std::size_t d) {
    std::vector<double> e(d);
    const std::size_t half = std::max<std::size_t>(1, d / 2);
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t k = j % half;
        const double freq = std::exp(-std::log(1000.0) * static_cast<double>(k) /
                                     static_cast<double>(half));
        const double arg = static_cast<double>(t) * freq * 0.25;
        e[j] = 0.5 * (j < half ? std::sin(arg) : std::cos(arg));
    }
    return e;
}

void add_row_vector(TokenTensor& x, std::span<const double> v) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += v[c];
    }
}

std::uint64_t layer_norm_flops(std::uint64_t n, std::uint64_t d) { return 8 * n * d; }

std::uint64_t attention_flops(std::uint64_t n_q, std::uint64_t n_k, std::uint64_t d,
                              std::uint64_t heads) {
    const std::uint64_t projections = 2 * n_q * d * d + 4 * n_k * d * d + 2 * n_q * d * d;
    const std::uint64_t mixing = 4 * n_q * n_k * d;
    const std::uint64_t softmax = 5 * n_q * n_k * heads;
    return projections + mixing + softmax;
}

std::uint64_t feed_forward_flops(std::uint64_t n, std::uint64_t d, std::uint64_t hidden) {
    return 4 * n * d * hidden + 8 * n * hidden;
}

}  // namespace invardiff::detail
