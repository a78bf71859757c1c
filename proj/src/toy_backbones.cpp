// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "toy_backbones.hpp"

#include <cmath>

namespace invardiff::detail {
namespace {

using u64 = std::uint64_t;

double embed_bound(std::size_t d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

void append_params(std::vector<std::span<const double>>& out, const AttentionWeights& w) {
    out.push_back(w.wq.data());
    out.push_back(w.wk.data());
    out.push_back(w.wv.data());
    out.push_back(w.wo.data());
}

void append_params(std::vector<std::span<const double>>& out, const FeedForwardWeights& w) {
    out.push_back(w.w1.data());
    out.push_back(w.w2.data());
}

TokenTensor embed_tokens(const TokenTensor& x, const TokenTensor& w_in, const TokenTensor& pos,
                         std::span<const double> step_emb, std::span<const double> class_emb) {
    TokenTensor h = matmul(x, w_in);
    axpy(1.0, pos, h);
    add_row_vector(h, step_emb);
    add_row_vector(h, class_emb);
    return h;
}

}  // namespace

void check_condition(const BackboneConfig& config, int cond) {
    if (cond < 0 || cond >= config.cond_classes) {
        throw std::out_of_range("class index " + std::to_string(cond) + " outside [0, " +
                                std::to_string(config.cond_classes) + ")");
    }
}

// ---- ToyDiT -----------------------------------------------------------------

ToyDiT::ToyDiT(const BackboneConfig& config)
    : Backbone(config, dit_registry()),
      w_in_(1, 1),
      w_out_(1, 1),
      pos_(1, 1),
      class_emb_(1, 1) {
    const auto n = static_cast<std::size_t>(config.tokens);
    const auto d = static_cast<std::size_t>(config.channels);
    SeededRng rng(config.seed);
    w_in_ = uniform_tensor(d, d, embed_bound(d), rng);
    pos_ = uniform_tensor(n, d, embed_bound(d), rng);
    class_emb_ = uniform_tensor(static_cast<std::size_t>(config.cond_classes), d, 1.0, rng);
    for (int l = 0; l < config.layers; ++l) {
        attn_.emplace_back(d, rng);
        ffn_.emplace_back(d, kFfnExpansion * d, rng);
    }
    w_out_ = uniform_tensor(d, d, embed_bound(d), rng);

    const u64 N = n, D = d, H = static_cast<u64>(config.heads), L = static_cast<u64>(config.layers);
    flops_.site = {{layer_norm_flops(N, D) + attention_flops(N, N, D, H)},
                   {layer_norm_flops(N, D) + feed_forward_flops(N, D, kFfnExpansion * D)}};
    flops_.glue = 2 * N * D * D + 3 * N * D + L * 2 * 2 * N * D + layer_norm_flops(N, D) +
                  2 * N * D * D;
}

std::vector<std::span<const double>> ToyDiT::parameters() const {
    std::vector<std::span<const double>> out{w_in_.data(), pos_.data(), class_emb_.data()};
    for (std::size_t l = 0; l < attn_.size(); ++l) {
        append_params(out, attn_[l]);
        append_params(out, ffn_[l]);
    }
    out.push_back(w_out_.data());
    return out;
}

TokenTensor ToyDiT::run(const TokenTensor& x, int cond, int t, const SiteFn& site) const {
    check_condition(config_, cond);
    const auto d = static_cast<std::size_t>(config_.channels);
    const auto heads = static_cast<std::size_t>(config_.heads);
    const auto temb = step_embedding(t, d);
    TokenTensor h = embed_tokens(x, w_in_, pos_, temb, class_emb_.row(static_cast<std::size_t>(cond)));

    for (int l = 0; l < config_.layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const TokenTensor a = site(l, 0, 0, [&] {
            const TokenTensor hn = layer_norm(h);
            return attention(hn, hn, attn_[li], heads);
        });
        axpy(1.0, a, h);
        const TokenTensor f = site(l, 1, 0, [&] { return feed_forward(layer_norm(h), ffn_[li]); });
        axpy(1.0, f, h);
    }
    return matmul(layer_norm(h), w_out_);
}

// ---- ToyDual ----------------------------------------------------------------

ToyDual::ToyDual(const BackboneConfig& config)
    : Backbone(config, dual_registry()),
      context_tokens_(std::max<std::size_t>(1, static_cast<std::size_t>(config.tokens) / 4)),
      w_in_(1, 1),
      w_out_(1, 1),
      pos_(1, 1),
      context_pos_(1, 1),
      class_emb_(1, 1) {
    const auto n = static_cast<std::size_t>(config.tokens);
    const auto d = static_cast<std::size_t>(config.channels);
    SeededRng rng(config.seed);
    w_in_ = uniform_tensor(d, d, embed_bound(d), rng);
    pos_ = uniform_tensor(n, d, embed_bound(d), rng);
    context_pos_ = uniform_tensor(context_tokens_, d, 1.0, rng);
    class_emb_ = uniform_tensor(static_cast<std::size_t>(config.cond_classes), d, 1.0, rng);
    for (int l = 0; l < config.layers; ++l) {
        image_attn_.emplace_back(d, rng);
        context_attn_.emplace_back(d, rng);
        image_ff_.emplace_back(d, kFfnExpansion * d, rng);
        context_ff_.emplace_back(d, kFfnExpansion * d, rng);
    }
    for (int l = 0; l < config.layers; ++l) {
        single_attn_.emplace_back(d, rng);
        single_ff_.emplace_back(d, kFfnExpansion * d, rng);
    }
    w_out_ = uniform_tensor(d, d, embed_bound(d), rng);

    const u64 N = n, C = context_tokens_, J = n + context_tokens_, D = d;
    const u64 H = static_cast<u64>(config.heads), L = static_cast<u64>(config.layers);
    const u64 E = kFfnExpansion * D;
    flops_.site = {
        {layer_norm_flops(J, D) + layer_norm_flops(N, D) + attention_flops(N, J, D, H),
         layer_norm_flops(J, D) + layer_norm_flops(C, D) + attention_flops(C, J, D, H)},
        {layer_norm_flops(N, D) + feed_forward_flops(N, D, E)},
        {layer_norm_flops(C, D) + feed_forward_flops(C, D, E)},
        {layer_norm_flops(J, D) + attention_flops(J, J, D, H)},
        {layer_norm_flops(J, D) + feed_forward_flops(J, D, E)}};
    flops_.glue = 2 * N * D * D + 3 * N * D + 2 * C * D + L * 2 * 2 * J * D + L * 2 * 2 * J * D +
                  layer_norm_flops(N, D) + 2 * N * D * D;
}

std::vector<std::span<const double>> ToyDual::parameters() const {
    std::vector<std::span<const double>> out{w_in_.data(), pos_.data(), context_pos_.data(),
                                             class_emb_.data()};
    for (std::size_t l = 0; l < image_attn_.size(); ++l) {
        append_params(out, image_attn_[l]);
        append_params(out, context_attn_[l]);
        append_params(out, image_ff_[l]);
        append_params(out, context_ff_[l]);
        append_params(out, single_attn_[l]);
        append_params(out, single_ff_[l]);
    }
    out.push_back(w_out_.data());
    return out;
}

TokenTensor ToyDual::run(const TokenTensor& x, int cond, int t, const SiteFn& site) const {
    check_condition(config_, cond);
    const auto n = static_cast<std::size_t>(config_.tokens);
    const auto d = static_cast<std::size_t>(config_.channels);
    const auto heads = static_cast<std::size_t>(config_.heads);
    const auto temb = step_embedding(t, d);
    const auto cemb = class_emb_.row(static_cast<std::size_t>(cond));

    TokenTensor img = embed_tokens(x, w_in_, pos_, temb, cemb);
    TokenTensor ctx = context_pos_;
    add_row_vector(ctx, temb);
    add_row_vector(ctx, cemb);

    for (int l = 0; l < config_.layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        // Both attention hooks read the pre-update streams.
        const TokenTensor a_img = site(l, 0, 0, [&] {
            return attention(layer_norm(img), layer_norm(vstack(img, ctx)), image_attn_[li], heads);
        });
        const TokenTensor a_ctx = site(l, 0, 1, [&] {
            return attention(layer_norm(ctx), layer_norm(vstack(img, ctx)), context_attn_[li], heads);
        });
        axpy(1.0, a_img, img);
        axpy(1.0, a_ctx, ctx);
        const TokenTensor f_img =
            site(l, 1, 0, [&] { return feed_forward(layer_norm(img), image_ff_[li]); });
        axpy(1.0, f_img, img);
        const TokenTensor f_ctx =
            site(l, 2, 0, [&] { return feed_forward(layer_norm(ctx), context_ff_[li]); });
        axpy(1.0, f_ctx, ctx);
    }

    TokenTensor joint = vstack(img, ctx);
    for (int l = 0; l < config_.layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const TokenTensor a = site(l, 3, 0, [&] {
            const TokenTensor jn = layer_norm(joint);
            return attention(jn, jn, single_attn_[li], heads);
        });
        axpy(1.0, a, joint);
        const TokenTensor f =
            site(l, 4, 0, [&] { return feed_forward(layer_norm(joint), single_ff_[li]); });
        axpy(1.0, f, joint);
    }
    return matmul(layer_norm(slice_rows(joint, 0, n)), w_out_);
}

}  // namespace invardiff::detail
