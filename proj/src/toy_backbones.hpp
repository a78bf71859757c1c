// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "blocks.hpp"
#include "invardiff/backbone.hpp"

namespace invardiff::detail {

/// Pre-norm MHSA/FFN stack with additive step, class and position embeddings.
class ToyDiT final : public Backbone {
public:
    explicit ToyDiT(const BackboneConfig& config);

    std::vector<std::span<const double>> parameters() const override;

protected:
    TokenTensor run(const TokenTensor& x, int cond, int t, const SiteFn& site) const override;

private:
    TokenTensor w_in_, w_out_, pos_, class_emb_;
    std::vector<AttentionWeights> attn_;
    std::vector<FeedForwardWeights> ffn_;
};

/// Dual-stream blocks (image + context tokens, joint attention) followed by
/// single-stream blocks over the concatenated sequence. Layer index l
/// addresses dual block l for the dual_* families and single block l for the
/// single_* families.
class ToyDual final : public Backbone {
public:
    explicit ToyDual(const BackboneConfig& config);

    std::vector<std::span<const double>> parameters() const override;
    std::size_t context_tokens() const noexcept { return context_tokens_; }

protected:
    TokenTensor run(const TokenTensor& x, int cond, int t, const SiteFn& site) const override;

private:
    std::size_t context_tokens_;
    TokenTensor w_in_, w_out_, pos_, context_pos_, class_emb_;
    std::vector<AttentionWeights> image_attn_, context_attn_, single_attn_;
    std::vector<FeedForwardWeights> image_ff_, context_ff_, single_ff_;
};

void check_condition(const BackboneConfig& config, int cond);

}  // namespace invardiff::detail
