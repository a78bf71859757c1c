// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invardiff/backbone.hpp"

namespace invardiff {

/// Sub-site counts for one family over a whole run.
struct FamilyCounts {
    std::uint64_t computed = 0;
    std::uint64_t reused = 0;
    /// Sub-sites belonging to steps that were skipped entirely.
    std::uint64_t under_skipped_steps = 0;

    std::uint64_t total() const noexcept { return computed + reused + under_skipped_steps; }
    friend bool operator==(const FamilyCounts&, const FamilyCounts&) = default;
};

struct RunStats {
    int steps = 0;
    int step_skips = 0;
    int forward_calls = 0;
    int mask_events = 0;
    /// REUSE requests that found an empty slot and were computed instead.
    int degraded_reuses = 0;
    std::vector<FamilyId> families;
    std::vector<FamilyCounts> per_family;
    std::uint64_t flops = 0;
    double wall_seconds = 0.0;

    void reset(const Backbone& backbone, int steps);
    /// Books the touched list of one forward call and its FLOPs.
    void record_forward(const Backbone& backbone, const std::vector<SiteTouch>& touched);
    /// Books a skipped step: every sub-site counts as under a skipped step.
    void record_step_skip(const Backbone& backbone);

    std::uint64_t computed_sites() const noexcept;
    std::uint64_t reused_sites() const noexcept;
    std::uint64_t skipped_step_sites() const noexcept;
    /// Layer-level reuse fraction of one family (skipped steps excluded from the numerator).
    double family_skip_fraction(std::size_t family) const;
    double step_skip_fraction() const noexcept;
};

}  // namespace invardiff
