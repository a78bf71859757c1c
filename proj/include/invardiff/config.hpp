// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration files: backbone dims, schedule, thresholds and
// calibration settings, in the same JSON dialect as plan files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "invardiff/backbone.hpp"
#include "invardiff/planner.hpp"
#include "invardiff/rates.hpp"
#include "invardiff/sampler.hpp"

namespace invardiff {

struct RunConfig {
    BackboneConfig backbone;
    int steps = 28;
    double sigma_start = 1.0;
    double sigma_end = 0.0;
    std::optional<ThresholdSet> thresholds;
    /// 0 selects the default for the backbone kind.
    int inputs = 0;
    std::uint64_t seed = 42;
    int jobs = 1;
    RatePooling pooling = RatePooling::AverageThenQuantile;
    RateOperator op = RateOperator::FirstDifferenceRatio;
    RateAlignment alignment = RateAlignment::PreviousStep;

    SampleSchedule schedule() const { return SampleSchedule::linear(steps, sigma_start, sigma_end); }
    /// 16 class labels for toy DiT, 5 prompts for toy dual, 4 for scripted.
    int calibration_inputs() const;
    std::vector<SampleInput> calibration_set() const;
    CalibrateOptions calibrate_options(bool phase1_only = false) const;
};

/// Parses a config document. Unknown fields are rejected; a "preset" field
/// supplies thresholds that an explicit "thresholds" object overrides.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& config);

/// Backbone dims used by the speed/quality sweep.
RunConfig sweep_config();

}  // namespace invardiff
