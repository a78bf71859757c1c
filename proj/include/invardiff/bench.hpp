// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end measurement of baseline versus scheduled runs.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "invardiff/backbone.hpp"
#include "invardiff/plan_io.hpp"
#include "invardiff/planner.hpp"
#include "invardiff/sampler.hpp"

namespace invardiff {

/// Module thresholds named after the five dual/single-stream families.
struct ModuleBundle {
    double warmup = 0.0;
    double dual_attn = 0.0;
    double dual_ff = 0.0;
    double dual_context_ff = 0.0;
    double single_attn = 0.0;
    double single_ff = 0.0;
};

/// The seven sweep bundles.
const std::vector<ModuleBundle>& sweep_bundles();
/// The five tau_step values crossed with the bundles.
const std::vector<double>& sweep_step_values();

/// Thresholds for a registry: dual registries take the bundle verbatim; the
/// {mhsa, ffn} registry takes mhsa from dual_attn and ffn from dual_ff.
ThresholdSet bundle_thresholds(const ModuleBundle& bundle, double tau_step, const FamilyRegistry& registry);

struct OperatingPoint {
    std::string name;
    ThresholdSet thresholds;
    int bundle = -1;  // index into sweep_bundles(), -1 when not part of a sweep
};

/// bundles x step values, bundle-major.
std::vector<OperatingPoint> sweep_grid(const FamilyRegistry& registry);

struct BenchOptions {
    int repeats = 3;
    /// The baseline is timed again before every group of this many points.
    int baseline_interval = 5;
    CalibrateOptions calibrate;
};

struct PointResult {
    OperatingPoint point;
    std::optional<CachePlan> plan;  // empty for the baseline
    RunStats stats;                 // of the first evaluation input
    std::vector<double> latencies;  // per repeat, summed over evaluation inputs
    double median_latency = 0.0;
    double latency_cv = 0.0;
    std::uint64_t flops = 0;        // per trajectory
    /// Per repeat: the baseline timed just before this point's group over this point.
    std::vector<double> speedups;
    double speedup = 1.0;           // median of speedups
    double flop_speedup = 1.0;      // baseline flops / flops
    double final_psnr = kPsnrCap;   // mean over evaluation inputs
    double final_mse = 0.0;
};

struct BenchResult {
    std::vector<FamilyId> families;
    PointResult baseline;
    std::vector<PointResult> points;

    /// Baseline row first, then one row per operating point.
    StatsTable table(bool include_baseline = true) const;
};

/// Calibrates every point on `calibration` (Phase 1 shared, Phase 2 batched),
/// then times baseline and scheduled runs on `evaluation`, interleaving the
/// points within each repeat.
BenchResult run_sweep(const Backbone& backbone, const SampleSchedule& schedule,
                      const std::vector<SampleInput>& calibration, const std::vector<SampleInput>& evaluation,
                      const std::vector<OperatingPoint>& points, const BenchOptions& options = {});

BenchResult run_benchmark(const Backbone& backbone, const SampleSchedule& schedule,
                          const std::vector<SampleInput>& calibration, const std::vector<SampleInput>& evaluation,
                          const ThresholdSet& thresholds, const BenchOptions& options = {});

/// Times pre-built plans without calibrating.
BenchResult bench_plans(const Backbone& backbone, const SampleSchedule& schedule,
                        const std::vector<SampleInput>& evaluation, const std::vector<OperatingPoint>& points,
                        const std::vector<CachePlan>& plans, int repeats, int baseline_interval = 5);

double median(std::vector<double> values);
/// Sample standard deviation over mean; 0 for fewer than two values.
double coefficient_of_variation(const std::vector<double>& values);

struct TrendCheck {
    bool flops_monotone = true;
    std::vector<std::string> flop_violations;
    /// max |speedup / flop_speedup - 1| over the points.
    double worst_speedup_gap = 0.0;
    std::string worst_point;
};

/// Within each bundle, FLOPs must not increase as tau_step grows.
TrendCheck check_sweep_trend(const BenchResult& result);

struct CalibrationSizeRow {
    int inputs = 0;
    double final_psnr = kPsnrCap;
    double final_mse = 0.0;
    std::size_t cached_sites = 0;
    std::size_t step_skips = 0;
    std::uint64_t flops = 0;
    CachePlan plan;
};

/// For each K, calibrates on the first K inputs of `pool` and evaluates on `evaluation`.
std::vector<CalibrationSizeRow> calibration_size_study(const Backbone& backbone, const SampleSchedule& schedule,
                                                       const std::vector<SampleInput>& pool,
                                                       const std::vector<int>& sizes,
                                                       const std::vector<SampleInput>& evaluation,
                                                       const ThresholdSet& thresholds,
                                                       const CalibrateOptions& options = {});

std::string calibration_size_csv(const std::vector<CalibrationSizeRow>& rows);

}  // namespace invardiff
