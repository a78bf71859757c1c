// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned on-disk formats: PlanFile JSON, threshold JSON and the stats CSV.
// Every loader either returns a fully validated object or throws a
// PlanViolation naming the field path and the violated invariant.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "invardiff/planner.hpp"

namespace invardiff {

inline constexpr int kPlanFormatVersion = 1;

std::string plan_to_json(const CachePlan& plan);
CachePlan plan_from_json(std::string_view text);

void save_plan(const CachePlan& plan, const std::filesystem::path& path);
CachePlan load_plan(const std::filesystem::path& path);

/// {"tau_step": .., "tau_warmup": .., "tau_<family>": ..}
std::string thresholds_to_json(const ThresholdSet& thresholds);
/// Parses and validates against `registry`. "tau_attn" is accepted for
/// "tau_mhsa"; families missing from the object are an error.
ThresholdSet thresholds_from_json(std::string_view text, const FamilyRegistry& registry);

/// One row of the stats CSV.
struct StatsRow {
    std::string operating_point;
    std::uint64_t flops = 0;
    double speedup_vs_baseline = 1.0;
    double latency_s = 0.0;
    std::vector<double> family_skip;  // aligned with StatsTable::families
    double step_skip_fraction = 0.0;
    double final_psnr = kPsnrCap;
    double final_mse = 0.0;
    double latency_cv = 0.0;

    friend bool operator==(const StatsRow&, const StatsRow&) = default;
};

struct StatsTable {
    std::vector<FamilyId> families;
    std::vector<StatsRow> rows;

    std::vector<std::string> header() const;
    friend bool operator==(const StatsTable&, const StatsTable&) = default;
};

std::string stats_csv_string(const StatsTable& table);
StatsTable parse_stats_csv(std::string_view text);
void save_stats(const StatsTable& table, const std::filesystem::path& path);

/// Whole-file read and write helpers shared by the loaders and the CLI.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace invardiff
