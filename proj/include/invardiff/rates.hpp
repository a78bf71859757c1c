// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Change-rate statistics.
//
// For a site output Z_t the rate at step t compares two consecutive
// first-order differences:
//
//   rho_t = |Z_{t+1} - Z_t|_1 / (|Z_t - Z_{t-1}|_1 + eps)
//
// and is defined for interior steps 1..T-2 only. The same ratio on the network
// output z_t gives the step rate. Statistics are accumulated online: each site
// keeps its previous tensor and previous difference norm, never the full trace.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "invardiff/backbone.hpp"
#include "invardiff/rate_matrix.hpp"
#include "invardiff/sampler.hpp"

namespace invardiff {

inline constexpr double kRateEpsilon = 1e-12;

/// d_next / (d_prev + eps). Both-zero gives 0: a frozen feature is maximally cacheable.
double rho_layer(double d_next, double d_prev, double eps = kRateEpsilon);

/// Alternative rate operators, kept for ablations. FirstDifferenceRatio is the
/// planning default; the others use the same index convention (value at t
/// describes the change from t to t+1).
enum class RateOperator {
    FirstDifferenceRatio,
    MseToPrevious,   // mse(Z_{t+1}, Z_t)
    CosineDistance,  // 1 - cos(Z_{t+1}, Z_t)
    RawNormRatio,    // |Z_{t+1}|_1 / (|Z_t|_1 + eps)
};

std::string to_string(RateOperator op);
RateOperator rate_operator_from_string(const std::string& name);

/// How per-input rates are pooled before quantiles are taken.
enum class RatePooling {
    AverageThenQuantile,  // quantile over the per-entry mean matrix
    ConcatenateEntries,   // quantile over the union of every input's entries
};

std::string to_string(RatePooling pooling);
RatePooling rate_pooling_from_string(const std::string& name);

struct RateOptions {
    RateOperator op = RateOperator::FirstDifferenceRatio;
    double eps = kRateEpsilon;
    /// Maximum number of inputs processed concurrently.
    int jobs = 1;
    /// Also produce the MSE / cosine-to-previous maps.
    bool similarity_maps = true;
};

/// Reuse decisions applied only to the rate bookkeeping: the forward still
/// computes everything, but a site (or the network output) marked for reuse
/// at step t contributes its previous shadow tensor instead of the fresh one.
struct ShadowPolicy {
    int steps = 0;
    int layers = 0;
    int families = 0;
    std::vector<std::uint8_t> site_reuse;  // [t][l][f]
    std::vector<std::uint8_t> step_reuse;  // [t]

    static ShadowPolicy none(int steps, int layers, int families);
    bool site(int t, int l, int f) const;
    bool step(int t) const;
};

/// Statistics from one input trajectory.
struct InputRates {
    std::vector<RateMatrix> families;
    StepRateVector step;
    /// MSE and cosine similarity to the previous step; column t=0 is 0.
    std::vector<RateMatrix> mse_maps;
    std::vector<RateMatrix> cos_maps;
};

/// Per-entry means over all inputs, plus the per-input statistics.
struct CalibrationRates {
    std::vector<RateMatrix> families;
    StepRateVector step;
    std::vector<RateMatrix> mse_maps;
    std::vector<RateMatrix> cos_maps;
    std::vector<InputRates> per_input;

    const RateMatrix& family(const FamilyId& name) const;
    int inputs() const noexcept { return static_cast<int>(per_input.size()); }
};

/// Full-compute trajectory of one input with any number of shadow policies
/// evaluated side by side. Returns one InputRates per policy.
std::vector<InputRates> collect_shadow_rates(const Backbone& backbone,
                                             const SampleSchedule& schedule,
                                             const SampleInput& input,
                                             const std::vector<ShadowPolicy>& policies,
                                             const RateOptions& options = {});

InputRates collect_input_rates(const Backbone& backbone, const SampleSchedule& schedule,
                               const SampleInput& input, const RateOptions& options = {});

/// Phase-1 statistics: one full trajectory per input, averaged per entry.
CalibrationRates collect_rates(const Backbone& backbone, const SampleSchedule& schedule,
                               const std::vector<SampleInput>& inputs,
                               const RateOptions& options = {});

/// Per-entry arithmetic mean, summed in input order.
CalibrationRates average_rates(std::vector<InputRates> per_input);

RateMatrix mean_matrix(const std::vector<const RateMatrix*>& matrices);

/// Mean squared difference over jointly defined entries.
double compare_rate_matrices(const RateMatrix& a, const RateMatrix& b);

/// MSE of each probe input's rate matrices against the mean over the
/// reference inputs; one row per probe, one column per family.
std::vector<std::vector<double>> cross_input_stability(const Backbone& backbone,
                                                       const SampleSchedule& schedule,
                                                       const std::vector<SampleInput>& reference,
                                                       const std::vector<SampleInput>& probes,
                                                       const RateOptions& options = {});

// ---- Export -------------------------------------------------------------------

class RateFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class HeatmapMode { Log2Rho, Mse, Cos };

std::string to_string(HeatmapMode mode);
HeatmapMode heatmap_mode_from_string(const std::string& name);

/// CSV with header "t,l,value"; defined entries in %.17g, undefined entries
/// with an empty value field.
void write_rate_csv(const RateMatrix& m, const std::filesystem::path& path);
std::string rate_csv_string(const RateMatrix& m);
RateMatrix read_rate_csv(const std::filesystem::path& path, const std::string& family);
RateMatrix parse_rate_csv(const std::string& text, const std::string& family);

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
    std::uint8_t at(int x, int y) const {
        return pixels.at(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                         static_cast<std::size_t>(x));
    }
};

/// Display values for a heatmap: x = timestep, y = layer.
/// Log2Rho paints undefined boundary entries as rho = 1 (log2 = 0); Mse and
/// Cos show log2 of the MSE and of the cosine distance, with column t=0 at 0.
std::vector<double> heatmap_display_values(const RateMatrix& m, HeatmapMode mode);

/// Min-max scaled 8-bit rendering; a constant image maps to gray 128.
GrayImage render_heatmap(const RateMatrix& m, HeatmapMode mode);

void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

/// Writes `<stem>.csv` (exact values) and `<stem>.pgm`.
void export_heatmap(const RateMatrix& m, HeatmapMode mode, const std::filesystem::path& stem);

}  // namespace invardiff
