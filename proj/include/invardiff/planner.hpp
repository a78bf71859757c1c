// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Quantile-threshold cache planning.
//
// Phase 1 turns averaged rate matrices into a binary plan: per family, the cut
// q_s is the tau_s quantile of the pooled rates and an entry is cached when its
// rate is at or below the cut. Phase 2 re-runs full compute while substituting
// planned reuse into the rate bookkeeping only, then re-thresholds the chained
// rates against the frozen Phase-1 cuts.

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "invardiff/backbone.hpp"
#include "invardiff/rates.hpp"
#include "invardiff/sampler.hpp"

namespace invardiff {

/// Cut returned for tau = 0: no rate is <= -inf, so nothing is cached.
inline constexpr double kNoCacheCut = -std::numeric_limits<double>::infinity();

/// Nearest-rank quantile: element at 1-based rank ceil(tau * n) of the sorted
/// values. Throws on empty input, NaN values or tau outside [0, 1].
double quantile_cut(std::span<const double> values, double tau);

/// Number of leading steps forced to full compute, ceil(tau_warmup * T).
int warmup_steps(double tau_warmup, int steps);

/// Which rate index governs the reuse decision at step t.
enum class RateAlignment {
    /// rho_{t-1}: small |Z_t - Z_{t-1}| relative to the previous gap means
    /// step t may reuse Z_{t-1}. Default.
    PreviousStep,
    /// rho_t, the rate drawn at the same timestep as the decision.
    SameStep,
};

std::string to_string(RateAlignment alignment);
RateAlignment rate_alignment_from_string(const std::string& name);

constexpr int governing_rate_index(int t, RateAlignment alignment = RateAlignment::PreviousStep) noexcept {
    return alignment == RateAlignment::PreviousStep ? t - 1 : t;
}

struct ThresholdSet {
    /// tau per family, in registry order.
    std::vector<std::pair<FamilyId, double>> family;
    double step = 0.0;
    double warmup = 0.0;
    std::vector<std::vector<FamilyId>> ties;

    double tau(const FamilyId& name) const;
    bool has(const FamilyId& name) const noexcept;
    void set(const FamilyId& name, double tau);
    /// Every value in [0, 1], families exactly those of the registry, ties
    /// matching the registry and tied families carrying equal tau.
    void validate(const FamilyRegistry& registry) const;

    static ThresholdSet uniform(const FamilyRegistry& registry, double tau_module, double tau_step,
                                double tau_warmup = 0.0);

    friend bool operator==(const ThresholdSet&, const ThresholdSet&) = default;
};

/// Named presets: dit-fast, dit-slow, flux-fast, flux-slow.
ThresholdSet threshold_preset(const std::string& name);
std::vector<std::string> threshold_preset_names();
/// Registry the preset's family names belong to.
FamilyRegistry preset_registry(const std::string& name);

enum class PlanPhase { Initial, Corrected };

std::string to_string(PlanPhase phase);
PlanPhase plan_phase_from_string(const std::string& name);

struct PlanProvenance {
    std::string backbone_id;
    std::string schedule_hash;
    std::vector<std::string> calibration_inputs;
    std::string rate_operator = "first_difference_ratio";
    std::string pooling = "average";
    std::string rate_alignment = "previous";

    friend bool operator==(const PlanProvenance&, const PlanProvenance&) = default;
};

/// Binary cache plan over (timestep, layer, family) plus per-step gates.
class CachePlan {
public:
    CachePlan(int steps, int layers, std::vector<FamilyId> families);

    int steps() const noexcept { return steps_; }
    int layers() const noexcept { return layers_; }
    const std::vector<FamilyId>& families() const noexcept { return families_; }
    int family_count() const noexcept { return static_cast<int>(families_.size()); }
    std::size_t family_index(const FamilyId& name) const;

    bool cache(int t, int l, int f) const { return site_[index(t, l, f)] != 0; }
    void set_cache(int t, int l, int f, bool reuse) { site_[index(t, l, f)] = reuse ? 1 : 0; }
    bool step_skip(int t) const { return step_.at(static_cast<std::size_t>(t)) != 0; }
    void set_step_skip(int t, bool skip) { step_.at(static_cast<std::size_t>(t)) = skip ? 1 : 0; }

    std::span<const std::uint8_t> site_bits() const noexcept { return site_; }
    std::span<std::uint8_t> site_bits() noexcept { return site_; }
    std::span<const std::uint8_t> step_bits() const noexcept { return step_; }
    std::span<std::uint8_t> step_bits() noexcept { return step_; }

    std::size_t cached_count(int f) const;
    std::size_t cached_count() const;
    std::size_t step_skip_count() const;
    std::vector<int> skipped_steps() const;
    /// Cached fraction of family f over all T x L entries.
    double cached_fraction(int f) const;

    /// Gate for step t from the plan slice C[t].
    GateDirective gate(int t) const;
    /// Reuse decisions as a rate-bookkeeping policy.
    ShadowPolicy shadow_policy() const;
    /// True when C and c_step match bit for bit.
    bool same_decisions(const CachePlan& other) const noexcept;

    /// Per-family cut values aligned with families(); kNoCacheCut when tau = 0.
    std::vector<double> cuts;
    double step_cut = kNoCacheCut;
    ThresholdSet thresholds;
    /// Families sharing one plan slice.
    std::vector<std::vector<FamilyId>> tie_groups;
    PlanProvenance provenance;
    PlanPhase phase = PlanPhase::Initial;

    friend bool operator==(const CachePlan&, const CachePlan&) = default;

private:
    std::size_t index(int t, int l, int f) const;

    int steps_;
    int layers_;
    std::vector<FamilyId> families_;
    std::vector<std::uint8_t> site_;  // [t][l][f]
    std::vector<std::uint8_t> step_;
};

/// All-compute plan for a backbone and step count.
CachePlan zero_plan(const Backbone& backbone, int steps);

/// Invariant violation with the offending field path and the invariant name.
class PlanViolation : public std::runtime_error {
public:
    PlanViolation(std::string field, std::string invariant, const std::string& detail);
    std::string field;
    std::string invariant;
};

/// Checks dims, boundary and warm-up forcing, tie slices, thresholds and cuts.
void validate_plan(const CachePlan& plan);

/// Clears C and c_step at steps 0, T-1 and every warm-up step.
void apply_forcing(CachePlan& plan);

struct PlanCuts {
    std::vector<double> family;  // registry order
    double step = kNoCacheCut;
};

/// Quantile cuts from pooled rates. Tied families share a pool built from the
/// per-entry mean of their matrices.
PlanCuts compute_cuts(const CalibrationRates& rates, const ThresholdSet& thresholds,
                      const FamilyRegistry& registry,
                      RatePooling pooling = RatePooling::AverageThenQuantile);

/// Thresholds rate matrices against fixed cuts and applies forcing.
CachePlan threshold_plan(const std::vector<RateMatrix>& family_rates, const StepRateVector& step_rates,
                         const PlanCuts& cuts, const ThresholdSet& thresholds,
                         const FamilyRegistry& registry,
                         RateAlignment alignment = RateAlignment::PreviousStep);

/// Phase 1 from averaged statistics.
CachePlan initial_plan(const CalibrationRates& rates, const ThresholdSet& thresholds,
                       const FamilyRegistry& registry,
                       RatePooling pooling = RatePooling::AverageThenQuantile,
                       RateAlignment alignment = RateAlignment::PreviousStep);

/// Phase 1 from bare matrices (average-then-quantile pooling).
CachePlan initial_plan(const std::vector<RateMatrix>& family_rates, const StepRateVector& step_rates,
                       const ThresholdSet& thresholds, const FamilyRegistry& registry);

struct CorrectionOptions {
    RateOperator op = RateOperator::FirstDifferenceRatio;
    double eps = kRateEpsilon;
    int jobs = 1;
};

/// Phase-2 rates for plan0: full-compute trajectories with planned reuse
/// substituted into the bookkeeping, averaged per entry over the inputs.
CalibrationRates shadow_rates(const Backbone& backbone, const SampleSchedule& schedule,
                              const std::vector<SampleInput>& inputs, const CachePlan& plan0,
                              const CorrectionOptions& options = {});

/// Phase 2: re-threshold the chained-reuse rates against plan0's frozen cuts,
/// with plan0's rate alignment.
CachePlan resample_correct(const Backbone& backbone, const SampleSchedule& schedule,
                           const std::vector<SampleInput>& inputs, const CachePlan& plan0,
                           const CorrectionOptions& options = {});

/// Phase 2 for many plans with one full-compute trajectory per input.
std::vector<CachePlan> resample_correct_batch(const Backbone& backbone,
                                              const SampleSchedule& schedule,
                                              const std::vector<SampleInput>& inputs,
                                              const std::vector<CachePlan>& plans0,
                                              const CorrectionOptions& options = {});

struct CalibrateOptions {
    RateOperator op = RateOperator::FirstDifferenceRatio;
    RatePooling pooling = RatePooling::AverageThenQuantile;
    RateAlignment alignment = RateAlignment::PreviousStep;
    int jobs = 1;
    bool phase1_only = false;
};

struct CalibrationResult {
    CalibrationRates rates;
    CachePlan initial;
    /// Equal to `initial` when phase1_only is set.
    CachePlan final_plan;
};

/// Phase 1 and, unless phase1_only, Phase 2 on the same inputs.
CalibrationResult calibrate(const Backbone& backbone, const SampleSchedule& schedule,
                            const std::vector<SampleInput>& inputs, const ThresholdSet& thresholds,
                            const CalibrateOptions& options = {});

}  // namespace invardiff
