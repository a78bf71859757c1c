// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic toy backbones with per-module gating.
//
// A backbone is a stack of L blocks; each block exposes one gated site per
// module family, and a family may govern several sub-sites ("hooks") in the
// same block. Gating is driven by a GateDirective and a ModuleCache: a REUSE
// site substitutes the cached tensor, a COMPUTE site runs the module and
// overwrites the cache.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "invardiff/rate_matrix.hpp"
#include "invardiff/tensor.hpp"

namespace invardiff {

using FamilyId = std::string;

struct FamilyRegistry {
    std::vector<FamilyId> families;
    /// Families in one group share a threshold and a plan slice.
    std::vector<std::vector<FamilyId>> tie_groups;
    /// Gated sub-sites per layer, aligned with `families`.
    std::vector<int> hooks_per_layer;

    std::size_t size() const noexcept { return families.size(); }
    /// Throws std::out_of_range for unknown names.
    std::size_t index_of(const FamilyId& name) const;
    bool contains(const FamilyId& name) const noexcept;
    int hooks(std::size_t family) const { return hooks_per_layer.at(family); }
    int total_hooks_per_layer() const noexcept;
    /// Index of the tie group containing `name`, if any.
    std::optional<std::size_t> tie_group_of(const FamilyId& name) const noexcept;
    void validate() const;

    friend bool operator==(const FamilyRegistry&, const FamilyRegistry&) = default;
};

enum class BackboneKind { ToyDiT, ToyDual, Scripted };

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& name);

/// Ratio segments for one scripted site: segment i applies from its
/// `from_step` until the next segment starts.
struct RatioSegment {
    int from_step = 0;
    double ratio = 1.0;
    friend bool operator==(const RatioSegment&, const RatioSegment&) = default;
};

/// Per-(layer, family) first-difference ratios for the scripted backbone.
/// Families are {mhsa, ffn}. Site outputs follow Z_t = A(t) u with
/// |A(t+1) - A(t)| = a * prod_{k=1..t} r(k), so the measured rate at every
/// interior step is exactly r(t).
struct ScriptedProfile {
    int horizon = 64;  // largest step count the backbone can serve
    double amplitude = 1.0;
    /// [family][layer] -> segments sorted by from_step.
    std::vector<std::vector<std::vector<RatioSegment>>> sites;

    static ScriptedProfile constant(int layers, double ratio, int horizon = 64);
    /// r_before for t < switch_step, r_after from switch_step on.
    static ScriptedProfile piecewise(int layers, int switch_step, double r_before, double r_after,
                                     int horizon = 64);
    /// Different constant ratio for each family.
    static ScriptedProfile per_family(int layers, double r_mhsa, double r_ffn, int horizon = 64);

    double ratio(int layer, int family, int t) const;
    int layers() const noexcept {
        return sites.empty() ? 0 : static_cast<int>(sites.front().size());
    }
    void validate() const;

    friend bool operator==(const ScriptedProfile&, const ScriptedProfile&) = default;
};

struct BackboneConfig {
    BackboneKind kind = BackboneKind::ToyDiT;
    int layers = 4;
    int tokens = 16;
    int channels = 32;
    int heads = 4;
    int cond_classes = 10;
    std::uint64_t seed = 42;
    /// Used only by the scripted backbone; a constant 0.5 profile otherwise.
    std::optional<ScriptedProfile> scripted;

    void validate() const;
    /// Short identifier recorded in plan provenance.
    std::string id() const;
};

enum class SiteAction : std::uint8_t { Compute = 0, Reuse = 1 };

/// Per-step gating decision for every (layer, family).
class GateDirective {
public:
    GateDirective(int layers, int families);
    static GateDirective all_compute(int layers, int families) {
        return GateDirective(layers, families);
    }

    SiteAction at(int layer, int family) const { return actions_.at(index(layer, family)); }
    void set(int layer, int family, SiteAction action) { actions_.at(index(layer, family)) = action; }
    int layers() const noexcept { return layers_; }
    int families() const noexcept { return families_; }
    std::size_t reuse_count() const noexcept;

    bool step_skip = false;

private:
    std::size_t index(int layer, int family) const;

    int layers_;
    int families_;
    std::vector<SiteAction> actions_;
};

struct SiteTouch {
    int layer;
    int family;
    int hook;
    SiteAction action;
    friend bool operator==(const SiteTouch&, const SiteTouch&) = default;
};

/// Cached module outputs for one run. Owned by exactly one run.
class ModuleCache {
public:
    ModuleCache(const FamilyRegistry& registry, int layers);

    bool has(int layer, int family, int hook) const;
    const TokenTensor& get(int layer, int family, int hook) const;
    void put(int layer, int family, int hook, TokenTensor value);
    /// Empties every layer slot. Does not touch last_net.
    void clear_slots() noexcept;
    std::size_t occupied() const noexcept;

    /// Previous network output, z_{t-1}.
    std::optional<TokenTensor> last_net;
    /// Set after a step-level reuse; the next computed step masks all slots once.
    bool mask_pending = false;

private:
    std::size_t index(int layer, int family, int hook) const;

    int layers_;
    std::vector<int> hook_offsets_;
    int hooks_per_layer_;
    std::vector<std::optional<TokenTensor>> slots_;
};

class CacheMissError : public std::runtime_error {
public:
    CacheMissError(int step, int layer, const FamilyId& family, int hook);
    int step;
    int layer;
    FamilyId family;
};

/// Analytic FLOP counts. `site[f][h]` is the cost of computing hook h of
/// family f in one layer; `glue` is the ungated per-forward work.
struct FlopTable {
    std::vector<std::vector<std::uint64_t>> site;
    std::uint64_t glue = 0;

    std::uint64_t family_per_layer(std::size_t family) const;
    std::uint64_t full_forward(int layers) const;
};

struct StepOutput {
    TokenTensor z;
    std::vector<SiteTouch> touched;
};

class Backbone {
public:
    virtual ~Backbone() = default;

    const BackboneConfig& config() const noexcept { return config_; }
    const FamilyRegistry& registry() const noexcept { return registry_; }
    const FlopTable& flop_table() const noexcept { return flops_; }
    int layers() const noexcept { return config_.layers; }
    std::string id() const { return config_.id(); }

    /// One network evaluation at step t under `gate`. Computed sites
    /// overwrite their cache slot; REUSE of an empty slot throws CacheMissError.
    StepOutput forward_step(const TokenTensor& x, int cond, int t, const GateDirective& gate,
                            ModuleCache& cache) const;

    /// Ungated forward that touches no cache.
    TokenTensor reference_forward(const TokenTensor& x, int cond, int t) const;

    ModuleCache make_cache() const { return ModuleCache(registry_, config_.layers); }
    GateDirective all_compute_gate() const {
        return GateDirective::all_compute(config_.layers, static_cast<int>(registry_.size()));
    }

    /// Flat views of every parameter array, for determinism checks.
    virtual std::vector<std::span<const double>> parameters() const = 0;

    /// Input latent shape.
    std::size_t input_rows() const noexcept { return static_cast<std::size_t>(config_.tokens); }
    std::size_t input_cols() const noexcept { return static_cast<std::size_t>(config_.channels); }

protected:
    Backbone(BackboneConfig config, FamilyRegistry registry);

    /// Returns the output of site (layer, family, hook), computing it via
    /// `compute` or substituting a cached tensor.
    using SiteFn = std::function<TokenTensor(int layer, int family, int hook,
                                             const std::function<TokenTensor()>& compute)>;

    virtual TokenTensor run(const TokenTensor& x, int cond, int t, const SiteFn& site) const = 0;

    BackboneConfig config_;
    FamilyRegistry registry_;
    FlopTable flops_;
};

/// Families {mhsa, ffn}.
FamilyRegistry dit_registry();
/// The five dual/single-stream families; dual_attn governs two attention hooks.
FamilyRegistry dual_registry();

std::unique_ptr<Backbone> build_backbone(const BackboneConfig& config);

/// Extra surface of the scripted backbone used by oracles.
class ScriptedBackbone : public Backbone {
public:
    ScriptedBackbone(BackboneConfig config, ScriptedProfile profile);

    /// Ground-truth module output for (layer, family) at step t.
    TokenTensor site_output(int layer, int family, int t) const;
    /// Scalar A(t) with site_output = A(t) * direction.
    double coefficient(int layer, int family, int t) const;
    const ScriptedProfile& profile() const noexcept { return profile_; }
    /// Closed-form rates including the eps regularizer:
    /// |u|_1 D(t) / (|u|_1 D(t-1) + eps), with D from the profile.
    std::vector<RateMatrix> analytic_rates(int steps, double eps = 1e-12) const;

    std::vector<std::span<const double>> parameters() const override;

protected:
    TokenTensor run(const TokenTensor& x, int cond, int t, const SiteFn& site) const override;

private:
    ScriptedProfile profile_;
    // [family][layer][t]
    std::vector<std::vector<std::vector<double>>> coeff_;
    // [family][layer]
    std::vector<std::vector<TokenTensor>> direction_;
};

/// Analytic rates of a scripted profile: rho = r(t) at interior steps
/// 1..steps-2, undefined at both boundaries. One matrix per family.
std::vector<RateMatrix> scripted_rates(const ScriptedProfile& profile, int steps);

}  // namespace invardiff
