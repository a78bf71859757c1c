// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/backbone.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "toy_backbones.hpp"

namespace invardiff {

// ---- FamilyRegistry ---------------------------------------------------------

std::size_t FamilyRegistry::index_of(const FamilyId& name) const {
    const auto it = std::find(families.begin(), families.end(), name);
    if (it == families.end()) throw std::out_of_range("unknown module family '" + name + "'");
    return static_cast<std::size_t>(it - families.begin());
}

bool FamilyRegistry::contains(const FamilyId& name) const noexcept {
    return std::find(families.begin(), families.end(), name) != families.end();
}

int FamilyRegistry::total_hooks_per_layer() const noexcept {
    int n = 0;
    for (int h : hooks_per_layer) n += h;
    return n;
}

std::optional<std::size_t> FamilyRegistry::tie_group_of(const FamilyId& name) const noexcept {
    for (std::size_t g = 0; g < tie_groups.size(); ++g) {
        if (std::find(tie_groups[g].begin(), tie_groups[g].end(), name) != tie_groups[g].end()) {
            return g;
        }
    }
    return std::nullopt;
}

void FamilyRegistry::validate() const {
    if (families.empty()) throw std::invalid_argument("family registry is empty");
    if (hooks_per_layer.size() != families.size()) {
        throw std::invalid_argument("family registry: hooks_per_layer length mismatch");
    }
    std::set<FamilyId> seen;
    for (std::size_t i = 0; i < families.size(); ++i) {
        if (families[i].empty()) throw std::invalid_argument("family registry: empty family name");
        if (!seen.insert(families[i]).second) {
            throw std::invalid_argument("family registry: duplicate family '" + families[i] + "'");
        }
        if (hooks_per_layer[i] < 1) {
            throw std::invalid_argument("family registry: family '" + families[i] +
                                        "' must govern at least one hook");
        }
    }
    std::set<FamilyId> grouped;
    for (const auto& group : tie_groups) {
        if (group.empty()) throw std::invalid_argument("family registry: empty tie group");
        for (const auto& f : group) {
            if (!seen.count(f)) {
                throw std::invalid_argument("family registry: tie group names unknown family '" +
                                            f + "'");
            }
            if (!grouped.insert(f).second) {
                throw std::invalid_argument("family registry: family '" + f +
                                            "' appears in more than one tie group");
            }
        }
    }
}

FamilyRegistry dit_registry() { return FamilyRegistry{{"mhsa", "ffn"}, {}, {1, 1}}; }

FamilyRegistry dual_registry() {
    return FamilyRegistry{
        {"dual_attn", "dual_ff", "dual_context_ff", "single_attn", "single_ff"},
        {},
        {2, 1, 1, 1, 1}};
}

// ---- BackboneConfig ---------------------------------------------------------

std::string to_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::ToyDiT: return "toy_dit";
        case BackboneKind::ToyDual: return "toy_dual";
        case BackboneKind::Scripted: return "scripted";
    }
    return "unknown";
}

BackboneKind backbone_kind_from_string(const std::string& name) {
    if (name == "toy_dit" || name == "dit") return BackboneKind::ToyDiT;
    if (name == "toy_dual" || name == "dual") return BackboneKind::ToyDual;
    if (name == "scripted") return BackboneKind::Scripted;
    throw std::invalid_argument("unknown backbone kind '" + name +
                                "' (expected toy_dit, toy_dual or scripted)");
}

void BackboneConfig::validate() const {
    if (layers < 1) throw std::invalid_argument("backbone: layers must be positive");
    if (tokens < 1) throw std::invalid_argument("backbone: tokens must be positive");
    if (channels < 1) throw std::invalid_argument("backbone: channels must be positive");
    if (heads < 1) throw std::invalid_argument("backbone: heads must be positive");
    if (channels % heads != 0) {
        throw std::invalid_argument("backbone: channels (" + std::to_string(channels) +
                                    ") must be divisible by heads (" + std::to_string(heads) + ")");
    }
    if (cond_classes < 1) throw std::invalid_argument("backbone: cond_classes must be positive");
    if (kind == BackboneKind::Scripted && scripted) {
        scripted->validate();
        if (scripted->layers() != layers) {
            throw std::invalid_argument("backbone: scripted profile has " +
                                        std::to_string(scripted->layers()) + " layers, config has " +
                                        std::to_string(layers));
        }
    }
}

std::string BackboneConfig::id() const {
    std::ostringstream os;
    os << to_string(kind) << "-L" << layers << "-N" << tokens << "-d" << channels << "-h" << heads
       << "-c" << cond_classes << "-s" << seed;
    return os.str();
}

// ---- GateDirective / ModuleCache -------------------------------------------

GateDirective::GateDirective(int layers, int families)
    : layers_(layers),
      families_(families),
      actions_(static_cast<std::size_t>(layers) * static_cast<std::size_t>(families),
               SiteAction::Compute) {
    if (layers < 1 || families < 1) throw std::invalid_argument("GateDirective: empty shape");
}

std::size_t GateDirective::index(int layer, int family) const {
    if (layer < 0 || layer >= layers_ || family < 0 || family >= families_) {
        throw std::out_of_range("GateDirective: site (" + std::to_string(layer) + ", " +
                                std::to_string(family) + ") out of range");
    }
    return static_cast<std::size_t>(layer) * static_cast<std::size_t>(families_) +
           static_cast<std::size_t>(family);
}

std::size_t GateDirective::reuse_count() const noexcept {
    return static_cast<std::size_t>(
        std::count(actions_.begin(), actions_.end(), SiteAction::Reuse));
}

ModuleCache::ModuleCache(const FamilyRegistry& registry, int layers) : layers_(layers) {
    int offset = 0;
    for (int h : registry.hooks_per_layer) {
        hook_offsets_.push_back(offset);
        offset += h;
    }
    hook_offsets_.push_back(offset);
    hooks_per_layer_ = offset;
    slots_.resize(static_cast<std::size_t>(layers) * static_cast<std::size_t>(offset));
}

std::size_t ModuleCache::index(int layer, int family, int hook) const {
    if (layer < 0 || layer >= layers_ || family < 0 ||
        family + 1 >= static_cast<int>(hook_offsets_.size()) || hook < 0 ||
        hook >= hook_offsets_[static_cast<std::size_t>(family) + 1] -
                    hook_offsets_[static_cast<std::size_t>(family)]) {
        throw std::out_of_range("ModuleCache: slot (" + std::to_string(layer) + ", " +
                                std::to_string(family) + ", " + std::to_string(hook) +
                                ") out of range");
    }
    return static_cast<std::size_t>(layer * hooks_per_layer_ +
                                    hook_offsets_[static_cast<std::size_t>(family)] + hook);
}

bool ModuleCache::has(int layer, int family, int hook) const {
    return slots_[index(layer, family, hook)].has_value();
}

const TokenTensor& ModuleCache::get(int layer, int family, int hook) const {
    const auto& slot = slots_[index(layer, family, hook)];
    if (!slot) throw std::logic_error("ModuleCache: read of empty slot");
    return *slot;
}

void ModuleCache::put(int layer, int family, int hook, TokenTensor value) {
    slots_[index(layer, family, hook)] = std::move(value);
}

void ModuleCache::clear_slots() noexcept {
    for (auto& s : slots_) s.reset();
}

std::size_t ModuleCache::occupied() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(slots_.begin(), slots_.end(), [](const auto& s) { return s.has_value(); }));
}

CacheMissError::CacheMissError(int step_, int layer_, const FamilyId& family_, int hook)
    : std::runtime_error("REUSE requested with empty cache slot at step " + std::to_string(step_) +
                         ", layer " + std::to_string(layer_) + ", family '" + family_ +
                         "' (hook " + std::to_string(hook) + ")"),
      step(step_),
      layer(layer_),
      family(family_) {}

// ---- FlopTable --------------------------------------------------------------

std::uint64_t FlopTable::family_per_layer(std::size_t family) const {
    std::uint64_t s = 0;
    for (auto f : site.at(family)) s += f;
    return s;
}

std::uint64_t FlopTable::full_forward(int layers) const {
    std::uint64_t per_layer = 0;
    for (std::size_t f = 0; f < site.size(); ++f) per_layer += family_per_layer(f);
    return glue + static_cast<std::uint64_t>(layers) * per_layer;
}

// ---- Backbone ---------------------------------------------------------------

Backbone::Backbone(BackboneConfig config, FamilyRegistry registry)
    : config_(std::move(config)), registry_(std::move(registry)) {
    config_.validate();
    registry_.validate();
}

StepOutput Backbone::forward_step(const TokenTensor& x, int cond, int t, const GateDirective& gate,
                                  ModuleCache& cache) const {
    if (x.rows() != input_rows() || x.cols() != input_cols()) {
        throw ShapeError("forward_step: latent shape " + x.shape_string() + " does not match [" +
                         std::to_string(input_rows()) + "x" + std::to_string(input_cols()) + "]");
    }
    if (gate.layers() != config_.layers || gate.families() != static_cast<int>(registry_.size())) {
        throw std::invalid_argument("forward_step: gate shape does not match backbone");
    }
    if (gate.step_skip) {
        throw std::logic_error("forward_step: called with step_skip set; the caller must reuse z");
    }
    std::vector<SiteTouch> touched;
    touched.reserve(static_cast<std::size_t>(config_.layers * registry_.total_hooks_per_layer()));
    const SiteFn site = [&](int layer, int family, int hook,
                            const std::function<TokenTensor()>& compute) -> TokenTensor {
        if (gate.at(layer, family) == SiteAction::Reuse) {
            if (!cache.has(layer, family, hook)) {
                throw CacheMissError(t, layer, registry_.families[static_cast<std::size_t>(family)],
                                     hook);
            }
            touched.push_back({layer, family, hook, SiteAction::Reuse});
            return cache.get(layer, family, hook);
        }
        TokenTensor out = compute();
        cache.put(layer, family, hook, out);
        touched.push_back({layer, family, hook, SiteAction::Compute});
        return out;
    };
    TokenTensor z = run(x, cond, t, site);
    return StepOutput{std::move(z), std::move(touched)};
}

TokenTensor Backbone::reference_forward(const TokenTensor& x, int cond, int t) const {
    if (x.rows() != input_rows() || x.cols() != input_cols()) {
        throw ShapeError("reference_forward: latent shape " + x.shape_string() + " does not match");
    }
    const SiteFn site = [](int, int, int, const std::function<TokenTensor()>& compute) {
        return compute();
    };
    return run(x, cond, t, site);
}

std::unique_ptr<Backbone> build_backbone(const BackboneConfig& config) {
    config.validate();
    switch (config.kind) {
        case BackboneKind::ToyDiT: return std::make_unique<detail::ToyDiT>(config);
        case BackboneKind::ToyDual: return std::make_unique<detail::ToyDual>(config);
        case BackboneKind::Scripted: {
            ScriptedProfile profile =
                config.scripted ? *config.scripted : ScriptedProfile::constant(config.layers, 0.5);
            return std::make_unique<ScriptedBackbone>(config, std::move(profile));
        }
    }
    throw std::invalid_argument("build_backbone: unknown kind");
}

}  // namespace invardiff
