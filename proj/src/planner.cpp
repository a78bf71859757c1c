// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/planner.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <set>

namespace invardiff {

double quantile_cut(std::span<const double> values, double tau) {
    if (values.empty()) throw std::invalid_argument("quantile_cut: empty input");
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw std::invalid_argument("quantile_cut: tau must be in [0, 1], got " + std::to_string(tau));
    }
    for (double v : values) {
        if (std::isnan(v)) throw std::invalid_argument("quantile_cut: NaN in input");
    }
    if (tau == 0.0) return kNoCacheCut;
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(tau * static_cast<double>(n) - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::vector<double> sorted(values.begin(), values.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
    return sorted[rank - 1];
}

int warmup_steps(double tau_warmup, int steps) {
    if (!(tau_warmup >= 0.0 && tau_warmup <= 1.0)) {
        throw std::invalid_argument("warmup_steps: tau_warmup must be in [0, 1]");
    }
    const int w = static_cast<int>(std::ceil(tau_warmup * static_cast<double>(steps) - 1e-9));
    return std::clamp(w, 0, steps);
}

// ---- ThresholdSet ---------------------------------------------------------------

double ThresholdSet::tau(const FamilyId& name) const {
    for (const auto& [f, v] : family) {
        if (f == name) return v;
    }
    throw std::out_of_range("no threshold for family '" + name + "'");
}

bool ThresholdSet::has(const FamilyId& name) const noexcept {
    return std::any_of(family.begin(), family.end(), [&](const auto& p) { return p.first == name; });
}

void ThresholdSet::set(const FamilyId& name, double tau) {
    for (auto& [f, v] : family) {
        if (f == name) {
            v = tau;
            return;
        }
    }
    family.emplace_back(name, tau);
}

void ThresholdSet::validate(const FamilyRegistry& registry) const {
    auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_range(step)) throw std::invalid_argument("thresholds: tau_step must be in [0, 1]");
    if (!in_range(warmup)) throw std::invalid_argument("thresholds: tau_warmup must be in [0, 1]");
    std::set<FamilyId> seen;
    for (const auto& [f, v] : family) {
        if (!registry.contains(f)) throw std::invalid_argument("thresholds: unknown family '" + f + "'");
        if (!seen.insert(f).second) throw std::invalid_argument("thresholds: duplicate family '" + f + "'");
        if (!in_range(v)) throw std::invalid_argument("thresholds: tau_" + f + " must be in [0, 1]");
    }
    for (const auto& f : registry.families) {
        if (!seen.count(f)) throw std::invalid_argument("thresholds: missing tau_" + f);
    }
    if (ties != registry.tie_groups) {
        throw std::invalid_argument("thresholds: tie groups differ from the backbone registry");
    }
    for (const auto& group : ties) {
        for (const auto& f : group) {
            if (tau(f) != tau(group.front())) {
                throw std::invalid_argument("thresholds: tied families " + group.front() + " and " + f +
                                            " carry different tau");
            }
        }
    }
}

ThresholdSet ThresholdSet::uniform(const FamilyRegistry& registry, double tau_module, double tau_step,
                                   double tau_warmup) {
    ThresholdSet t;
    for (const auto& f : registry.families) t.family.emplace_back(f, tau_module);
    t.step = tau_step;
    t.warmup = tau_warmup;
    t.ties = registry.tie_groups;
    return t;
}

namespace {

ThresholdSet make_preset(const FamilyRegistry& reg, double warmup, double step,
                         std::vector<double> taus) {
    ThresholdSet t;
    for (std::size_t i = 0; i < reg.size(); ++i) t.family.emplace_back(reg.families[i], taus.at(i));
    t.step = step;
    t.warmup = warmup;
    t.ties = reg.tie_groups;
    return t;
}

}  // namespace

ThresholdSet threshold_preset(const std::string& name) {
    if (name == "dit-fast") return make_preset(dit_registry(), 0.0, 0.63, {0.22, 0.22});
    if (name == "dit-slow") return make_preset(dit_registry(), 0.0, 0.61, {0.20, 0.20});
    if (name == "flux-fast") {
        return make_preset(dual_registry(), 0.10, 0.70, {0.68, 0.68, 0.68, 0.68, 0.68});
    }
    if (name == "flux-slow") {
        return make_preset(dual_registry(), 0.22, 0.72, {0.68, 0.66, 0.00, 0.68, 0.62});
    }
    throw std::invalid_argument("unknown preset '" + name + "' (expected one of dit-fast, dit-slow, "
                                "flux-fast, flux-slow)");
}

std::vector<std::string> threshold_preset_names() {
    return {"dit-fast", "dit-slow", "flux-fast", "flux-slow"};
}

FamilyRegistry preset_registry(const std::string& name) {
    if (name.rfind("dit-", 0) == 0) return dit_registry();
    if (name.rfind("flux-", 0) == 0) return dual_registry();
    throw std::invalid_argument("unknown preset '" + name + "'");
}

std::string to_string(RateAlignment alignment) {
    return alignment == RateAlignment::PreviousStep ? "previous" : "same";
}

RateAlignment rate_alignment_from_string(const std::string& name) {
    if (name == "previous") return RateAlignment::PreviousStep;
    if (name == "same") return RateAlignment::SameStep;
    throw std::invalid_argument("unknown rate alignment '" + name + "' (expected previous|same)");
}

std::string to_string(PlanPhase phase) {
    return phase == PlanPhase::Initial ? "initial" : "corrected";
}

PlanPhase plan_phase_from_string(const std::string& name) {
    if (name == "initial") return PlanPhase::Initial;
    if (name == "corrected") return PlanPhase::Corrected;
    throw std::invalid_argument("unknown plan phase '" + name + "'");
}

// ---- CachePlan -----------------------------------------------------------------

CachePlan::CachePlan(int steps, int layers, std::vector<FamilyId> families)
    : steps_(steps), layers_(layers), families_(std::move(families)) {
    if (steps_ < 1 || layers_ < 1 || families_.empty()) {
        throw std::invalid_argument("CachePlan: dimensions must be positive");
    }
    site_.assign(static_cast<std::size_t>(steps_) * static_cast<std::size_t>(layers_) * families_.size(), 0);
    step_.assign(static_cast<std::size_t>(steps_), 0);
    cuts.assign(families_.size(), kNoCacheCut);
}

std::size_t CachePlan::index(int t, int l, int f) const {
    if (t < 0 || t >= steps_ || l < 0 || l >= layers_ || f < 0 || f >= family_count()) {
        throw std::out_of_range("CachePlan: index (" + std::to_string(t) + ", " + std::to_string(l) + ", " +
                                std::to_string(f) + ") out of range");
    }
    return (static_cast<std::size_t>(t) * static_cast<std::size_t>(layers_) + static_cast<std::size_t>(l)) *
               families_.size() +
           static_cast<std::size_t>(f);
}

std::size_t CachePlan::family_index(const FamilyId& name) const {
    const auto it = std::find(families_.begin(), families_.end(), name);
    if (it == families_.end()) throw std::out_of_range("plan has no family '" + name + "'");
    return static_cast<std::size_t>(it - families_.begin());
}

std::size_t CachePlan::cached_count(int f) const {
    std::size_t n = 0;
    for (int t = 0; t < steps_; ++t) {
        for (int l = 0; l < layers_; ++l) n += cache(t, l, f) ? 1 : 0;
    }
    return n;
}

std::size_t CachePlan::cached_count() const {
    return static_cast<std::size_t>(std::count(site_.begin(), site_.end(), std::uint8_t{1}));
}

std::size_t CachePlan::step_skip_count() const {
    return static_cast<std::size_t>(std::count(step_.begin(), step_.end(), std::uint8_t{1}));
}

std::vector<int> CachePlan::skipped_steps() const {
    std::vector<int> out;
    for (int t = 0; t < steps_; ++t) {
        if (step_skip(t)) out.push_back(t);
    }
    return out;
}

double CachePlan::cached_fraction(int f) const {
    return static_cast<double>(cached_count(f)) / static_cast<double>(steps_ * layers_);
}

GateDirective CachePlan::gate(int t) const {
    GateDirective g(layers_, family_count());
    for (int l = 0; l < layers_; ++l) {
        for (int f = 0; f < family_count(); ++f) {
            if (cache(t, l, f)) g.set(l, f, SiteAction::Reuse);
        }
    }
    g.step_skip = step_skip(t);
    return g;
}

ShadowPolicy CachePlan::shadow_policy() const {
    ShadowPolicy p;
    p.steps = steps_;
    p.layers = layers_;
    p.families = family_count();
    p.site_reuse = site_;
    p.step_reuse = step_;
    return p;
}

bool CachePlan::same_decisions(const CachePlan& other) const noexcept {
    return steps_ == other.steps_ && layers_ == other.layers_ && families_ == other.families_ &&
           site_ == other.site_ && step_ == other.step_;
}

CachePlan zero_plan(const Backbone& backbone, int steps) {
    CachePlan plan(steps, backbone.layers(), backbone.registry().families);
    const auto& reg = backbone.registry();
    plan.thresholds = ThresholdSet::uniform(reg, 0.0, 0.0, 0.0);
    plan.tie_groups = reg.tie_groups;
    plan.provenance.backbone_id = backbone.id();
    plan.phase = PlanPhase::Corrected;
    return plan;
}

PlanViolation::PlanViolation(std::string field_, std::string invariant_, const std::string& detail)
    : std::runtime_error(field_ + ": " + invariant_ + " violated: " + detail),
      field(std::move(field_)),
      invariant(std::move(invariant_)) {}

namespace {

std::string site_path(const CachePlan& p, int t, int l, int f) {
    return "plan.C[" + std::to_string(t) + "][" + std::to_string(l) + "][" +
           p.families()[static_cast<std::size_t>(f)] + "]";
}

}  // namespace

void validate_plan(const CachePlan& plan) {
    const int T = plan.steps();
    if (T < 3) throw PlanViolation("plan.T", "dims", "at least 3 steps required");
    {
        std::set<FamilyId> uniq(plan.families().begin(), plan.families().end());
        if (uniq.size() != plan.families().size()) {
            throw PlanViolation("plan.families", "unique_families", "duplicate family name");
        }
    }
    for (std::size_t i = 0; i < plan.site_bits().size(); ++i) {
        if (plan.site_bits()[i] > 1) throw PlanViolation("plan.C", "binary", "entry is not 0 or 1");
    }
    for (std::size_t i = 0; i < plan.step_bits().size(); ++i) {
        if (plan.step_bits()[i] > 1) throw PlanViolation("plan.c_step", "binary", "entry is not 0 or 1");
    }
    if (plan.cuts.size() != plan.families().size()) {
        throw PlanViolation("cut_values.families", "dims", "one cut per family required");
    }
    for (std::size_t f = 0; f < plan.cuts.size(); ++f) {
        const double c = plan.cuts[f];
        if (std::isnan(c) || c == std::numeric_limits<double>::infinity()) {
            throw PlanViolation("cut_values.families." + plan.families()[f], "finite_cut",
                                "cut must be finite or the no-cache sentinel");
        }
    }
    if (std::isnan(plan.step_cut) || plan.step_cut == std::numeric_limits<double>::infinity()) {
        throw PlanViolation("cut_values.step", "finite_cut", "cut must be finite or the no-cache sentinel");
    }

    const auto& th = plan.thresholds;
    auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_range(th.step)) throw PlanViolation("thresholds.tau_step", "threshold_range", "must be in [0, 1]");
    if (!in_range(th.warmup)) {
        throw PlanViolation("thresholds.tau_warmup", "threshold_range", "must be in [0, 1]");
    }
    if (th.family.size() != plan.families().size()) {
        throw PlanViolation("thresholds", "threshold_families", "one tau per plan family required");
    }
    for (const auto& f : plan.families()) {
        if (!th.has(f)) throw PlanViolation("thresholds.tau_" + f, "threshold_families", "missing");
        if (!in_range(th.tau(f))) {
            throw PlanViolation("thresholds.tau_" + f, "threshold_range", "must be in [0, 1]");
        }
    }

    for (std::size_t g = 0; g < plan.tie_groups.size(); ++g) {
        const auto& group = plan.tie_groups[g];
        const std::string path = "tie_groups[" + std::to_string(g) + "]";
        if (group.size() < 2) throw PlanViolation(path, "tie_groups", "a tie group needs two families");
        std::vector<int> idx;
        for (const auto& name : group) {
            const auto it = std::find(plan.families().begin(), plan.families().end(), name);
            if (it == plan.families().end()) {
                throw PlanViolation(path, "tie_groups", "unknown family '" + name + "'");
            }
            idx.push_back(static_cast<int>(it - plan.families().begin()));
            if (th.tau(name) != th.tau(group.front())) {
                throw PlanViolation("thresholds.tau_" + name, "tie_threshold",
                                    "tied with " + group.front() + " but tau differs");
            }
        }
        for (int t = 0; t < T; ++t) {
            for (int l = 0; l < plan.layers(); ++l) {
                for (std::size_t k = 1; k < idx.size(); ++k) {
                    if (plan.cache(t, l, idx[k]) != plan.cache(t, l, idx[0])) {
                        throw PlanViolation(site_path(plan, t, l, idx[k]), "tie_slices",
                                            "differs from tied family " + group.front());
                    }
                }
            }
        }
    }

    const int warm = warmup_steps(th.warmup, T);
    for (int t = 0; t < T; ++t) {
        const bool boundary = t == 0 || t == T - 1;
        if (!boundary && t >= warm) continue;
        const std::string invariant = boundary ? "forced_boundary" : "warmup_forcing";
        if (plan.step_skip(t)) {
            throw PlanViolation("plan.c_step[" + std::to_string(t) + "]", invariant, "step must compute");
        }
        for (int l = 0; l < plan.layers(); ++l) {
            for (int f = 0; f < plan.family_count(); ++f) {
                if (plan.cache(t, l, f)) throw PlanViolation(site_path(plan, t, l, f), invariant, "site must compute");
            }
        }
    }
}

void apply_forcing(CachePlan& plan) {
    const int T = plan.steps();
    const int warm = warmup_steps(plan.thresholds.warmup, T);
    for (int t = 0; t < T; ++t) {
        if (t != 0 && t != T - 1 && t >= warm) continue;
        plan.set_step_skip(t, false);
        for (int l = 0; l < plan.layers(); ++l) {
            for (int f = 0; f < plan.family_count(); ++f) plan.set_cache(t, l, f, false);
        }
    }
}

// ---- Phase 1 --------------------------------------------------------------------

namespace {

// Families whose pool and plan slice are merged with `f`, in registry order.
std::vector<std::size_t> pool_members(const FamilyRegistry& reg, std::size_t f) {
    if (const auto g = reg.tie_group_of(reg.families[f])) {
        std::vector<std::size_t> out;
        for (const auto& name : reg.tie_groups[*g]) out.push_back(reg.index_of(name));
        return out;
    }
    return {f};
}

// Per-entry mean of the tied matrices; a single family is returned unchanged.
RateMatrix pooled_matrix(const std::vector<RateMatrix>& rates, const std::vector<std::size_t>& members) {
    if (members.size() == 1) return rates.at(members[0]);
    const RateMatrix& first = rates.at(members[0]);
    RateMatrix out(first.family(), first.steps(), first.layers());
    for (int t = 0; t < first.steps(); ++t) {
        for (int l = 0; l < first.layers(); ++l) {
            double sum = 0.0;
            bool all = true;
            for (auto m : members) {
                const auto& r = rates.at(m);
                if (!r.same_layout(first)) throw ShapeError("tied rate matrices differ in layout");
                if (!r.defined(t, l)) {
                    all = false;
                    break;
                }
                sum += r.value(t, l);
            }
            if (all) out.set(t, l, sum / static_cast<double>(members.size()));
        }
    }
    return out;
}

void check_rates(const std::vector<RateMatrix>& rates, const StepRateVector& step,
                 const FamilyRegistry& reg) {
    if (rates.size() != reg.size()) {
        throw std::invalid_argument("planner: expected one rate matrix per registry family");
    }
    for (std::size_t f = 0; f < reg.size(); ++f) {
        if (rates[f].family() != reg.families[f]) {
            throw std::invalid_argument("planner: rate matrix order differs from registry at '" +
                                        rates[f].family() + "'");
        }
        if (!rates[f].same_layout(rates[0]) || rates[f].steps() != step.steps()) {
            throw ShapeError("planner: rate matrices disagree on dimensions");
        }
    }
}

double cut_or_sentinel(const std::vector<double>& pool, double tau) {
    if (tau == 0.0) return kNoCacheCut;
    if (pool.empty()) throw std::invalid_argument("planner: no defined rates to threshold");
    return quantile_cut(pool, tau);
}

}  // namespace

PlanCuts compute_cuts(const CalibrationRates& rates, const ThresholdSet& thresholds,
                      const FamilyRegistry& registry, RatePooling pooling) {
    thresholds.validate(registry);
    check_rates(rates.families, rates.step, registry);
    PlanCuts cuts;
    for (std::size_t f = 0; f < registry.size(); ++f) {
        const auto members = pool_members(registry, f);
        std::vector<double> pool;
        if (pooling == RatePooling::AverageThenQuantile || rates.per_input.empty()) {
            pool = pooled_matrix(rates.families, members).defined_values();
        } else {
            for (const auto& in : rates.per_input) {
                const auto v = pooled_matrix(in.families, members).defined_values();
                pool.insert(pool.end(), v.begin(), v.end());
            }
        }
        cuts.family.push_back(cut_or_sentinel(pool, thresholds.tau(registry.families[f])));
    }
    std::vector<double> step_pool;
    if (pooling == RatePooling::AverageThenQuantile || rates.per_input.empty()) {
        step_pool = rates.step.defined_values();
    } else {
        for (const auto& in : rates.per_input) {
            const auto v = in.step.defined_values();
            step_pool.insert(step_pool.end(), v.begin(), v.end());
        }
    }
    cuts.step = cut_or_sentinel(step_pool, thresholds.step);
    return cuts;
}

CachePlan threshold_plan(const std::vector<RateMatrix>& family_rates, const StepRateVector& step_rates,
                         const PlanCuts& cuts, const ThresholdSet& thresholds,
                         const FamilyRegistry& registry, RateAlignment alignment) {
    check_rates(family_rates, step_rates, registry);
    if (cuts.family.size() != registry.size()) throw std::invalid_argument("planner: one cut per family required");
    const int T = step_rates.steps();
    const int L = family_rates.front().layers();
    CachePlan plan(T, L, registry.families);
    plan.thresholds = thresholds;
    plan.tie_groups = registry.tie_groups;
    plan.cuts = cuts.family;
    plan.step_cut = cuts.step;
    plan.provenance.rate_alignment = to_string(alignment);

    for (std::size_t f = 0; f < registry.size(); ++f) {
        const RateMatrix pooled = pooled_matrix(family_rates, pool_members(registry, f));
        const double q = cuts.family[f];
        for (int t = 0; t < T; ++t) {
            const int r = governing_rate_index(t, alignment);
            if (r < 0 || r >= T) continue;
            for (int l = 0; l < L; ++l) {
                if (pooled.defined(r, l) && pooled.value(r, l) <= q) plan.set_cache(t, l, static_cast<int>(f), true);
            }
        }
    }
    for (int t = 0; t < T; ++t) {
        const int r = governing_rate_index(t, alignment);
        if (r < 0 || r >= T) continue;
        if (step_rates.defined(r) && step_rates.value(r) <= cuts.step) plan.set_step_skip(t, true);
    }
    apply_forcing(plan);
    return plan;
}

CachePlan initial_plan(const CalibrationRates& rates, const ThresholdSet& thresholds,
                       const FamilyRegistry& registry, RatePooling pooling, RateAlignment alignment) {
    const auto cuts = compute_cuts(rates, thresholds, registry, pooling);
    CachePlan plan = threshold_plan(rates.families, rates.step, cuts, thresholds, registry, alignment);
    plan.provenance.pooling = to_string(pooling);
    return plan;
}

CachePlan initial_plan(const std::vector<RateMatrix>& family_rates, const StepRateVector& step_rates,
                       const ThresholdSet& thresholds, const FamilyRegistry& registry) {
    CalibrationRates rates{family_rates, step_rates, {}, {}, {}};
    return initial_plan(rates, thresholds, registry, RatePooling::AverageThenQuantile);
}

// ---- Phase 2 --------------------------------------------------------------------

namespace {

void check_plan_dims(const Backbone& backbone, const SampleSchedule& schedule, const CachePlan& plan) {
    if (plan.steps() != schedule.steps() || plan.layers() != backbone.layers() ||
        plan.families() != backbone.registry().families) {
        throw std::invalid_argument("plan dimensions (T=" + std::to_string(plan.steps()) +
                                    ", L=" + std::to_string(plan.layers()) +
                                    ") do not match backbone and schedule (T=" +
                                    std::to_string(schedule.steps()) + ", L=" +
                                    std::to_string(backbone.layers()) + ")");
    }
}

// Averaged shadow rates for every plan, one full trajectory per input.
std::vector<CalibrationRates> batch_shadow_rates(const Backbone& backbone, const SampleSchedule& schedule,
                                                 const std::vector<SampleInput>& inputs,
                                                 const std::vector<CachePlan>& plans,
                                                 const CorrectionOptions& options) {
    if (inputs.empty()) throw std::invalid_argument("resample_correct: at least one input is required");
    if (plans.empty()) throw std::invalid_argument("resample_correct: no plans");
    if (options.jobs < 1) throw std::invalid_argument("resample_correct: jobs must be >= 1");
    std::vector<ShadowPolicy> policies;
    for (const auto& p : plans) {
        check_plan_dims(backbone, schedule, p);
        policies.push_back(p.shadow_policy());
    }
    const RateOptions ropts{options.op, options.eps, 1, false};

    std::vector<std::vector<InputRates>> per_input(inputs.size());
    const auto wave = static_cast<std::size_t>(options.jobs);
    for (std::size_t begin = 0; begin < inputs.size(); begin += wave) {
        const std::size_t end = std::min(inputs.size(), begin + wave);
        if (end - begin == 1) {
            per_input[begin] = collect_shadow_rates(backbone, schedule, inputs[begin], policies, ropts);
            continue;
        }
        std::vector<std::future<std::vector<InputRates>>> futures;
        for (std::size_t i = begin; i < end; ++i) {
            futures.push_back(std::async(std::launch::async, [&, i] {
                return collect_shadow_rates(backbone, schedule, inputs[i], policies, ropts);
            }));
        }
        for (std::size_t i = begin; i < end; ++i) per_input[i] = futures[i - begin].get();
    }

    std::vector<CalibrationRates> out;
    for (std::size_t p = 0; p < plans.size(); ++p) {
        std::vector<InputRates> rows;
        for (auto& in : per_input) rows.push_back(std::move(in[p]));
        out.push_back(average_rates(std::move(rows)));
    }
    return out;
}

CachePlan corrected_from(const CalibrationRates& rates, const CachePlan& plan0,
                         const FamilyRegistry& registry) {
    const PlanCuts cuts{plan0.cuts, plan0.step_cut};
    CachePlan plan = threshold_plan(rates.families, rates.step, cuts, plan0.thresholds, registry,
                                    rate_alignment_from_string(plan0.provenance.rate_alignment));
    plan.provenance = plan0.provenance;
    plan.phase = PlanPhase::Corrected;
    return plan;
}

}  // namespace

CalibrationRates shadow_rates(const Backbone& backbone, const SampleSchedule& schedule,
                              const std::vector<SampleInput>& inputs, const CachePlan& plan0,
                              const CorrectionOptions& options) {
    return std::move(batch_shadow_rates(backbone, schedule, inputs, {plan0}, options).front());
}

CachePlan resample_correct(const Backbone& backbone, const SampleSchedule& schedule,
                           const std::vector<SampleInput>& inputs, const CachePlan& plan0,
                           const CorrectionOptions& options) {
    return std::move(resample_correct_batch(backbone, schedule, inputs, {plan0}, options).front());
}

std::vector<CachePlan> resample_correct_batch(const Backbone& backbone, const SampleSchedule& schedule,
                                              const std::vector<SampleInput>& inputs,
                                              const std::vector<CachePlan>& plans0,
                                              const CorrectionOptions& options) {
    const auto rates = batch_shadow_rates(backbone, schedule, inputs, plans0, options);
    std::vector<CachePlan> out;
    for (std::size_t p = 0; p < plans0.size(); ++p) {
        out.push_back(corrected_from(rates[p], plans0[p], backbone.registry()));
    }
    return out;
}

CalibrationResult calibrate(const Backbone& backbone, const SampleSchedule& schedule,
                            const std::vector<SampleInput>& inputs, const ThresholdSet& thresholds,
                            const CalibrateOptions& options) {
    const auto& reg = backbone.registry();
    thresholds.validate(reg);
    RateOptions ropts;
    ropts.op = options.op;
    ropts.jobs = options.jobs;
    auto rates = collect_rates(backbone, schedule, inputs, ropts);
    CachePlan initial = initial_plan(rates, thresholds, reg, options.pooling, options.alignment);
    initial.provenance.backbone_id = backbone.id();
    initial.provenance.schedule_hash = schedule.hash();
    initial.provenance.rate_operator = to_string(options.op);
    initial.provenance.pooling = to_string(options.pooling);
    for (const auto& in : inputs) initial.provenance.calibration_inputs.push_back(in.describe());

    CachePlan final_plan = initial;
    if (!options.phase1_only) {
        CorrectionOptions copts;
        copts.op = options.op;
        copts.jobs = options.jobs;
        final_plan = resample_correct(backbone, schedule, inputs, initial, copts);
    }
    return {std::move(rates), std::move(initial), std::move(final_plan)};
}

}  // namespace invardiff
