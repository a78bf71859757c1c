// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "invardiff/bench.hpp"
#include "invardiff/config.hpp"
#include "invardiff/plan_io.hpp"
#include "invardiff/rates.hpp"
#include "invardiff/scheduler.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace invardiff;
using namespace invardiff::testing;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Outcome scripted_exactness() {
    const auto start = Clock::now();
    const int T = 20;
    const int L = 4;
    double worst = 0.0;
    bool boundaries = true;
    for (const auto& profile :
         {ScriptedProfile::constant(L, 0.5), ScriptedProfile::constant(L, 0.1), ScriptedProfile::constant(L, 1.0),
          ScriptedProfile::per_family(L, 0.5, 2.0), ScriptedProfile::piecewise(L, 9, 0.9, 0.35)}) {
        const ScriptedBackbone bb(scripted_config(profile, 8, 16), profile);
        const auto sched = SampleSchedule::linear(T);
        const auto rates = collect_rates(bb, sched, make_inputs(2, 3, 3));
        const auto truth = bb.analytic_rates(T);
        for (std::size_t f = 0; f < truth.size(); ++f) {
            const auto& m = rates.families[f];
            for (int l = 0; l < L; ++l) {
                boundaries = boundaries && !m.defined(0, l) && !m.defined(T - 1, l);
                for (int t = 1; t <= T - 2; ++t) {
                    if (!m.defined(t, l)) return {false, "interior entry undefined"};
                    worst = std::max(worst, std::fabs(m.value(t, l) - truth[f].value(t, l)));
                }
            }
            const auto shown = heatmap_display_values(m, HeatmapMode::Log2Rho);
            for (int l = 0; l < L; ++l) {
                boundaries = boundaries && shown[static_cast<std::size_t>(l * T)] == 0.0 &&
                             shown[static_cast<std::size_t>(l * T + T - 1)] == 0.0;
            }
        }
    }
    const double secs = seconds_since(start);
    return {worst <= 1e-9 && boundaries && secs < 5.0,
            "max |rho - analytic| " + fmt("%.3g", worst) + ", boundaries " + (boundaries ? "ok" : "wrong") + ", " +
                fmt("%.2f s", secs)};
}

Outcome no_cache_identity() {
    BackboneConfig c;
    c.kind = BackboneKind::ToyDiT;
    c.layers = 6;
    c.tokens = 64;
    c.channels = 64;
    c.heads = 4;
    const auto bb = build_backbone(c);
    const auto sched = SampleSchedule::linear(20);
    const SampleInput in{123, 4};
    const auto base = run_baseline(*bb, sched, in.latent(*bb), in.cond);
    const auto run = execute_plan(*bb, sched, zero_plan(*bb, 20), in.latent(*bb), in.cond);
    bool same = bit_equal(base.x_final, run.trajectory.x_final);
    for (int t = 0; t < 20; ++t) same = same && bit_equal(base.outputs[t], run.trajectory.outputs[t]);
    const auto& s = run.trajectory.stats;
    const bool zero = s.step_skips == 0 && s.reused_sites() == 0 && s.degraded_reuses == 0;
    return {same && zero, std::string(same ? "bit-identical" : "outputs differ") + ", step skips " +
                              std::to_string(s.step_skips) + ", reused sites " + std::to_string(s.reused_sites())};
}

Outcome quantile_semantics() {
    const int T = 27;
    const int L = 40;
    const auto reg = dit_registry();
    SeededRng rng(2026);
    std::set<double> seen;
    std::vector<double> values;
    while (values.size() < 1000) {
        const double v = 0.5 + rng.uniform01();
        if (seen.insert(v).second) values.push_back(v);
    }
    RateMatrix mhsa("mhsa", T, L), ffn("ffn", T, L);
    std::size_t k = 0;
    for (int t = 1; t <= T - 2; ++t) {
        for (int l = 0; l < L; ++l) {
            mhsa.set(t, l, values[k]);
            ffn.set(t, l, values[999 - k]);
            ++k;
        }
    }
    StepRateVector step(T);
    for (int t = 1; t <= T - 2; ++t) step.set(t, values[static_cast<std::size_t>(t)]);
    const CalibrationRates cr{{mhsa, ffn}, step, {}, {}, {}};

    bool pass = true;
    std::string detail;
    for (double tau : {0.22, 0.5, 0.63}) {
        const auto th = ThresholdSet::uniform(reg, tau, 0.0);
        const auto prev = initial_plan(cr, th, reg, RatePooling::AverageThenQuantile, RateAlignment::PreviousStep);
        const auto same = initial_plan(cr, th, reg, RatePooling::AverageThenQuantile, RateAlignment::SameStep);
        const auto selected = static_cast<double>(std::count_if(
                                  values.begin(), values.end(), [&](double v) { return v <= prev.cuts[0]; })) /
                              1000.0;
        const double cached_same = static_cast<double>(same.cached_count(0)) / 1000.0;
        const double cached_prev = static_cast<double>(prev.cached_count(0)) / 1000.0;
        const bool ok = selected >= tau && selected <= tau + 0.002 && cached_same >= tau && cached_same <= tau + 0.002 &&
                        same.cuts[0] == prev.cuts[0];
        pass = pass && ok;
        detail += fmt("tau %.2f: ", tau) + fmt("selected %.3f", selected) + fmt(", cached %.3f", cached_same) +
                  fmt(" (%.3f with the final row forced); ", cached_prev);
    }
    detail.resize(detail.size() - 2);
    return {pass, detail};
}

Outcome phase2_identity_and_fixed_point() {
    // Identity: an all-zero plan0 shadows nothing, so Phase 2 reproduces Phase 1.
    int identity_ok = 0, identity_total = 0;
    for (auto kind : {BackboneKind::ToyDiT, BackboneKind::ToyDual, BackboneKind::Scripted}) {
        const auto bb = build_backbone(small_config(kind, 3, 8, 16));
        const auto sched = SampleSchedule::linear(16);
        const auto inputs = make_inputs(2, 9, 4);
        const auto th = ThresholdSet::uniform(bb->registry(), 0.5, 0.4, 0.1);
        const auto p1 = calibrate(*bb, sched, inputs, th, {.phase1_only = true}).initial;
        CachePlan plan0 = p1;
        std::fill(plan0.site_bits().begin(), plan0.site_bits().end(), std::uint8_t{0});
        std::fill(plan0.step_bits().begin(), plan0.step_bits().end(), std::uint8_t{0});
        const auto corrected = resample_correct(*bb, sched, inputs, plan0);
        identity_ok += corrected.same_decisions(p1) ? 1 : 0;
        ++identity_total;
    }

    // Fixed point: a second correction pass on the scripted backbone.
    const int T = 20;
    int fixed = 0, total = 0;
    std::string first_break;
    const std::vector<std::pair<std::string, ScriptedProfile>> profiles{
        {"constant 0.5", ScriptedProfile::constant(3, 0.5)},
        {"constant 0.1", ScriptedProfile::constant(3, 0.1)},
        {"per-family 0.5/2.0", ScriptedProfile::per_family(3, 0.5, 2.0)},
    };
    for (const auto& [name, profile] : profiles) {
        const ScriptedBackbone bb(scripted_config(profile), profile);
        const auto sched = SampleSchedule::linear(T);
        const auto inputs = make_inputs(2, 5, 3);
        for (double tm : {0.0, 0.22, 0.5, 0.9}) {
            for (double ts : {0.0, 0.4, 0.63}) {
                for (double tw : {0.0, 0.1}) {
                    const auto result = calibrate(bb, sched, inputs, ThresholdSet::uniform(bb.registry(), tm, ts, tw));
                    const auto again = resample_correct(bb, sched, inputs, result.final_plan);
                    ++total;
                    if (again.same_decisions(result.final_plan)) {
                        ++fixed;
                    } else if (first_break.empty()) {
                        first_break = name + fmt(" tau_module %.2f", tm) + fmt(" tau_step %.2f", ts) +
                                      fmt(" tau_warmup %.2f", tw);
                    }
                }
            }
        }
    }
    std::string detail = "identity " + std::to_string(identity_ok) + "/" + std::to_string(identity_total) +
                         ", fixed point " + std::to_string(fixed) + "/" + std::to_string(total);
    if (!first_break.empty()) detail += " (first break: " + first_break + ")";
    return {identity_ok == identity_total && fixed == total, detail};
}

Outcome scheduler_contract() {
    int plans = 0, violations = 0;
    SeededRng rng(4242);
    std::vector<std::unique_ptr<Backbone>> backbones;
    backbones.push_back(build_backbone(small_config(BackboneKind::ToyDiT, 3, 8, 16)));
    backbones.push_back(build_backbone(small_config(BackboneKind::ToyDual, 2, 6, 16)));
    backbones.push_back(build_backbone(scripted_config(ScriptedProfile::per_family(3, 0.6, 1.2))));
    for (int i = 0; i < 150; ++i) {
        const auto& bb = *backbones[static_cast<std::size_t>(i % 3)];
        const int T = 6 + static_cast<int>(rng.next() % 15);
        const double p_site = rng.uniform01();
        const double p_step = 0.6 * rng.uniform01();
        const double warm = (rng.next() % 3) * 0.1;
        const auto plan = random_plan(bb, T, rng, p_site, p_step, warm);
        const SampleInput in{rng.next() % 1000, static_cast<int>(rng.next() % 3)};
        ExecuteOptions opts;
        opts.record_trace = true;
        const auto run = execute_plan(bb, SampleSchedule::linear(T), plan, in.latent(bb), in.cond, opts);
        const auto& out = run.trajectory.outputs;
        const auto full = static_cast<std::size_t>(bb.layers() * bb.registry().total_hooks_per_layer());
        bool ok = work_accounting_holds(run.trajectory.stats, bb);
        for (int t = 0; t < T; ++t) {
            const auto& tr = run.trace[static_cast<std::size_t>(t)];
            if (plan.step_skip(t)) {
                ok = ok && bit_equal(out[t], out[t - 1]) && tr.touched.empty();
            } else if (t > 0 && plan.step_skip(t - 1)) {
                ok = ok && tr.touched.size() == full &&
                     std::all_of(tr.touched.begin(), tr.touched.end(),
                                 [](const SiteTouch& s) { return s.action == SiteAction::Compute; });
            }
        }
        ++plans;
        violations += ok ? 0 : 1;
    }
    return {plans >= 100 && violations == 0,
            std::to_string(plans) + " plans, " + std::to_string(violations) + " violating"};
}

Outcome plan_replay() {
    int equal = 0, total = 0;
    SeededRng rng(31337);
    for (const auto& profile : {ScriptedProfile::piecewise(3, 7, 0.8, 0.4), ScriptedProfile::per_family(3, 0.6, 1.1)}) {
        const ScriptedBackbone bb(scripted_config(profile), profile);
        for (int i = 0; i < 25; ++i) {
            const int T = 8 + static_cast<int>(rng.next() % 17);
            const auto sched = SampleSchedule::linear(T);
            const auto plan = random_plan(bb, T, rng, rng.uniform01(), 0.5 * rng.uniform01());
            const SampleInput in{rng.next() % 1000, static_cast<int>(rng.next() % 3)};
            const auto x0 = in.latent(bb);
            const auto run = execute_plan(bb, sched, plan, x0, in.cond);
            equal += bit_equal(run.trajectory.x_final, replay_scripted(bb, sched, plan, x0)) ? 1 : 0;
            ++total;
        }
    }
    return {total == 50 && equal == total, std::to_string(equal) + "/" + std::to_string(total) + " bit-exact"};
}

std::vector<CachePlan> g_emitted;

Outcome speed_quality_trend() {
    const auto start = Clock::now();
    const auto cfg = sweep_config();
    const auto bb = build_backbone(cfg.backbone);
    BenchOptions opts;
    opts.repeats = 20;
    opts.calibrate = cfg.calibrate_options();
    const auto eval = make_inputs(1, cfg.seed + 1000003ULL, cfg.backbone.cond_classes);
    const auto result =
        run_sweep(*bb, cfg.schedule(), cfg.calibration_set(), eval, sweep_grid(bb->registry()), opts);
    const double secs = seconds_since(start);
    for (const auto& p : result.points) g_emitted.push_back(*p.plan);
    const auto trend = check_sweep_trend(result);
    const bool pass = result.points.size() == 35 && trend.flops_monotone && trend.worst_speedup_gap <= 0.15 &&
                      secs < 180.0;
    return {pass, std::to_string(result.points.size()) + " points, FLOPs non-increasing " +
                      (trend.flops_monotone ? "yes" : "no") + ", worst speedup/FLOP gap " +
                      fmt("%.3f", trend.worst_speedup_gap) + " at " + trend.worst_point + ", " + fmt("%.1f s", secs)};
}

Outcome forced_and_warmup() {
    std::vector<CachePlan> plans = g_emitted;
    int warm_ok = 0;
    for (const auto& [preset, expected] : std::vector<std::pair<std::string, int>>{{"flux-fast", 3}, {"flux-slow", 7}}) {
        const auto bb = build_backbone(small_config(BackboneKind::ToyDual, 2, 6, 16));
        const auto sched = SampleSchedule::linear(28);
        const auto result = calibrate(*bb, sched, make_inputs(3, 1, 4), threshold_preset(preset));
        const int warm = warmup_steps(result.final_plan.thresholds.warmup, 28);
        bool full = warm == expected;
        for (const auto* plan : {&result.initial, &result.final_plan}) {
            for (int t = 0; t < warm; ++t) {
                full = full && !plan->step_skip(t);
                for (int l = 0; l < plan->layers(); ++l) {
                    for (int f = 0; f < plan->family_count(); ++f) full = full && !plan->cache(t, l, f);
                }
            }
        }
        warm_ok += full ? 1 : 0;
        plans.push_back(result.initial);
        plans.push_back(result.final_plan);
    }
    for (const char* preset : {"dit-fast", "dit-slow"}) {
        const auto bb = build_backbone(small_config(BackboneKind::ToyDiT, 3, 8, 16));
        const auto result = calibrate(*bb, SampleSchedule::linear(28), make_inputs(3, 1, 4), threshold_preset(preset));
        plans.push_back(result.initial);
        plans.push_back(result.final_plan);
    }
    int bad = 0;
    for (const auto& p : plans) {
        const int T = p.steps();
        bool ok = !p.step_skip(0) && !p.step_skip(T - 1);
        for (int l = 0; l < p.layers(); ++l) {
            for (int f = 0; f < p.family_count(); ++f) ok = ok && !p.cache(0, l, f) && !p.cache(T - 1, l, f);
        }
        bad += ok ? 0 : 1;
    }
    return {bad == 0 && warm_ok == 2, std::to_string(plans.size()) + " plans, " + std::to_string(bad) +
                                          " with a computed boundary violated, warm-up 3/7 steps " +
                                          (warm_ok == 2 ? "full" : "not full")};
}

template <typename F>
bool rejects(F&& f, const std::string& invariant) {
    try {
        f();
    } catch (const PlanViolation& e) {
        return invariant.empty() || e.invariant == invariant;
    } catch (const std::exception&) {
        return invariant.empty();
    }
    return false;
}

Outcome format_round_trips() {
    int trips = 0, exact = 0;
    std::vector<CachePlan> plans = g_emitted;
    const auto dual = build_backbone(small_config(BackboneKind::ToyDual, 2, 6, 16));
    plans.push_back(calibrate(*dual, SampleSchedule::linear(28), make_inputs(2, 1, 4), threshold_preset("flux-slow"))
                        .final_plan);
    for (const auto& p : plans) {
        ++trips;
        exact += plan_from_json(plan_to_json(p)) == p ? 1 : 0;
    }
    const auto bb = build_backbone(small_config(BackboneKind::ToyDiT, 3, 8, 16));
    const auto rates = collect_rates(*bb, SampleSchedule::linear(12), make_inputs(2, 4, 4));
    for (const auto* set : {&rates.families, &rates.mse_maps, &rates.cos_maps}) {
        for (const auto& m : *set) {
            ++trips;
            exact += parse_rate_csv(rate_csv_string(m), m.family()) == m ? 1 : 0;
        }
    }

    const auto plan = plans.front();
    const auto text = plan_to_json(plan);
    int rejected = 0, cases = 0;
    auto expect = [&](bool r) {
        ++cases;
        rejected += r ? 1 : 0;
    };
    CachePlan boundary = plan;
    boundary.set_step_skip(0, true);
    expect(rejects([&] { validate_plan(boundary); }, "forced_boundary"));
    const auto json_boundary = [&] {
        auto doc = nlohmann::json::parse(text);
        doc["plan"]["c_step"][0] = 1;
        return doc.dump();
    }();
    expect(rejects([&] { (void)plan_from_json(json_boundary); }, "forced_boundary"));
    const auto json_version = [&] {
        auto doc = nlohmann::json::parse(text);
        doc["format_version"] = 99;
        return doc.dump();
    }();
    expect(rejects([&] { (void)plan_from_json(json_version); }, "supported_version"));
    expect(rejects([&] { (void)plan_from_json(text.substr(0, text.size() / 2)); }, "json_syntax"));
    expect(rejects([&] { (void)parse_rate_csv("t,l,value\n0,0,abc\n", "mhsa"); }, ""));
    expect(rejects([&] { (void)parse_rate_csv("step,layer\n", "mhsa"); }, ""));
    return {exact == trips && rejected == cases,
            std::to_string(exact) + "/" + std::to_string(trips) + " bit-exact round trips, " +
                std::to_string(rejected) + "/" + std::to_string(cases) + " corrupt files rejected"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"scripted-oracle rate exactness", scripted_exactness},
        {"no-cache identity", no_cache_identity},
        {"quantile semantics", quantile_semantics},
        {"phase-2 identity and fixed point", phase2_identity_and_fixed_point},
        {"scheduler contract", scheduler_contract},
        {"plan-replay oracle equivalence", plan_replay},
        {"toy speed-quality trend", speed_quality_trend},
        {"forced compute and warm-up", forced_and_warmup},
        {"format round trips", format_round_trips},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s  %-34s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed;
}
