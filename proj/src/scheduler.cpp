// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/scheduler.hpp"

#include <algorithm>

namespace invardiff {

PlanExecutor::PlanExecutor(const CachePlan& plan, bool record_trace)
    : plan_(plan), record_trace_(record_trace) {}

void PlanExecutor::begin(const Backbone& backbone, const SampleSchedule&) {
    cache_.emplace(backbone.make_cache());
    trace_.clear();
}

TokenTensor PlanExecutor::evaluate(const StepContext& ctx, RunStats& stats) {
    const auto& bb = ctx.backbone;
    auto& cache = *cache_;
    const int t = ctx.step;
    StepTrace trace{t, false, false, {}};

    if (plan_.step_skip(t)) {
        if (!cache.last_net) throw std::logic_error("step skip at step " + std::to_string(t) + " without a previous output");
        stats.record_step_skip(bb);
        cache.mask_pending = true;
        trace.skipped = true;
        if (record_trace_) trace_.push_back(std::move(trace));
        return *cache.last_net;
    }

    if (cache.mask_pending) {
        cache.clear_slots();
        cache.mask_pending = false;
        ++stats.mask_events;
        trace.masked = true;
    }

    GateDirective gate = plan_.gate(t);
    gate.step_skip = false;
    const auto& reg = bb.registry();
    for (int l = 0; l < gate.layers(); ++l) {
        for (int f = 0; f < gate.families(); ++f) {
            if (gate.at(l, f) != SiteAction::Reuse) continue;
            for (int h = 0; h < reg.hooks(static_cast<std::size_t>(f)); ++h) {
                if (!cache.has(l, f, h)) {
                    gate.set(l, f, SiteAction::Compute);
                    ++stats.degraded_reuses;
                    break;
                }
            }
        }
    }

    auto out = bb.forward_step(ctx.x, ctx.cond, t, gate, cache);
    stats.record_forward(bb, out.touched);
    cache.last_net = out.z;
    if (record_trace_) {
        trace.touched = std::move(out.touched);
        trace_.push_back(std::move(trace));
    }
    return std::move(out.z);
}

void check_executable(const Backbone& backbone, const SampleSchedule& schedule, const CachePlan& plan,
                      bool allow_initial) {
    if (plan.steps() != schedule.steps()) {
        throw std::invalid_argument("plan has T=" + std::to_string(plan.steps()) + " but schedule has T=" +
                                    std::to_string(schedule.steps()));
    }
    if (plan.layers() != backbone.layers()) {
        throw std::invalid_argument("plan has L=" + std::to_string(plan.layers()) + " but backbone has L=" +
                                    std::to_string(backbone.layers()));
    }
    if (plan.families() != backbone.registry().families) {
        throw std::invalid_argument("plan families do not match the backbone registry");
    }
    if (plan.step_skip(0)) {
        throw PlanViolation("plan.c_step[0]", "forced_boundary", "the first step cannot be skipped");
    }
    if (plan.phase != PlanPhase::Corrected && !allow_initial) {
        throw std::invalid_argument("plan phase is '" + to_string(plan.phase) +
                                    "'; pass allow_initial to execute an uncorrected plan");
    }
}

ScheduledRun execute_plan(const Backbone& backbone, const SampleSchedule& schedule, const CachePlan& plan,
                          const TokenTensor& x_init, int cond, const ExecuteOptions& options) {
    check_executable(backbone, schedule, plan, options.allow_initial);
    PlanExecutor exec(plan, options.record_trace);
    TrajectoryOptions topts;
    topts.record_latents = options.record_latents;
    ScheduledRun run{run_trajectory(backbone, schedule, x_init, cond, exec, topts), {}};
    run.trace = exec.take_trace();
    return run;
}

bool work_accounting_holds(const RunStats& stats, const Backbone& backbone) {
    const auto expected = static_cast<std::uint64_t>(stats.steps) *
                          static_cast<std::uint64_t>(backbone.layers()) *
                          static_cast<std::uint64_t>(backbone.registry().total_hooks_per_layer());
    return stats.computed_sites() + stats.reused_sites() + stats.skipped_step_sites() == expected;
}

FidelityReport compare_runs(const Trajectory& full, const Trajectory& cached, double peak) {
    if (full.outputs.size() != cached.outputs.size()) {
        throw std::invalid_argument("compare_runs: trajectories have different lengths (" +
                                    std::to_string(full.outputs.size()) + " vs " +
                                    std::to_string(cached.outputs.size()) + ")");
    }
    FidelityReport r;
    r.peak = peak;
    for (std::size_t t = 0; t < full.outputs.size(); ++t) {
        const double m = mse(full.outputs[t], cached.outputs[t]);
        r.step_mse.push_back(m);
        r.step_psnr.push_back(psnr_from_mse(m, peak));
        if (!bit_equal(full.outputs[t], cached.outputs[t])) r.differing_steps.push_back(static_cast<int>(t));
    }
    r.final_mse = mse(full.x_final, cached.x_final);
    r.final_psnr = psnr_from_mse(r.final_mse, peak);
    return r;
}

double reference_peak(const Trajectory& full) { return std::max(max_abs(full.x_final), 1e-12); }

}  // namespace invardiff
