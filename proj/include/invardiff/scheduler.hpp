// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plan execution. Per step: a step gate reuses the previous network output and
// skips the forward entirely; the first computed step after a step skip masks
// every layer slot once; otherwise sites follow C[t], and a REUSE whose slot
// is empty is computed instead.

#pragma once

#include <vector>

#include "invardiff/backbone.hpp"
#include "invardiff/planner.hpp"
#include "invardiff/sampler.hpp"

namespace invardiff {

struct StepTrace {
    int step = 0;
    bool skipped = false;
    /// Slots were cleared before this step's forward.
    bool masked = false;
    std::vector<SiteTouch> touched;
};

struct ExecuteOptions {
    /// Accept plans whose phase tag is "initial".
    bool allow_initial = false;
    bool record_trace = false;
    bool record_latents = false;
};

struct ScheduledRun {
    Trajectory trajectory;
    std::vector<StepTrace> trace;  // one per step when requested
};

class PlanExecutor final : public StepExecutor {
public:
    explicit PlanExecutor(const CachePlan& plan, bool record_trace = false);

    void begin(const Backbone& backbone, const SampleSchedule& schedule) override;
    TokenTensor evaluate(const StepContext& ctx, RunStats& stats) override;

    std::vector<StepTrace> take_trace() { return std::move(trace_); }

private:
    const CachePlan& plan_;
    bool record_trace_;
    std::optional<ModuleCache> cache_;
    std::vector<StepTrace> trace_;
};

/// Checks that `plan` can drive `backbone` over `schedule`; throws otherwise.
void check_executable(const Backbone& backbone, const SampleSchedule& schedule, const CachePlan& plan,
                      bool allow_initial = false);

ScheduledRun execute_plan(const Backbone& backbone, const SampleSchedule& schedule,
                          const CachePlan& plan, const TokenTensor& x_init, int cond,
                          const ExecuteOptions& options = {});

/// computed + reused + under-skipped-steps == T * L * sub-sites per layer.
bool work_accounting_holds(const RunStats& stats, const Backbone& backbone);

struct FidelityReport {
    double peak = 1.0;
    std::vector<double> step_mse;   // between network outputs z_t
    std::vector<double> step_psnr;
    /// Steps whose outputs are not bit-identical.
    std::vector<int> differing_steps;
    double final_mse = 0.0;         // between final latents
    double final_psnr = kPsnrCap;
};

FidelityReport compare_runs(const Trajectory& full, const Trajectory& cached, double peak);

/// max |x| of a reference latent, floored at 1e-12; the PSNR peak used by bench.
double reference_peak(const Trajectory& full);

}  // namespace invardiff
