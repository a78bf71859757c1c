// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "invardiff/scheduler.hpp"

namespace invardiff {

const std::vector<ModuleBundle>& sweep_bundles() {
    static const std::vector<ModuleBundle> bundles{
        {0.10, 0.68, 0.68, 0.68, 0.68, 0.68},
        {0.10, 0.68, 0.00, 0.00, 0.68, 0.00},
        {0.15, 0.68, 0.00, 0.00, 0.70, 0.00},
        {0.22, 0.68, 0.66, 0.00, 0.68, 0.62},
        {0.22, 0.68, 0.40, 0.00, 0.68, 0.20},
        {0.25, 0.68, 0.00, 0.00, 0.68, 0.00},
        {0.25, 0.50, 0.00, 0.00, 0.50, 0.00},
    };
    return bundles;
}

const std::vector<double>& sweep_step_values() {
    static const std::vector<double> values{0.40, 0.50, 0.60, 0.70, 0.75};
    return values;
}

ThresholdSet bundle_thresholds(const ModuleBundle& b, double tau_step, const FamilyRegistry& registry) {
    ThresholdSet t;
    t.step = tau_step;
    t.warmup = b.warmup;
    t.ties = registry.tie_groups;
    const std::map<std::string, double> by_name{{"dual_attn", b.dual_attn},     {"dual_ff", b.dual_ff},
                                                {"dual_context_ff", b.dual_context_ff},
                                                {"single_attn", b.single_attn}, {"single_ff", b.single_ff},
                                                {"mhsa", b.dual_attn},          {"ffn", b.dual_ff}};
    for (const auto& f : registry.families) {
        const auto it = by_name.find(f);
        if (it == by_name.end()) throw std::invalid_argument("no bundle threshold for family '" + f + "'");
        t.family.emplace_back(f, it->second);
    }
    t.validate(registry);
    return t;
}

std::vector<OperatingPoint> sweep_grid(const FamilyRegistry& registry) {
    std::vector<OperatingPoint> out;
    const auto& bundles = sweep_bundles();
    for (std::size_t b = 0; b < bundles.size(); ++b) {
        for (double s : sweep_step_values()) {
            char name[48];
            std::snprintf(name, sizeof name, "bundle%zu/step%.2f", b + 1, s);
            out.push_back({name, bundle_thresholds(bundles[b], s, registry), static_cast<int>(b)});
        }
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median: no values");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double coefficient_of_variation(const std::vector<double>& values) {
    if (values.size() < 2) return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (mean == 0.0) return 0.0;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size() - 1)) / mean;
}

StatsTable BenchResult::table(bool include_baseline) const {
    StatsTable t;
    t.families = families;
    auto row = [&](const PointResult& p) {
        StatsRow r;
        r.operating_point = p.point.name;
        r.flops = p.flops;
        r.speedup_vs_baseline = p.speedup;
        r.latency_s = p.median_latency;
        for (std::size_t f = 0; f < families.size(); ++f) r.family_skip.push_back(p.stats.family_skip_fraction(f));
        r.step_skip_fraction = p.stats.step_skip_fraction();
        r.final_psnr = p.final_psnr;
        r.final_mse = p.final_mse;
        r.latency_cv = p.latency_cv;
        return r;
    };
    if (include_baseline) t.rows.push_back(row(baseline));
    for (const auto& p : points) t.rows.push_back(row(p));
    return t;
}

BenchResult bench_plans(const Backbone& backbone, const SampleSchedule& schedule,
                        const std::vector<SampleInput>& evaluation, const std::vector<OperatingPoint>& points,
                        const std::vector<CachePlan>& plans, int repeats, int baseline_interval) {
    if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
    if (evaluation.empty()) throw std::invalid_argument("bench: at least one evaluation input is required");
    if (plans.size() != points.size()) throw std::invalid_argument("bench: one plan per operating point required");

    BenchResult result;
    result.families = backbone.registry().families;
    result.baseline.point.name = "baseline";

    std::vector<TokenTensor> latents;
    std::vector<Trajectory> references;
    for (const auto& in : evaluation) {
        latents.push_back(in.latent(backbone));
        references.push_back(run_baseline(backbone, schedule, latents.back(), in.cond));
    }
    result.baseline.stats = references.front().stats;
    result.baseline.flops = references.front().stats.flops;

    for (std::size_t p = 0; p < points.size(); ++p) {
        PointResult r;
        r.point = points[p];
        r.plan = plans[p];
        double psnr_sum = 0.0, mse_sum = 0.0;
        for (std::size_t i = 0; i < evaluation.size(); ++i) {
            ExecuteOptions eo;
            eo.allow_initial = true;
            auto run = execute_plan(backbone, schedule, plans[p], latents[i], evaluation[i].cond, eo);
            const auto rep = compare_runs(references[i], run.trajectory, reference_peak(references[i]));
            psnr_sum += rep.final_psnr;
            mse_sum += rep.final_mse;
            if (i == 0) r.stats = run.trajectory.stats;
        }
        r.final_psnr = psnr_sum / static_cast<double>(evaluation.size());
        r.final_mse = mse_sum / static_cast<double>(evaluation.size());
        r.flops = r.stats.flops;
        r.flop_speedup = r.flops == 0 ? 0.0 : static_cast<double>(result.baseline.flops) / static_cast<double>(r.flops);
        result.points.push_back(std::move(r));
    }

    auto time_baseline = [&] {
        double base = 0.0;
        for (std::size_t i = 0; i < evaluation.size(); ++i) {
            base += run_baseline(backbone, schedule, latents[i], evaluation[i].cond).stats.wall_seconds;
        }
        result.baseline.latencies.push_back(base);
    };
    const std::size_t group = static_cast<std::size_t>(std::max(1, baseline_interval));
    for (int rep = 0; rep < repeats; ++rep) {
        for (std::size_t p = 0; p < points.size(); ++p) {
            if (p % group == 0) time_baseline();
            const double paired = result.baseline.latencies.back();
            double total = 0.0;
            for (std::size_t i = 0; i < evaluation.size(); ++i) {
                ExecuteOptions eo;
                eo.allow_initial = true;
                total += execute_plan(backbone, schedule, plans[p], latents[i], evaluation[i].cond, eo)
                             .trajectory.stats.wall_seconds;
            }
            result.points[p].latencies.push_back(total);
            result.points[p].speedups.push_back(total > 0.0 ? paired / total : 0.0);
        }
        if (points.empty()) time_baseline();
    }

    auto finish = [&](PointResult& r) {
        r.median_latency = median(r.latencies);
        r.latency_cv = coefficient_of_variation(r.latencies);
    };
    finish(result.baseline);
    for (auto& r : result.points) {
        finish(r);
        r.speedup = median(r.speedups);
    }
    return result;
}

BenchResult run_sweep(const Backbone& backbone, const SampleSchedule& schedule,
                      const std::vector<SampleInput>& calibration, const std::vector<SampleInput>& evaluation,
                      const std::vector<OperatingPoint>& points, const BenchOptions& options) {
    if (points.empty()) throw std::invalid_argument("sweep: empty grid");
    const auto& reg = backbone.registry();
    RateOptions ropts;
    ropts.op = options.calibrate.op;
    ropts.jobs = options.calibrate.jobs;
    ropts.similarity_maps = false;
    const auto rates = collect_rates(backbone, schedule, calibration, ropts);

    std::vector<CachePlan> plans;
    for (const auto& p : points) {
        CachePlan plan = initial_plan(rates, p.thresholds, reg, options.calibrate.pooling,
                                      options.calibrate.alignment);
        plan.provenance.backbone_id = backbone.id();
        plan.provenance.schedule_hash = schedule.hash();
        plan.provenance.rate_operator = to_string(options.calibrate.op);
        for (const auto& in : calibration) plan.provenance.calibration_inputs.push_back(in.describe());
        plans.push_back(std::move(plan));
    }
    if (!options.calibrate.phase1_only) {
        CorrectionOptions copts;
        copts.op = options.calibrate.op;
        copts.jobs = options.calibrate.jobs;
        plans = resample_correct_batch(backbone, schedule, calibration, plans, copts);
    }
    return bench_plans(backbone, schedule, evaluation, points, plans, options.repeats, options.baseline_interval);
}

BenchResult run_benchmark(const Backbone& backbone, const SampleSchedule& schedule,
                          const std::vector<SampleInput>& calibration, const std::vector<SampleInput>& evaluation,
                          const ThresholdSet& thresholds, const BenchOptions& options) {
    return run_sweep(backbone, schedule, calibration, evaluation, {{"scheduled", thresholds, -1}}, options);
}

TrendCheck check_sweep_trend(const BenchResult& result) {
    TrendCheck check;
    std::map<int, std::vector<const PointResult*>> by_bundle;
    for (const auto& p : result.points) {
        if (p.point.bundle >= 0) by_bundle[p.point.bundle].push_back(&p);
        const double gap = p.flop_speedup > 0.0 ? std::fabs(p.speedup / p.flop_speedup - 1.0) : 1.0;
        if (gap > check.worst_speedup_gap) {
            check.worst_speedup_gap = gap;
            check.worst_point = p.point.name;
        }
    }
    for (auto& [b, pts] : by_bundle) {
        std::stable_sort(pts.begin(), pts.end(), [](const PointResult* a, const PointResult* c) {
            return a->point.thresholds.step < c->point.thresholds.step;
        });
        for (std::size_t i = 1; i < pts.size(); ++i) {
            if (pts[i]->flops > pts[i - 1]->flops) {
                check.flops_monotone = false;
                check.flop_violations.push_back(pts[i - 1]->point.name + " -> " + pts[i]->point.name + ": " +
                                                std::to_string(pts[i - 1]->flops) + " < " +
                                                std::to_string(pts[i]->flops));
            }
        }
    }
    return check;
}

std::vector<CalibrationSizeRow> calibration_size_study(const Backbone& backbone, const SampleSchedule& schedule,
                                                       const std::vector<SampleInput>& pool,
                                                       const std::vector<int>& sizes,
                                                       const std::vector<SampleInput>& evaluation,
                                                       const ThresholdSet& thresholds,
                                                       const CalibrateOptions& options) {
    if (evaluation.empty()) throw std::invalid_argument("calibration study: no evaluation inputs");
    for (int k : sizes) {
        if (k < 1 || static_cast<std::size_t>(k) > pool.size()) {
            throw std::invalid_argument("calibration study: K=" + std::to_string(k) + " outside [1, " +
                                        std::to_string(pool.size()) + "]");
        }
    }
    std::vector<Trajectory> references;
    for (const auto& in : evaluation) references.push_back(run_baseline(backbone, schedule, in.latent(backbone), in.cond));

    std::vector<CalibrationSizeRow> rows;
    for (int k : sizes) {
        const std::vector<SampleInput> subset(pool.begin(), pool.begin() + k);
        auto cal = calibrate(backbone, schedule, subset, thresholds, options);
        CalibrationSizeRow row{k, 0.0, 0.0, cal.final_plan.cached_count(), cal.final_plan.step_skip_count(), 0,
                               cal.final_plan};
        for (std::size_t i = 0; i < evaluation.size(); ++i) {
            ExecuteOptions eo;
            eo.allow_initial = true;
            auto run = execute_plan(backbone, schedule, cal.final_plan, evaluation[i].latent(backbone),
                                    evaluation[i].cond, eo);
            const auto rep = compare_runs(references[i], run.trajectory, reference_peak(references[i]));
            row.final_psnr += rep.final_psnr;
            row.final_mse += rep.final_mse;
            row.flops = run.trajectory.stats.flops;
        }
        row.final_psnr /= static_cast<double>(evaluation.size());
        row.final_mse /= static_cast<double>(evaluation.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string calibration_size_csv(const std::vector<CalibrationSizeRow>& rows) {
    std::string out = "inputs,final_psnr,final_mse,cached_sites,step_skips,flops\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%zu,%zu,%llu\n", r.inputs, r.final_psnr, r.final_mse,
                      r.cached_sites, r.step_skips, static_cast<unsigned long long>(r.flops));
        out += buf;
    }
    return out;
}

}  // namespace invardiff
