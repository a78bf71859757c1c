// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/sampler.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "invardiff/random.hpp"

namespace invardiff {

// ---- RunStats ---------------------------------------------------------------

void RunStats::reset(const Backbone& backbone, int steps_) {
    *this = RunStats{};
    steps = steps_;
    families = backbone.registry().families;
    per_family.assign(families.size(), FamilyCounts{});
}

void RunStats::record_forward(const Backbone& backbone, const std::vector<SiteTouch>& touched) {
    ++forward_calls;
    const auto& table = backbone.flop_table();
    flops += table.glue;
    for (const auto& s : touched) {
        auto& counts = per_family.at(static_cast<std::size_t>(s.family));
        if (s.action == SiteAction::Compute) {
            ++counts.computed;
            flops += table.site.at(static_cast<std::size_t>(s.family))
                         .at(static_cast<std::size_t>(s.hook));
        } else {
            ++counts.reused;
        }
    }
}

void RunStats::record_step_skip(const Backbone& backbone) {
    ++step_skips;
    const auto& reg = backbone.registry();
    for (std::size_t f = 0; f < reg.size(); ++f) {
        per_family[f].under_skipped_steps +=
            static_cast<std::uint64_t>(backbone.layers() * reg.hooks(f));
    }
}

std::uint64_t RunStats::computed_sites() const noexcept {
    std::uint64_t n = 0;
    for (const auto& c : per_family) n += c.computed;
    return n;
}

std::uint64_t RunStats::reused_sites() const noexcept {
    std::uint64_t n = 0;
    for (const auto& c : per_family) n += c.reused;
    return n;
}

std::uint64_t RunStats::skipped_step_sites() const noexcept {
    std::uint64_t n = 0;
    for (const auto& c : per_family) n += c.under_skipped_steps;
    return n;
}

double RunStats::family_skip_fraction(std::size_t family) const {
    const auto& c = per_family.at(family);
    const auto total = c.total();
    return total == 0 ? 0.0 : static_cast<double>(c.reused) / static_cast<double>(total);
}

double RunStats::step_skip_fraction() const noexcept {
    return steps == 0 ? 0.0 : static_cast<double>(step_skips) / static_cast<double>(steps);
}

// ---- SampleSchedule ---------------------------------------------------------

void SampleSchedule::validate() const {
    if (steps() < 3) {
        throw std::invalid_argument("schedule: at least 3 steps are required, got " +
                                    std::to_string(std::max(0, steps())));
    }
    const bool increasing = sigma[1] > sigma[0];
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (!std::isfinite(sigma[i])) throw std::invalid_argument("schedule: non-finite sigma");
        if (i > 0 && ((sigma[i] > sigma[i - 1]) != increasing || sigma[i] == sigma[i - 1])) {
            throw std::invalid_argument("schedule: sigma must be strictly monotone (index " +
                                        std::to_string(i) + ")");
        }
    }
}

std::string SampleSchedule::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    const std::int64_t t = steps();
    mix(&t, sizeof t);
    mix(sigma.data(), sigma.size() * sizeof(double));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SampleSchedule SampleSchedule::linear(int steps, double start, double end) {
    if (steps < 3) throw std::invalid_argument("schedule: at least 3 steps are required");
    SampleSchedule s;
    s.sigma.resize(static_cast<std::size_t>(steps) + 1);
    for (int i = 0; i <= steps; ++i) {
        s.sigma[static_cast<std::size_t>(i)] =
            start + (end - start) * static_cast<double>(i) / static_cast<double>(steps);
    }
    s.validate();
    return s;
}

// ---- Executors ----------------------------------------------------------------

void FullComputeExecutor::begin(const Backbone& backbone, const SampleSchedule&) {
    cache_.emplace(backbone.make_cache());
}

TokenTensor FullComputeExecutor::evaluate(const StepContext& ctx, RunStats& stats) {
    auto out = ctx.backbone.forward_step(ctx.x, ctx.cond, ctx.step, ctx.backbone.all_compute_gate(),
                                         *cache_);
    stats.record_forward(ctx.backbone, out.touched);
    return std::move(out.z);
}

NonFiniteStateError::NonFiniteStateError(int step_)
    : std::runtime_error("non-finite sampler state at step " + std::to_string(step_)),
      step(step_) {}

Trajectory run_trajectory(const Backbone& backbone, const SampleSchedule& schedule,
                          const TokenTensor& x_init, int cond, StepExecutor& executor,
                          const TrajectoryOptions& options) {
    schedule.validate();
    if (x_init.rows() != backbone.input_rows() || x_init.cols() != backbone.input_cols()) {
        throw ShapeError("run_trajectory: latent shape " + x_init.shape_string() +
                         " does not match backbone");
    }
    const int steps = schedule.steps();
    Trajectory traj{{}, {}, x_init, {}};
    traj.stats.reset(backbone, steps);
    traj.outputs.reserve(static_cast<std::size_t>(steps));
    if (options.record_latents) traj.latents.push_back(x_init);

    executor.begin(backbone, schedule);
    const auto start = std::chrono::steady_clock::now();
    TokenTensor& x = traj.x_final;
    for (int t = 0; t < steps; ++t) {
        TokenTensor z = executor.evaluate(StepContext{backbone, x, cond, t}, traj.stats);
        if (!z.same_shape(x)) {
            throw ShapeError("run_trajectory: executor returned " + z.shape_string() + " at step " +
                             std::to_string(t));
        }
        const double dt = schedule.sigma[static_cast<std::size_t>(t) + 1] -
                          schedule.sigma[static_cast<std::size_t>(t)];
        axpy(dt, z, x);
        if (!z.all_finite() || !x.all_finite()) throw NonFiniteStateError(t);
        traj.outputs.push_back(std::move(z));
        if (options.record_latents) traj.latents.push_back(x);
    }
    traj.stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return traj;
}

Trajectory run_baseline(const Backbone& backbone, const SampleSchedule& schedule,
                        const TokenTensor& x_init, int cond) {
    FullComputeExecutor exec;
    return run_trajectory(backbone, schedule, x_init, cond, exec);
}

// ---- SampleInput ----------------------------------------------------------------

TokenTensor SampleInput::latent(const Backbone& backbone) const {
    return gaussian_tensor(backbone.input_rows(), backbone.input_cols(), seed);
}

std::string SampleInput::describe() const {
    return "seed=" + std::to_string(seed) + ",class=" + std::to_string(cond);
}

std::vector<SampleInput> make_inputs(int count, std::uint64_t base_seed, int cond_classes,
                                     int first_class) {
    if (count < 1) throw std::invalid_argument("make_inputs: count must be positive");
    if (cond_classes < 1) throw std::invalid_argument("make_inputs: cond_classes must be positive");
    std::vector<SampleInput> out;
    for (int i = 0; i < count; ++i) {
        out.push_back({base_seed + static_cast<std::uint64_t>(i), (first_class + i) % cond_classes});
    }
    return out;
}

}  // namespace invardiff
