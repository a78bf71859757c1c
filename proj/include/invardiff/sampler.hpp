// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic Euler sampling loop. All reuse logic lives in the executor;
// the loop only advances x_{t+1} = x_t + (sigma_{t+1} - sigma_t) z_t.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "invardiff/backbone.hpp"
#include "invardiff/run_stats.hpp"
#include "invardiff/tensor.hpp"

namespace invardiff {

struct SampleSchedule {
    /// Length T + 1, strictly monotone.
    std::vector<double> sigma;

    int steps() const noexcept { return static_cast<int>(sigma.size()) - 1; }
    void validate() const;
    /// FNV-1a over T and the sigma bytes, as 16 hex digits.
    std::string hash() const;

    static SampleSchedule linear(int steps, double start = 1.0, double end = 0.0);
};

struct StepContext {
    const Backbone& backbone;
    const TokenTensor& x;
    int cond;
    int step;
};

/// Supplies z_t for every step. Implementations decide whether to run the
/// backbone and with which gates.
class StepExecutor {
public:
    virtual ~StepExecutor() = default;
    /// Called once before step 0.
    virtual void begin(const Backbone& backbone, const SampleSchedule& schedule) {
        (void)backbone;
        (void)schedule;
    }
    virtual TokenTensor evaluate(const StepContext& ctx, RunStats& stats) = 0;
};

/// Runs every module at every step.
class FullComputeExecutor final : public StepExecutor {
public:
    void begin(const Backbone& backbone, const SampleSchedule& schedule) override;
    TokenTensor evaluate(const StepContext& ctx, RunStats& stats) override;

private:
    std::optional<ModuleCache> cache_;
};

class NonFiniteStateError : public std::runtime_error {
public:
    explicit NonFiniteStateError(int step);
    int step;
};

struct Trajectory {
    std::vector<TokenTensor> outputs;  // z_0 .. z_{T-1}
    std::vector<TokenTensor> latents;  // x_0 .. x_T, only when requested
    TokenTensor x_final;
    RunStats stats;
};

struct TrajectoryOptions {
    bool record_latents = false;
};

Trajectory run_trajectory(const Backbone& backbone, const SampleSchedule& schedule,
                          const TokenTensor& x_init, int cond, StepExecutor& executor,
                          const TrajectoryOptions& options = {});

/// All-compute trajectory.
Trajectory run_baseline(const Backbone& backbone, const SampleSchedule& schedule,
                        const TokenTensor& x_init, int cond);

/// One calibration or evaluation input: a latent seed and a class index.
struct SampleInput {
    std::uint64_t seed = 0;
    int cond = 0;

    TokenTensor latent(const Backbone& backbone) const;
    std::string describe() const;
    friend bool operator==(const SampleInput&, const SampleInput&) = default;
};

/// K inputs with seeds base_seed, base_seed+1, ... and classes cycling
/// through the backbone's class count.
std::vector<SampleInput> make_inputs(int count, std::uint64_t base_seed, int cond_classes,
                                     int first_class = 0);

}  // namespace invardiff
