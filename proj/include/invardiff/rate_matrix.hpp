// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace invardiff {

/// T x L grid of per-(timestep, layer) statistics for one module family.
/// Entries with defined() == false are excluded from every quantile.
class RateMatrix {
public:
    RateMatrix(std::string family, int steps, int layers);

    const std::string& family() const noexcept { return family_; }
    int steps() const noexcept { return steps_; }
    int layers() const noexcept { return layers_; }

    double value(int t, int l) const { return values_[index(t, l)]; }
    bool defined(int t, int l) const { return defined_[index(t, l)] != 0; }

    /// Stores v and marks the entry defined.
    void set(int t, int l, double v);
    void set_undefined(int t, int l);

    std::size_t defined_count() const noexcept;
    /// Defined entries in (t, l) row-major order.
    std::vector<double> defined_values() const;

    bool same_layout(const RateMatrix& other) const noexcept {
        return steps_ == other.steps_ && layers_ == other.layers_;
    }

    friend bool operator==(const RateMatrix&, const RateMatrix&) = default;

private:
    std::size_t index(int t, int l) const;

    std::string family_;
    int steps_;
    int layers_;
    std::vector<double> values_;
    std::vector<std::uint8_t> defined_;
};

/// Per-step rate of the network output, length T.
class StepRateVector {
public:
    explicit StepRateVector(int steps);

    int steps() const noexcept { return static_cast<int>(values_.size()); }
    double value(int t) const { return values_.at(static_cast<std::size_t>(t)); }
    bool defined(int t) const { return defined_.at(static_cast<std::size_t>(t)) != 0; }
    void set(int t, double v);
    void set_undefined(int t);
    std::vector<double> defined_values() const;

    /// Single-layer view used for CSV/PGM export.
    RateMatrix as_matrix(const std::string& name = "step") const;

    friend bool operator==(const StepRateVector&, const StepRateVector&) = default;

private:
    std::vector<double> values_;
    std::vector<std::uint8_t> defined_;
};

}  // namespace invardiff
