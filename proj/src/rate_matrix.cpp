// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/rate_matrix.hpp"

#include <stdexcept>

namespace invardiff {

RateMatrix::RateMatrix(std::string family, int steps, int layers)
    : family_(std::move(family)), steps_(steps), layers_(layers) {
    if (steps <= 0 || layers <= 0) {
        throw std::invalid_argument("RateMatrix: steps and layers must be positive");
    }
    const auto n = static_cast<std::size_t>(steps) * static_cast<std::size_t>(layers);
    values_.assign(n, 0.0);
    defined_.assign(n, 0);
}

std::size_t RateMatrix::index(int t, int l) const {
    if (t < 0 || t >= steps_ || l < 0 || l >= layers_) {
        throw std::out_of_range("RateMatrix(" + family_ + "): index (" + std::to_string(t) + ", " +
                                std::to_string(l) + ") out of range");
    }
    return static_cast<std::size_t>(t) * static_cast<std::size_t>(layers_) +
           static_cast<std::size_t>(l);
}

void RateMatrix::set(int t, int l, double v) {
    const auto i = index(t, l);
    values_[i] = v;
    defined_[i] = 1;
}

void RateMatrix::set_undefined(int t, int l) {
    const auto i = index(t, l);
    values_[i] = 0.0;
    defined_[i] = 0;
}

std::size_t RateMatrix::defined_count() const noexcept {
    std::size_t n = 0;
    for (auto d : defined_) n += d;
    return n;
}

std::vector<double> RateMatrix::defined_values() const {
    std::vector<double> out;
    out.reserve(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (defined_[i]) out.push_back(values_[i]);
    }
    return out;
}

StepRateVector::StepRateVector(int steps) {
    if (steps <= 0) throw std::invalid_argument("StepRateVector: steps must be positive");
    values_.assign(static_cast<std::size_t>(steps), 0.0);
    defined_.assign(static_cast<std::size_t>(steps), 0);
}

void StepRateVector::set(int t, double v) {
    values_.at(static_cast<std::size_t>(t)) = v;
    defined_.at(static_cast<std::size_t>(t)) = 1;
}

void StepRateVector::set_undefined(int t) {
    values_.at(static_cast<std::size_t>(t)) = 0.0;
    defined_.at(static_cast<std::size_t>(t)) = 0;
}

std::vector<double> StepRateVector::defined_values() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (defined_[i]) out.push_back(values_[i]);
    }
    return out;
}

RateMatrix StepRateVector::as_matrix(const std::string& name) const {
    RateMatrix m(name, steps(), 1);
    for (int t = 0; t < steps(); ++t) {
        if (defined(t)) m.set(t, 0, value(t));
    }
    return m;
}

}  // namespace invardiff
