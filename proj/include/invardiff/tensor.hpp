// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major activation tensors and the distance metrics used for
// change-rate statistics.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace invardiff {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// N x d matrix of doubles holding one module output or one network output.
/// Also used for the toy backbones' weight matrices.
class TokenTensor {
public:
    TokenTensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    TokenTensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static TokenTensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const TokenTensor& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_string() const;
    bool all_finite() const noexcept;

    // Value equality. Use bit_equal() when -0.0 vs 0.0 matters.
    friend bool operator==(const TokenTensor&, const TokenTensor&) = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// Exact bitwise comparison of shape and every element.
bool bit_equal(const TokenTensor& a, const TokenTensor& b) noexcept;

/// FNV-1a over the raw element bytes; stable for a fixed float contract.
std::uint64_t checksum(const TokenTensor& t) noexcept;

// Metrics. All require identical shapes and throw ShapeError otherwise.

/// Sum of |a_ij - b_ij|.
double l1_diff_norm(const TokenTensor& a, const TokenTensor& b);
double mse(const TokenTensor& a, const TokenTensor& b);
/// Cosine of the flattened vectors. Two zero tensors give 1, one zero tensor gives 0.
double cosine_sim(const TokenTensor& a, const TokenTensor& b);
/// 10 log10(peak^2 / mse); kPsnrCap when the tensors are equal.
double psnr(const TokenTensor& a, const TokenTensor& b, double peak);

inline constexpr double kPsnrCap = 200.0;

double psnr_from_mse(double mse_value, double peak);

double dot(const TokenTensor& a, const TokenTensor& b);
double squared_norm(const TokenTensor& a) noexcept;
double max_abs(const TokenTensor& a) noexcept;

// Kernels for the toy backbones.

/// y += alpha * x
void axpy(double alpha, const TokenTensor& x, TokenTensor& y);
/// (n x k) * (k x m)
TokenTensor matmul(const TokenTensor& a, const TokenTensor& b);
/// Row-wise normalization to zero mean and unit variance, no affine parameters.
TokenTensor layer_norm(const TokenTensor& x, double eps = 1e-6);
/// Stack rows of a over rows of b.
TokenTensor vstack(const TokenTensor& a, const TokenTensor& b);
/// Rows [begin, begin + count).
TokenTensor slice_rows(const TokenTensor& x, std::size_t begin, std::size_t count);

}  // namespace invardiff
