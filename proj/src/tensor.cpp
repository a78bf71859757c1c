// Copyright (c) 2026, The InvarDiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "invardiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace invardiff {
namespace {

void require_same_shape(const TokenTensor& a, const TokenTensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
    }
}

}  // namespace

TokenTensor::TokenTensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
        throw ShapeError("TokenTensor: dimensions must be positive, got " + shape_string());
    }
}

TokenTensor::TokenTensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) {
        throw ShapeError("TokenTensor: dimensions must be positive, got " + shape_string());
    }
    if (data_.size() != rows * cols) {
        throw ShapeError("TokenTensor: data length " + std::to_string(data_.size()) +
                         " does not match " + shape_string());
    }
}

TokenTensor TokenTensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n = rows.size();
    const std::size_t d = n == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(n * d);
    for (const auto& r : rows) {
        if (r.size() != d) {
            throw ShapeError("TokenTensor::from_rows: ragged rows");
        }
        data.insert(data.end(), r.begin(), r.end());
    }
    return TokenTensor(n, d, std::move(data));
}

std::string TokenTensor::shape_string() const {
    std::ostringstream os;
    os << "[" << rows_ << "x" << cols_ << "]";
    return os.str();
}

bool TokenTensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(const TokenTensor& a, const TokenTensor& b) noexcept {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

std::uint64_t checksum(const TokenTensor& t) noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
    for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

double l1_diff_norm(const TokenTensor& a, const TokenTensor& b) {
    require_same_shape(a, b, "l1_diff_norm");
    const auto x = a.data();
    const auto y = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
    return s;
}

double mse(const TokenTensor& a, const TokenTensor& b) {
    require_same_shape(a, b, "mse");
    const auto x = a.data();
    const auto y = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s / static_cast<double>(x.size());
}

double dot(const TokenTensor& a, const TokenTensor& b) {
    require_same_shape(a, b, "dot");
    const auto x = a.data();
    const auto y = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double squared_norm(const TokenTensor& a) noexcept {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return s;
}

double max_abs(const TokenTensor& a) noexcept {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double cosine_sim(const TokenTensor& a, const TokenTensor& b) {
    require_same_shape(a, b, "cosine_sim");
    const double na = std::sqrt(squared_norm(a));
    const double nb = std::sqrt(squared_norm(b));
    if (na == 0.0 && nb == 0.0) return 1.0;
    if (na == 0.0 || nb == 0.0) return 0.0;
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

double psnr_from_mse(double mse_value, double peak) {
    if (!(peak > 0.0) || !std::isfinite(peak)) {
        throw std::invalid_argument("psnr: peak must be positive and finite, got " +
                                    std::to_string(peak));
    }
    if (mse_value <= 0.0) return kPsnrCap;
    return 10.0 * std::log10(peak * peak / mse_value);
}

double psnr(const TokenTensor& a, const TokenTensor& b, double peak) {
    if (!(peak > 0.0) || !std::isfinite(peak)) {
        throw std::invalid_argument("psnr: peak must be positive and finite, got " +
                                    std::to_string(peak));
    }
    return psnr_from_mse(mse(a, b), peak);
}

void axpy(double alpha, const TokenTensor& x, TokenTensor& y) {
    require_same_shape(x, y, "axpy");
    const auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] += alpha * xs[i];
}

TokenTensor matmul(const TokenTensor& a, const TokenTensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimension mismatch " + a.shape_string() + " * " +
                         b.shape_string());
    }
    const std::size_t n = a.rows();
    const std::size_t k = a.cols();
    const std::size_t m = b.cols();
    TokenTensor out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = out.row(i).data();
        const double* arow = a.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p).data();
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

TokenTensor layer_norm(const TokenTensor& x, double eps) {
    TokenTensor out(x.rows(), x.cols());
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean *= inv_d;
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var *= inv_d;
        const double scale = 1.0 / std::sqrt(var + eps);
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) o[c] = (in[c] - mean) * scale;
    }
    return out;
}

TokenTensor vstack(const TokenTensor& a, const TokenTensor& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("vstack: column mismatch " + a.shape_string() + " / " + b.shape_string());
    }
    std::vector<double> data;
    data.reserve(a.size() + b.size());
    data.insert(data.end(), a.data().begin(), a.data().end());
    data.insert(data.end(), b.data().begin(), b.data().end());
    return TokenTensor(a.rows() + b.rows(), a.cols(), std::move(data));
}

TokenTensor slice_rows(const TokenTensor& x, std::size_t begin, std::size_t count) {
    if (count == 0 || begin + count > x.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + x.shape_string());
    }
    const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(begin * x.cols());
    std::vector<double> data(first, first + static_cast<std::ptrdiff_t>(count * x.cols()));
    return TokenTensor(count, x.cols(), std::move(data));
}

}  // namespace invardiff
