// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace nrit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank-1 tensors behave as a single row
// wherever a matrix view is needed.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor filled(Shape s, double v);

    [[nodiscard]] std::size_t numel() const { return data.size(); }
    [[nodiscard]] std::size_t rank() const { return shape.size(); }
    [[nodiscard]] std::size_t rows() const { return shape.size() <= 1 ? 1 : shape[0]; }
    [[nodiscard]] std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

    void fill(double v);
    [[nodiscard]] bool all_finite() const;
    [[nodiscard]] bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // Bitwise comparison, so that -0.0 != 0.0 and NaN payloads count.
    [[nodiscard]] bool bit_equal(const Tensor& other) const;
};

namespace kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate);
// c[k x n] (+)= a[m x k]^T * b[m x n]
void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate);

}  // namespace kernels

}  // namespace nrit
