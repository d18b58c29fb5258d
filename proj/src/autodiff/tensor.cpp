// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/autodiff/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "nrit/errors.hpp"

namespace nrit {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {
    for (std::size_t d : shape) {
        if (d == 0) {
            throw ContractError("tensor dimensions must be positive: " + shape_string(shape));
        }
    }
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != data.size()) {
        throw ContractError("tensor shape " + shape_string(shape) + " does not match " +
                            std::to_string(data.size()) + " values");
    }
}

Tensor Tensor::filled(Shape s, double v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

void Tensor::fill(double v) {
    for (double& x : data) {
        x = v;
    }
}

bool Tensor::all_finite() const {
    for (double x : data) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
    return shape == other.shape &&
           (data.empty() || std::memcmp(data.data(), other.data.data(), data.size() * sizeof(double)) == 0);
}

namespace kernels {

void matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
    if (!accumulate) {
        std::memset(c, 0, m * n * sizeof(double));
    }
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
    // Four outputs per pass share the loads of a; each sum still runs in p order.
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = b + j * k;
            const double* b1 = b0 + k;
            const double* b2 = b1 + k;
            const double* b3 = b2 + k;
            double s0 = 0.0;
            double s1 = 0.0;
            double s2 = 0.0;
            double s3 = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ai[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            if (accumulate) {
                ci[j] += s0;
                ci[j + 1] += s1;
                ci[j + 2] += s2;
                ci[j + 3] += s3;
            } else {
                ci[j] = s0;
                ci[j + 1] = s1;
                ci[j + 2] = s2;
                ci[j + 3] = s3;
            }
        }
        for (; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += ai[p] * bj[p];
            }
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
               bool accumulate) {
    if (!accumulate) {
        std::memset(c, 0, k * n * sizeof(double));
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                cp[j] += av * bi[j];
            }
        }
    }
}

}  // namespace kernels

}  // namespace nrit
