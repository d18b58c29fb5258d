// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nrit/autodiff/tensor.hpp"

namespace nrit {

// A named trainable array. The gradient accumulates across backward passes
// until an optimizer step (or zero_grad) clears it.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() { grad.fill(0.0); }
};

enum class OpKind : std::uint8_t {
    leaf,
    add,
    mul,
    scale,
    matmul,
    matmul_nt,
    add_bias,
    gelu,
    tanh,
    log,
    layer_norm,
    softmax,
    causal_softmax,
    embedding,
    cross_entropy,
    slice_rows,
    slice_cols,
    select_cols,
    concat_cols,
    override_row,
    sum,
    pick,
};

std::string_view op_name(OpKind kind);

class Graph;

// Lightweight handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] const Tensor& grad() const;
};

// Tape of operations recorded during a forward pass. Nodes are appended in
// creation order, which is a topological order, so backward is a single
// reverse sweep. One graph per computation; graphs share nothing mutable
// except the Parameters they reference.
class Graph {
  public:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    struct Node {
        OpKind kind = OpKind::leaf;
        std::vector<std::size_t> inputs;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        Parameter* param = nullptr;
        BackwardFn backward;
    };

    // When track_parameters is false, parameter leaves are treated as
    // constants and backward only visits nodes downstream of input() leaves.
    explicit Graph(bool track_parameters = true) : track_parameters_(track_parameters) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor t);
    // A differentiable leaf that is not a Parameter (e.g. an activation override).
    Var input(Tensor t);
    Var parameter(Parameter& p);

    // Populates gradients of every node reachable from loss and accumulates
    // parameter gradients into Parameter::grad.
    void backward(Var loss);

    [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    // Gradient of the last backward w.r.t. node id; zeros when unreachable.
    [[nodiscard]] const Tensor& grad(std::size_t id) const;

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const Node& node(std::size_t id) const { return nodes_.at(id); }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    // Used by op implementations.
    Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);
    Node& node_mut(std::size_t id) { return nodes_.at(id); }
    // Gradient slot of an input, allocated on first touch. Callers must check
    // requires_grad first.
    Tensor& grad_slot(std::size_t id);

  private:
    std::vector<Node> nodes_;
    bool track_parameters_;
    bool backward_done_ = false;
    mutable std::vector<Tensor> zero_cache_;
};

// Reverse-mode primitives. All operate on rank-1 or rank-2 tensors; a rank-1
// tensor is a single row.
namespace ops {

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
// x[m x n] + bias[n] broadcast over rows
Var add_bias(Var x, Var bias);
Var gelu(Var x);
Var tanh(Var x);
Var log(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax(Var x);
// Row-wise softmax where row i may only see columns j <= i + (cols - rows).
Var causal_softmax(Var x);
Var embedding(Var table, std::span<const int> ids);
// Weighted mean negative log-likelihood over rows with weight > 0.
Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var select_cols(Var x, std::span<const std::size_t> cols);
Var concat_cols(std::span<const Var> parts);
// Copy of x with row `row` replaced by v.
Var override_row(Var x, std::size_t row, Var v);
Var sum(Var x);
Var pick(Var x, std::size_t flat_index);

}  // namespace ops

}  // namespace nrit
