// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nrit/errors.hpp"

namespace nrit {

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::matmul: return "matmul";
        case OpKind::matmul_nt: return "matmul_nt";
        case OpKind::add_bias: return "add_bias";
        case OpKind::gelu: return "gelu";
        case OpKind::tanh: return "tanh";
        case OpKind::log: return "log";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::softmax: return "softmax";
        case OpKind::causal_softmax: return "causal_softmax";
        case OpKind::embedding: return "embedding";
        case OpKind::cross_entropy: return "cross_entropy";
        case OpKind::slice_rows: return "slice_rows";
        case OpKind::slice_cols: return "slice_cols";
        case OpKind::select_cols: return "select_cols";
        case OpKind::concat_cols: return "concat_cols";
        case OpKind::override_row: return "override_row";
        case OpKind::sum: return "sum";
        case OpKind::pick: return "pick";
    }
    return "unknown";
}

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::constant(Tensor t) { return record(OpKind::leaf, {}, std::move(t), nullptr); }

Var Graph::input(Tensor t) {
    Var v = record(OpKind::leaf, {}, std::move(t), nullptr);
    nodes_.back().requires_grad = true;
    return v;
}

Var Graph::parameter(Parameter& p) {
    Var v = record(OpKind::leaf, {}, p.value, nullptr);
    nodes_.back().requires_grad = track_parameters_;
    nodes_.back().param = &p;
    return v;
}

Var Graph::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    if (backward_done_) {
        throw ContractError("graph is sealed after backward; build a new graph");
    }
    if (!value.all_finite()) {
        throw NumericError("non-finite value produced by " + std::string(op_name(kind)) + " node " +
                           std::to_string(nodes_.size()));
    }
    Node n;
    n.kind = kind;
    n.requires_grad = false;
    for (std::size_t in : inputs) {
        n.requires_grad = n.requires_grad || nodes_.at(in).requires_grad;
    }
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_slot(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape);
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor& Graph::grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.has_grad) {
        return n.grad;
    }
    if (zero_cache_.size() < nodes_.size()) {
        zero_cache_.resize(nodes_.size());
    }
    if (zero_cache_[id].shape != n.value.shape) {
        zero_cache_[id] = Tensor(n.value.shape);
    }
    return zero_cache_[id];
}

void Graph::backward(Var loss) {
    if (loss.graph != this) {
        throw ContractError("loss belongs to a different graph");
    }
    if (nodes_.at(loss.id).value.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_string(nodes_.at(loss.id).value.shape));
    }
    if (backward_done_) {
        throw ContractError("backward called twice on one graph");
    }
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) {
        return;
    }
    grad_slot(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.has_grad) {
            continue;
        }
        if (!n.grad.all_finite()) {
            throw NumericError("non-finite gradient at " + std::string(op_name(n.kind)) + " node " +
                               std::to_string(i));
        }
        if (n.kind == OpKind::leaf) {
            if (n.param != nullptr) {
                Tensor& pg = n.param->grad;
                for (std::size_t k = 0; k < pg.numel(); ++k) {
                    pg[k] += n.grad[k];
                }
            }
            continue;
        }
        n.backward(*this, i);
    }
}

namespace ops {

namespace {

Graph& graph_of(Var a) {
    if (a.graph == nullptr) {
        throw ContractError("uninitialised Var");
    }
    return *a.graph;
}

void require_same_graph(Var a, Var b) {
    if (a.graph != b.graph) {
        throw ContractError("operands belong to different graphs");
    }
}

void require_shape(bool ok, std::string_view op, const std::string& detail) {
    if (!ok) {
        throw ContractError(std::string(op) + ": shape mismatch " + detail);
    }
}

// Shape of a 2-D result with the same rank convention as x.
Shape matrix_shape(std::size_t rows, std::size_t cols, bool as_vector) {
    if (as_vector && rows == 1) {
        return {cols};
    }
    return {rows, cols};
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

}  // namespace

Var add(Var a, Var b) {
    require_same_graph(a, b);
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_shape(av.shape == bv.shape, "add", shape_string(av.shape) + " vs " + shape_string(bv.shape));
    Tensor out(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return g.record(OpKind::add, {a.id, b.id}, std::move(out), [](Graph& gr, std::size_t self) {
        const auto& n = gr.node(self);
        for (std::size_t in : n.inputs) {
            if (!gr.requires_grad(in)) {
                continue;
            }
            Tensor& gi = gr.grad_slot(in);
            const Tensor& go = gr.node(self).grad;
            for (std::size_t i = 0; i < gi.numel(); ++i) {
                gi[i] += go[i];
            }
        }
    });
}

Var mul(Var a, Var b) {
    require_same_graph(a, b);
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_shape(av.shape == bv.shape, "mul", shape_string(av.shape) + " vs " + shape_string(bv.shape));
    Tensor out(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return g.record(OpKind::mul, {a.id, b.id}, std::move(out), [](Graph& gr, std::size_t self) {
        const auto& n = gr.node(self);
        const std::size_t ia = n.inputs[0];
        const std::size_t ib = n.inputs[1];
        if (gr.requires_grad(ia)) {
            Tensor& ga = gr.grad_slot(ia);
            const Tensor& bv2 = gr.value(ib);
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                ga[i] += n.grad[i] * bv2[i];
            }
        }
        if (gr.requires_grad(ib)) {
            Tensor& gb = gr.grad_slot(ib);
            const Tensor& av2 = gr.value(ia);
            for (std::size_t i = 0; i < gb.numel(); ++i) {
                gb[i] += n.grad[i] * av2[i];
            }
        }
    });
}

Var scale(Var a, double s) {
    Graph& g = graph_of(a);
    Tensor out = a.value();
    for (double& x : out.data) {
        x *= s;
    }
    return g.record(OpKind::scale, {a.id}, std::move(out), [s](Graph& gr, std::size_t self) {
        const auto& n = gr.node(self);
        if (!gr.requires_grad(n.inputs[0])) {
            return;
        }
        Tensor& ga = gr.grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < ga.numel(); ++i) {
            ga[i] += n.grad[i] * s;
        }
    });
}

Var matmul(Var a, Var b) {
    require_same_graph(a, b);
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_shape(bv.rank() == 2 && av.cols() == bv.rows(), "matmul",
                  shape_string(av.shape) + " x " + shape_string(bv.shape));
    const std::size_t m = av.rows();
    const std::size_t k = av.cols();
    const std::size_t n = bv.cols();
    Tensor out(matrix_shape(m, n, av.rank() == 1));
    kernels::matmul_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
    return g.record(OpKind::matmul, {a.id, b.id}, std::move(out), [m, k, n](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        const std::size_t ia = nd.inputs[0];
        const std::size_t ib = nd.inputs[1];
        if (gr.requires_grad(ia)) {
            // dA = dC * B^T
            kernels::matmul_nt(nd.grad.data.data(), gr.value(ib).data.data(), gr.grad_slot(ia).data.data(), m, n,
                               k, true);
        }
        if (gr.requires_grad(ib)) {
            // dB = A^T * dC
            kernels::matmul_tn(gr.value(ia).data.data(), nd.grad.data.data(), gr.grad_slot(ib).data.data(), m, k,
                               n, true);
        }
    });
}

Var matmul_nt(Var a, Var b) {
    require_same_graph(a, b);
    Graph& g = graph_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_shape(av.cols() == bv.cols(), "matmul_nt", shape_string(av.shape) + " x " + shape_string(bv.shape) + "^T");
    const std::size_t m = av.rows();
    const std::size_t k = av.cols();
    const std::size_t n = bv.rows();
    Tensor out(matrix_shape(m, n, av.rank() == 1));
    kernels::matmul_nt(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
    return g.record(OpKind::matmul_nt, {a.id, b.id}, std::move(out), [m, k, n](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        const std::size_t ia = nd.inputs[0];
        const std::size_t ib = nd.inputs[1];
        if (gr.requires_grad(ia)) {
            // dA[m x k] = dC[m x n] * B[n x k]
            kernels::matmul_nn(nd.grad.data.data(), gr.value(ib).data.data(), gr.grad_slot(ia).data.data(), m, n,
                               k, true);
        }
        if (gr.requires_grad(ib)) {
            // dB[n x k] = dC^T[n x m] * A[m x k]
            kernels::matmul_tn(nd.grad.data.data(), gr.value(ia).data.data(), gr.grad_slot(ib).data.data(), m, n,
                               k, true);
        }
    });
}

Var add_bias(Var x, Var bias) {
    require_same_graph(x, bias);
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    require_shape(bv.numel() == xv.cols(), "add_bias", shape_string(xv.shape) + " + " + shape_string(bv.shape));
    Tensor out = xv;
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out.data[r * cols + c] += bv[c];
        }
    }
    return g.record(OpKind::add_bias, {x.id, bias.id}, std::move(out), [rows, cols](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (gr.requires_grad(nd.inputs[0])) {
            Tensor& gx = gr.grad_slot(nd.inputs[0]);
            for (std::size_t i = 0; i < gx.numel(); ++i) {
                gx[i] += nd.grad[i];
            }
        }
        if (gr.requires_grad(nd.inputs[1])) {
            Tensor& gb = gr.grad_slot(nd.inputs[1]);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    gb[c] += nd.grad[r * cols + c];
                }
            }
        }
    });
}

Var gelu(Var x) {
    Graph& g = graph_of(x);
    Tensor out = x.value();
    for (double& v : out.data) {
        v = gelu_value(v);
    }
    return g.record(OpKind::gelu, {x.id}, std::move(out), [](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        const Tensor& xv = gr.value(nd.inputs[0]);
        Tensor& gx = gr.grad_slot(nd.inputs[0]);
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            gx[i] += nd.grad[i] * gelu_grad(xv[i]);
        }
    });
}

Var tanh(Var x) {
    Graph& g = graph_of(x);
    Tensor out = x.value();
    for (double& v : out.data) {
        v = std::tanh(v);
    }
    return g.record(OpKind::tanh, {x.id}, std::move(out), [](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        Tensor& gx = gr.grad_slot(nd.inputs[0]);
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            const double y = nd.value[i];
            gx[i] += nd.grad[i] * (1.0 - y * y);
        }
    });
}

Var log(Var x) {
    Graph& g = graph_of(x);
    Tensor out = x.value();
    for (double& v : out.data) {
        v = std::log(v);
    }
    return g.record(OpKind::log, {x.id}, std::move(out), [](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        const Tensor& xv = gr.value(nd.inputs[0]);
        Tensor& gx = gr.grad_slot(nd.inputs[0]);
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            gx[i] += nd.grad[i] / xv[i];
        }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    require_same_graph(x, gamma);
    require_same_graph(x, beta);
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    require_shape(gamma.value().numel() == cols && beta.value().numel() == cols, "layer_norm",
                  shape_string(xv.shape) + " with " + shape_string(gamma.value().shape));
    Tensor xhat(xv.shape);
    std::vector<double> rstd(rows);
    Tensor out(xv.shape);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const auto xr = xv.row(r);
        double mean = 0.0;
        for (double v : xr) {
            mean += v;
        }
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (double v : xr) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(cols);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (xr[c] - mean) * rstd[r];
            xhat.at(r, c) = h;
            out.at(r, c) = h * gv[c] + bv[c];
        }
    }
    return g.record(
        OpKind::layer_norm, {x.id, gamma.id, beta.id}, std::move(out),
        [xhat = std::move(xhat), rstd = std::move(rstd), rows, cols](Graph& gr, std::size_t self) {
            const auto& nd = gr.node(self);
            const std::size_t ix = nd.inputs[0];
            const std::size_t ig = nd.inputs[1];
            const std::size_t ib = nd.inputs[2];
            const Tensor& gv2 = gr.value(ig);
            if (gr.requires_grad(ix)) {
                Tensor& gx = gr.grad_slot(ix);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double dh = nd.grad[r * cols + c] * gv2[c];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat.at(r, c);
                    }
                    mean_dh /= static_cast<double>(cols);
                    mean_dh_h /= static_cast<double>(cols);
                    for (std::size_t c = 0; c < cols; ++c) {
                        const double dh = nd.grad[r * cols + c] * gv2[c];
                        gx[r * cols + c] += rstd[r] * (dh - mean_dh - xhat.at(r, c) * mean_dh_h);
                    }
                }
            }
            if (gr.requires_grad(ig)) {
                Tensor& gg = gr.grad_slot(ig);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        gg[c] += nd.grad[r * cols + c] * xhat.at(r, c);
                    }
                }
            }
            if (gr.requires_grad(ib)) {
                Tensor& gb = gr.grad_slot(ib);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        gb[c] += nd.grad[r * cols + c];
                    }
                }
            }
        });
}

namespace {

Var softmax_impl(Var x, bool causal) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    if (causal && cols < rows) {
        throw ContractError("causal_softmax needs cols >= rows, got " + shape_string(xv.shape));
    }
    const std::size_t offset = causal ? cols - rows : 0;
    Tensor out(xv.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t visible = causal ? r + offset + 1 : cols;
        const auto xr = xv.row(r);
        auto orow = out.row(r);
        double mx = xr[0];
        for (std::size_t c = 1; c < visible; ++c) {
            mx = std::max(mx, xr[c]);
        }
        double total = 0.0;
        for (std::size_t c = 0; c < visible; ++c) {
            orow[c] = std::exp(xr[c] - mx);
            total += orow[c];
        }
        for (std::size_t c = 0; c < visible; ++c) {
            orow[c] /= total;
        }
    }
    return g.record(causal ? OpKind::causal_softmax : OpKind::softmax, {x.id}, std::move(out),
                    [rows, cols, offset, causal](Graph& gr, std::size_t self) {
                        const auto& nd = gr.node(self);
                        if (!gr.requires_grad(nd.inputs[0])) {
                            return;
                        }
                        Tensor& gx = gr.grad_slot(nd.inputs[0]);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t visible = causal ? r + offset + 1 : cols;
                            const double* y = nd.value.data.data() + r * cols;
                            const double* dy = nd.grad.data.data() + r * cols;
                            double dot = 0.0;
                            for (std::size_t c = 0; c < visible; ++c) {
                                dot += y[c] * dy[c];
                            }
                            double* dx = gx.data.data() + r * cols;
                            for (std::size_t c = 0; c < visible; ++c) {
                                dx[c] += y[c] * (dy[c] - dot);
                            }
                        }
                    });
}

}  // namespace

Var softmax(Var x) { return softmax_impl(x, false); }

Var causal_softmax(Var x) { return softmax_impl(x, true); }

Var embedding(Var table, std::span<const int> ids) {
    Graph& g = graph_of(table);
    const Tensor& tv = table.value();
    require_shape(tv.rank() == 2, "embedding", shape_string(tv.shape));
    const std::size_t vocab = tv.rows();
    const std::size_t dim = tv.cols();
    if (ids.empty()) {
        throw ContractError("embedding: empty id list");
    }
    std::vector<int> idv(ids.begin(), ids.end());
    Tensor out({idv.size(), dim});
    for (std::size_t t = 0; t < idv.size(); ++t) {
        if (idv[t] < 0 || static_cast<std::size_t>(idv[t]) >= vocab) {
            throw IndexError("embedding: id " + std::to_string(idv[t]) + " outside table of " + std::to_string(vocab));
        }
        const auto src = tv.row(static_cast<std::size_t>(idv[t]));
        std::copy(src.begin(), src.end(), out.row(t).begin());
    }
    return g.record(OpKind::embedding, {table.id}, std::move(out), [idv = std::move(idv), dim](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        Tensor& gt = gr.grad_slot(nd.inputs[0]);
        for (std::size_t t = 0; t < idv.size(); ++t) {
            double* dst = gt.data.data() + static_cast<std::size_t>(idv[t]) * dim;
            const double* src = nd.grad.data.data() + t * dim;
            for (std::size_t c = 0; c < dim; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
    Graph& g = graph_of(logits);
    const Tensor& lv = logits.value();
    const std::size_t rows = lv.rows();
    const std::size_t cols = lv.cols();
    if (targets.size() != rows || weights.size() != rows) {
        throw ContractError("cross_entropy: need one target and weight per row");
    }
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) {
            throw ContractError("cross_entropy: negative weight");
        }
        wsum += w;
    }
    if (wsum <= 0.0) {
        throw ContractError("cross_entropy: all weights are zero");
    }
    Tensor probs(lv.shape);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto xr = lv.row(r);
        auto pr = probs.row(r);
        double mx = xr[0];
        for (double v : xr) {
            mx = std::max(mx, v);
        }
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            pr[c] = std::exp(xr[c] - mx);
            total += pr[c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            pr[c] /= total;
        }
        if (weights[r] == 0.0) {
            continue;
        }
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
            throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " out of range");
        }
        const double logp = xr[static_cast<std::size_t>(targets[r])] - mx - std::log(total);
        loss -= weights[r] * logp;
    }
    loss /= wsum;
    std::vector<int> tv(targets.begin(), targets.end());
    std::vector<double> wv(weights.begin(), weights.end());
    return g.record(OpKind::cross_entropy, {logits.id}, Tensor::scalar(loss),
                    [probs = std::move(probs), tv = std::move(tv), wv = std::move(wv), wsum, rows,
                     cols](Graph& gr, std::size_t self) {
                        const auto& nd = gr.node(self);
                        if (!gr.requires_grad(nd.inputs[0])) {
                            return;
                        }
                        const double go = nd.grad[0];
                        Tensor& gl = gr.grad_slot(nd.inputs[0]);
                        for (std::size_t r = 0; r < rows; ++r) {
                            if (wv[r] == 0.0) {
                                continue;
                            }
                            const double f = go * wv[r] / wsum;
                            double* dst = gl.data.data() + r * cols;
                            const double* p = probs.data.data() + r * cols;
                            for (std::size_t c = 0; c < cols; ++c) {
                                dst[c] += f * p[c];
                            }
                            dst[static_cast<std::size_t>(tv[r])] -= f;
                        }
                    });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    if (count == 0 || start + count > rows) {
        throw IndexError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                         std::to_string(rows));
    }
    Tensor out(matrix_shape(count, cols, false));
    std::copy(xv.data.begin() + static_cast<std::ptrdiff_t>(start * cols),
              xv.data.begin() + static_cast<std::ptrdiff_t>((start + count) * cols), out.data.begin());
    return g.record(OpKind::slice_rows, {x.id}, std::move(out), [start, cols](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        Tensor& gx = gr.grad_slot(nd.inputs[0]);
        for (std::size_t i = 0; i < nd.grad.numel(); ++i) {
            gx[start * cols + i] += nd.grad[i];
        }
    });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    if (count == 0 || start + count > cols) {
        throw IndexError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                         std::to_string(cols));
    }
    Tensor out(matrix_shape(rows, count, xv.rank() == 1));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            out.data[r * count + c] = xv.data[r * cols + start + c];
        }
    }
    return g.record(OpKind::slice_cols, {x.id}, std::move(out), [start, rows, cols, count](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        Tensor& gx = gr.grad_slot(nd.inputs[0]);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < count; ++c) {
                gx.data[r * cols + start + c] += nd.grad.data[r * count + c];
            }
        }
    });
}

Var select_cols(Var x, std::span<const std::size_t> cols_sel) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    std::vector<std::size_t> sel(cols_sel.begin(), cols_sel.end());
    if (sel.empty()) {
        throw ContractError("select_cols: empty selection");
    }
    for (std::size_t c : sel) {
        if (c >= cols) {
            throw IndexError("select_cols: column " + std::to_string(c) + " of " + std::to_string(cols));
        }
    }
    const std::size_t k = sel.size();
    Tensor out(matrix_shape(rows, k, xv.rank() == 1));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
            out.data[r * k + j] = xv.data[r * cols + sel[j]];
        }
    }
    return g.record(OpKind::select_cols, {x.id}, std::move(out),
                    [sel = std::move(sel), rows, cols, k](Graph& gr, std::size_t self) {
                        const auto& nd = gr.node(self);
                        if (!gr.requires_grad(nd.inputs[0])) {
                            return;
                        }
                        Tensor& gx = gr.grad_slot(nd.inputs[0]);
                        for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t j = 0; j < k; ++j) {
                                gx.data[r * cols + sel[j]] += nd.grad.data[r * k + j];
                            }
                        }
                    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ContractError("concat_cols: no inputs");
    }
    Graph& g = graph_of(parts[0]);
    const std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        require_same_graph(parts[0], p);
        require_shape(p.value().rows() == rows, "concat_cols", "row counts differ");
        ids.push_back(p.id);
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor out(matrix_shape(rows, total, parts[0].value().rank() == 1));
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        const std::size_t w = pv.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(pv.data.begin() + static_cast<std::ptrdiff_t>(r * w),
                      pv.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * w),
                      out.data.begin() + static_cast<std::ptrdiff_t>(r * total + off));
        }
        off += w;
    }
    return g.record(OpKind::concat_cols, std::move(ids), std::move(out),
                    [widths = std::move(widths), rows, total](Graph& gr, std::size_t self) {
                        const auto& nd = gr.node(self);
                        std::size_t offset = 0;
                        for (std::size_t i = 0; i < nd.inputs.size(); ++i) {
                            const std::size_t w = widths[i];
                            if (gr.requires_grad(nd.inputs[i])) {
                                Tensor& gp = gr.grad_slot(nd.inputs[i]);
                                for (std::size_t r = 0; r < rows; ++r) {
                                    for (std::size_t c = 0; c < w; ++c) {
                                        gp.data[r * w + c] += nd.grad.data[r * total + offset + c];
                                    }
                                }
                            }
                            offset += w;
                        }
                    });
}

Var override_row(Var x, std::size_t row, Var v) {
    require_same_graph(x, v);
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    const std::size_t rows = xv.rows();
    const std::size_t cols = xv.cols();
    if (row >= rows) {
        throw IndexError("override_row: row " + std::to_string(row) + " of " + std::to_string(rows));
    }
    require_shape(v.value().numel() == cols, "override_row",
                  shape_string(v.value().shape) + " into " + shape_string(xv.shape));
    Tensor out = xv;
    std::copy(v.value().data.begin(), v.value().data.end(), out.row(row).begin());
    return g.record(OpKind::override_row, {x.id, v.id}, std::move(out), [row, cols](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (gr.requires_grad(nd.inputs[0])) {
            Tensor& gx = gr.grad_slot(nd.inputs[0]);
            for (std::size_t i = 0; i < gx.numel(); ++i) {
                if (i / cols != row) {
                    gx[i] += nd.grad[i];
                }
            }
        }
        if (gr.requires_grad(nd.inputs[1])) {
            Tensor& gv = gr.grad_slot(nd.inputs[1]);
            for (std::size_t c = 0; c < cols; ++c) {
                gv[c] += nd.grad[row * cols + c];
            }
        }
    });
}

Var sum(Var x) {
    Graph& g = graph_of(x);
    double s = 0.0;
    for (double v : x.value().data) {
        s += v;
    }
    return g.record(OpKind::sum, {x.id}, Tensor::scalar(s), [](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        Tensor& gx = gr.grad_slot(nd.inputs[0]);
        for (double& v : gx.data) {
            v += nd.grad[0];
        }
    });
}

Var pick(Var x, std::size_t flat_index) {
    Graph& g = graph_of(x);
    if (flat_index >= x.value().numel()) {
        throw IndexError("pick: index " + std::to_string(flat_index) + " of " + std::to_string(x.value().numel()));
    }
    return g.record(OpKind::pick, {x.id}, Tensor::scalar(x.value()[flat_index]), [flat_index](Graph& gr, std::size_t self) {
        const auto& nd = gr.node(self);
        if (!gr.requires_grad(nd.inputs[0])) {
            return;
        }
        gr.grad_slot(nd.inputs[0])[flat_index] += nd.grad[0];
    });
}

}  // namespace ops

}  // namespace nrit
