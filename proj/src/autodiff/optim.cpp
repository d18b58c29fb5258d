// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/autodiff/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nrit/errors.hpp"

namespace nrit {

std::vector<std::uint8_t>& GradientMask::slot(const std::string& name, std::size_t numel) {
    auto [it, inserted] = bits_.try_emplace(name, numel, std::uint8_t{0});
    if (!inserted && it->second.size() != numel) {
        throw ConfigError("mask: inconsistent size for parameter " + name);
    }
    return it->second;
}

void GradientMask::select_all(const std::string& name, std::size_t numel) {
    auto& b = slot(name, numel);
    std::fill(b.begin(), b.end(), std::uint8_t{1});
}

void GradientMask::select(const std::string& name, std::size_t numel, std::size_t index) {
    if (index >= numel) {
        throw IndexError("mask: index " + std::to_string(index) + " outside " + name);
    }
    slot(name, numel)[index] = 1;
}

bool GradientMask::selects(const std::string& name, std::size_t index) const {
    const auto* b = bits(name);
    return b != nullptr && index < b->size() && (*b)[index] != 0;
}

const std::vector<std::uint8_t>* GradientMask::bits(const std::string& name) const {
    auto it = bits_.find(name);
    return it == bits_.end() ? nullptr : &it->second;
}

std::size_t GradientMask::count(const std::string& name) const {
    const auto* b = bits(name);
    if (b == nullptr) {
        return 0;
    }
    return static_cast<std::size_t>(std::count(b->begin(), b->end(), std::uint8_t{1}));
}

std::size_t GradientMask::count() const {
    std::size_t n = 0;
    for (const auto& [name, b] : bits_) {
        n += static_cast<std::size_t>(std::count(b.begin(), b.end(), std::uint8_t{1}));
    }
    return n;
}

void GradientMask::validate(std::span<const Parameter> params) const {
    for (const auto& [name, b] : bits_) {
        auto it = std::find_if(params.begin(), params.end(), [&](const Parameter& p) { return p.name == name; });
        if (it == params.end()) {
            throw ConfigError("mask references unknown parameter '" + name + "'");
        }
        if (it->value.numel() != b.size()) {
            throw ConfigError("mask size mismatch for parameter '" + name + "'");
        }
    }
}

GradientMask GradientMask::unite(const GradientMask& a, const GradientMask& b) {
    GradientMask out = a;
    out.origin_ = a.origin_.empty() ? b.origin_ : (b.origin_.empty() ? a.origin_ : a.origin_ + "+" + b.origin_);
    for (const auto& [name, bb] : b.bits_) {
        auto& dst = out.slot(name, bb.size());
        for (std::size_t i = 0; i < bb.size(); ++i) {
            dst[i] = static_cast<std::uint8_t>(dst[i] | bb[i]);
        }
    }
    return out;
}

GradientMask GradientMask::intersect(const GradientMask& a, const GradientMask& b) {
    GradientMask out;
    for (const auto& [name, ab] : a.bits_) {
        const auto* bb = b.bits(name);
        if (bb == nullptr || bb->size() != ab.size()) {
            continue;
        }
        std::vector<std::uint8_t> r(ab.size());
        bool any = false;
        for (std::size_t i = 0; i < ab.size(); ++i) {
            r[i] = static_cast<std::uint8_t>(ab[i] & (*bb)[i]);
            any = any || r[i] != 0;
        }
        if (any) {
            out.bits_.emplace(name, std::move(r));
        }
    }
    return out;
}

void adamw_step(AdamWState& state, std::span<Parameter> params, const GradientMask* mask, const LrScales* scales) {
    if (mask != nullptr) {
        mask->validate(params);
    }
    const AdamWConfig& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);

    for (Parameter& p : params) {
        const std::vector<std::uint8_t>* sel = nullptr;
        if (mask != nullptr) {
            sel = mask->bits(p.name);
            if (sel == nullptr) {
                p.zero_grad();
                continue;
            }
        }
        const std::vector<double>* sc = nullptr;
        if (scales != nullptr) {
            auto it = scales->find(p.name);
            if (it != scales->end()) {
                sc = &it->second;
            }
        }
        auto [mit, m_new] = state.first_moment.try_emplace(p.name, p.value.shape);
        auto [vit, v_new] = state.second_moment.try_emplace(p.name, p.value.shape);
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            if (sel != nullptr && (*sel)[i] == 0) {
                continue;
            }
            const double lr = sc != nullptr ? c.lr * (*sc)[i] : c.lr;
            const double g = p.grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double mhat = m[i] / bias1;
            const double vhat = v[i] / bias2;
            double w = p.value[i];
            w -= lr * c.weight_decay * w;
            w -= lr * mhat / (std::sqrt(vhat) + c.eps);
            p.value[i] = w;
        }
        p.zero_grad();
    }
}

namespace {

double evaluate(const LossClosure& closure) {
    Graph g(false);
    Var loss = closure(g);
    if (loss.value().numel() != 1) {
        throw ContractError("gradient_check: closure must return a scalar");
    }
    return loss.value()[0];
}

}  // namespace

GradCheckReport gradient_check(const LossClosure& closure, std::span<Parameter* const> params, double h, double tol,
                               double denom_floor) {
    const double f0 = evaluate(closure);
    const double f1 = evaluate(closure);
    if (std::memcmp(&f0, &f1, sizeof(double)) != 0) {
        throw NonDeterminismError("gradient_check: closure returned different values for identical inputs");
    }

    for (Parameter* p : params) {
        p->zero_grad();
    }
    {
        Graph g(true);
        Var loss = closure(g);
        g.backward(loss);
    }

    GradCheckReport report;
    for (Parameter* p : params) {
        GradCheckEntry e;
        e.name = p->name;
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double fp = evaluate(closure);
            p->value[i] = saved - h;
            const double fm = evaluate(closure);
            p->value[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), denom_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            if (i == 0 || rel > e.max_rel_error) {
                e.max_rel_error = rel;
                e.worst_index = i;
                e.analytic = analytic;
                e.numeric = numeric;
            }
        }
        e.flagged = e.max_rel_error > tol;
        report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
        report.passed = report.passed && !e.flagged;
        report.entries.push_back(e);
    }
    for (Parameter* p : params) {
        p->zero_grad();
    }
    return report;
}

}  // namespace nrit
