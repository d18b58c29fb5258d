// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nrit/autodiff/graph.hpp"

namespace nrit {

// Entry-granular selection over named parameters. An entry that is not
// selected must never be written by an optimizer step.
class GradientMask {
  public:
    GradientMask() = default;
    explicit GradientMask(std::string origin) : origin_(std::move(origin)) {}

    void select_all(const std::string& name, std::size_t numel);
    void select(const std::string& name, std::size_t numel, std::size_t index);

    [[nodiscard]] bool selects(const std::string& name, std::size_t index) const;
    // nullptr when the parameter has no selected entries.
    [[nodiscard]] const std::vector<std::uint8_t>* bits(const std::string& name) const;
    [[nodiscard]] std::size_t count() const;
    [[nodiscard]] std::size_t count(const std::string& name) const;
    [[nodiscard]] bool empty() const { return bits_.empty(); }
    [[nodiscard]] const std::map<std::string, std::vector<std::uint8_t>>& entries() const { return bits_; }

    [[nodiscard]] const std::string& origin() const { return origin_; }
    void set_origin(std::string origin) { origin_ = std::move(origin); }

    // Throws ConfigError if the mask names a parameter that does not exist or
    // whose size differs.
    void validate(std::span<const Parameter> params) const;

    static GradientMask unite(const GradientMask& a, const GradientMask& b);
    static GradientMask intersect(const GradientMask& a, const GradientMask& b);

    // Equality of selected entries; origin labels are ignored.
    bool operator==(const GradientMask& other) const { return bits_ == other.bits_; }

  private:
    std::vector<std::uint8_t>& slot(const std::string& name, std::size_t numel);

    std::map<std::string, std::vector<std::uint8_t>> bits_;
    std::string origin_;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamWState {
    AdamWConfig config;
    std::int64_t step = 0;
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;
};

// Optional per-entry learning-rate multipliers keyed by parameter name.
using LrScales = std::map<std::string, std::vector<double>>;

// One AdamW update (decoupled weight decay) over the masked entries, then
// zeroes every gradient. Entries outside the mask keep their exact bits and
// their moments are left untouched. mask == nullptr selects everything.
void adamw_step(AdamWState& state, std::span<Parameter> params, const GradientMask* mask,
                const LrScales* scales = nullptr);

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool flagged = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool passed = true;
};

using LossClosure = std::function<Var(Graph&)>;

// Compares backward() against central differences for every entry of every
// parameter. Relative error is |a - n| / max(|a|, |n|, denom_floor).
// Throws NonDeterminismError if two evaluations at the probe point differ.
GradCheckReport gradient_check(const LossClosure& closure, std::span<Parameter* const> params, double h, double tol,
                               double denom_floor = 1e-8);

}  // namespace nrit
