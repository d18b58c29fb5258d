// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nrit/autodiff/graph.hpp"
#include "nrit/data/datasets.hpp"
#include "nrit/model/tokenizer.hpp"
#include "nrit/model/transformer.hpp"

namespace nrit {

enum class IGTarget { probability, loss };

struct IGConfig {
    std::size_t steps = 20;
    // probability: P(gold choice); loss: -log P(gold choice).
    IGTarget target = IGTarget::probability;
    ChoiceNormalization normalization = ChoiceNormalization::choices_only;

    void validate() const;
};

// Builds a scalar from an activation vector. Returns (scalar, leaf) where
// leaf is the differentiable node holding the vector.
using IGClosure = std::function<std::pair<Var, Var>(Graph&, const Tensor&)>;

// Midpoint Riemann approximation of the straight-line path integral from
// base to target. score_j = (target_j - base_j) * mean_s dF/dv_j(v_s) with
// v_s = base + (s - 0.5) / steps * (target - base). `where` labels numeric
// failures.
std::vector<double> integrated_gradients(const Tensor& base, const Tensor& target, std::size_t steps,
                                         const IGClosure& f, const std::string& where = "");

double evaluate_closure(const IGClosure& f, const Tensor& v);

// Token sequences for one attribution instance.
struct EncodedAttribution {
    std::string id;
    std::vector<int> query_ids;  // prompt with an empty context
    std::vector<int> full_ids;   // prompt with the instance context
    int gold_token = Tokenizer::kYes;
    ContextType type = ContextType::rel;
};

EncodedAttribution encode_attribution(const Tokenizer& tok, const AttributionInstance& inst);

struct LayerAttribution {
    std::vector<double> scores;  // d_ff entries
    Tensor base;                 // v(q) at the final query-only token
    Tensor target;               // v(q, d) at the final full-prompt token
};

LayerAttribution integrated_gradients_layer(const MicroTransformer& model, const EncodedAttribution& inst,
                                            std::size_t layer, const IGConfig& config);

// The target scalar on the full prompt with the probe at `layer` overridden by v.
IGClosure attribution_closure(const MicroTransformer& model, const EncodedAttribution& inst, std::size_t layer,
                              const IGConfig& config);

// Scores per instance, layer-major within an instance.
class AttributionMatrix {
  public:
    AttributionMatrix() = default;
    AttributionMatrix(std::size_t n_layers, std::size_t d_ff) : n_layers_(n_layers), d_ff_(d_ff) {}

    // Appends one instance; NumericError on non-finite scores.
    void add(std::string id, ContextType type, std::vector<double> scores);

    [[nodiscard]] std::size_t size() const { return ids_.size(); }
    [[nodiscard]] std::size_t n_layers() const { return n_layers_; }
    [[nodiscard]] std::size_t d_ff() const { return d_ff_; }
    [[nodiscard]] std::size_t width() const { return n_layers_ * d_ff_; }
    [[nodiscard]] const std::string& id(std::size_t i) const { return ids_[i]; }
    [[nodiscard]] ContextType type(std::size_t i) const { return types_[i]; }
    [[nodiscard]] std::span<const double> row(std::size_t i) const;
    [[nodiscard]] double score(std::size_t i, NeuronId n) const;
    // Row indices of every instance of one context type, in insertion order.
    [[nodiscard]] std::vector<std::size_t> rows_of(ContextType type) const;

    // Checkpoint format with tensors named attr/<id>/<layer>; the context type
    // is stored as a one-entry tensor attr/<id>/type (0 rel, 1 irrel).
    void save(const std::filesystem::path& path) const;
    static AttributionMatrix load(const std::filesystem::path& path);

    bool operator==(const AttributionMatrix&) const = default;

  private:
    std::size_t n_layers_ = 0;
    std::size_t d_ff_ = 0;
    std::vector<std::string> ids_;
    std::vector<ContextType> types_;
    std::vector<double> data_;
};

struct AttributionRunOptions {
    std::size_t threads = 1;
    // Called after each instance with (done, total).
    std::function<void(std::size_t, std::size_t)> progress;
};

// IG over every layer for every instance. Output order follows `instances`
// regardless of the thread count.
AttributionMatrix compute_attribution_matrix(const MicroTransformer& model, const Tokenizer& tok,
                                             std::span<const AttributionInstance> instances, const IGConfig& config,
                                             const AttributionRunOptions& options = {});

enum class Aggregation { threshold, top_t };

struct MiningConfig {
    double percentile = 0.90;
    std::size_t top_k = 20;
    Aggregation aggregation = Aggregation::threshold;
    std::size_t threshold = 130;
    std::size_t top_t = 0;

    void validate() const;
};

// Index (1-based) of the nearest-rank percentile in a sorted list of n values.
std::size_t nearest_rank(double percentile, std::size_t n);

// Neurons kept for one instance, best first.
std::vector<NeuronId> select_instance_neurons(std::span<const double> row, std::size_t d_ff, const MiningConfig& config);

struct Candidates {
    std::set<NeuronId> selected;
    // Number of instances that selected each neuron (only nonzero entries).
    std::map<NeuronId, std::size_t> frequency;
};

Candidates mine_candidates(const AttributionMatrix& matrix, std::span<const std::size_t> rows,
                           const MiningConfig& config);

struct NeuronSets {
    std::set<NeuronId> rel;
    std::set<NeuronId> irrel;
    std::set<NeuronId> shared;
    // Members only. rel and irrel members carry their candidate frequency;
    // shared members carry the sum of both.
    std::map<NeuronId, std::size_t> frequency;

    // ContractError unless the three groups are pairwise disjoint.
    void validate() const;
    [[nodiscard]] std::set<NeuronId> all() const;

    bool operator==(const NeuronSets&) const = default;
};

NeuronSets decouple(const Candidates& rel, const Candidates& irrel);

struct LayerDensityRow {
    std::size_t layer = 0;
    std::size_t rel = 0;
    std::size_t irrel = 0;
    std::size_t shared = 0;
};

std::vector<LayerDensityRow> layer_density(const NeuronSets& sets, std::size_t n_layers);

// The k layers with the most shared + irrel members, ties toward higher layers.
std::vector<std::size_t> top_k_layers(const NeuronSets& sets, std::size_t n_layers, std::size_t k);

// "nrit-neurons v1" then group,layer,index,frequency lines sorted by
// (group, layer, index).
void save_neuron_sets(const std::filesystem::path& path, const NeuronSets& sets);
NeuronSets load_neuron_sets(const std::filesystem::path& path);

}  // namespace nrit
