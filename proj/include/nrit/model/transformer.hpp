// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nrit/autodiff/graph.hpp"
#include "nrit/autodiff/optim.hpp"

namespace nrit {

struct ModelConfig {
    std::size_t n_layers = 6;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_seq_len = 256;
    std::size_t vocab_size = 0;
    std::uint64_t init_seed = 0;
    double init_std = 0.02;

    // Throws ConfigError on zero dimensions or d_model % n_heads != 0.
    void validate() const;
};

// One FFN hidden unit: column `index` of W1, entry `index` of b1 and row
// `index` of W2 in block `layer`.
struct NeuronId {
    std::size_t layer = 0;
    std::size_t index = 0;

    auto operator<=>(const NeuronId&) const = default;
};

// Reads (and optionally replaces) the FFN hidden vector of one block at one
// position. The override is spliced in before W2 as a differentiable leaf.
struct ActivationProbe {
    std::size_t layer = 0;
    // Defaults to the last token of the sequence.
    std::optional<std::size_t> position;
    Tensor captured;
    std::optional<Tensor> override_value;
    // Graph leaf holding the override after forward(); read its grad after backward.
    std::optional<Var> override_var;
};

struct ForwardOptions {
    // Logits are produced only for positions >= logits_from.
    std::size_t logits_from = 0;
};

struct ForwardResult {
    Var logits;  // (len - logits_from) x vocab
    std::size_t logits_from = 0;
};

// Pre-norm decoder-only transformer with learned positions, GELU FFN and an
// untied output projection.
class MicroTransformer {
  public:
    explicit MicroTransformer(ModelConfig config);

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] std::span<Parameter> parameters() { return params_; }
    [[nodiscard]] std::span<const Parameter> parameters() const { return params_; }
    [[nodiscard]] Parameter& param(const std::string& name);
    [[nodiscard]] const Parameter& param(const std::string& name) const;

    // Names of parameters owned by transformer block `layer`.
    [[nodiscard]] std::vector<std::string> block_parameter_names(std::size_t layer) const;

    static std::string block_prefix(std::size_t layer);

    ForwardResult forward(Graph& g, std::span<const int> ids, std::span<ActivationProbe> probes,
                          const ForwardOptions& options = {}) const;

    // Replace all values from a checkpoint; names and shapes must match exactly.
    void load_parameters(std::span<const Parameter> loaded);

  private:
    void add_param(const std::string& name, Shape shape, double std_dev, double fill, std::uint64_t& counter);

    ModelConfig config_;
    std::vector<Parameter> params_;
};

enum class ChoiceNormalization { full_vocab, choices_only };

// P(choice_token | ids[0..answer_position]) read off the next-token
// distribution at answer_position. With choices_only the softmax is
// renormalized over `choices`.
double choice_probability(const MicroTransformer& model, std::span<const int> ids, std::size_t answer_position,
                          int choice_token, ChoiceNormalization norm = ChoiceNormalization::full_vocab,
                          std::span<const int> choices = {});

// Differentiable variant on a logits row (1 x vocab).
Var choice_probability_var(Var logits_row, int choice_token, ChoiceNormalization norm, std::span<const int> choices);

struct GenerateOptions {
    int eot_token = 1;
    // Test hook: may rewrite the next-token logits before the argmax.
    std::function<void(std::size_t step, std::span<double> logits)> logit_hook;
};

// Greedy decoding; ties go to the lowest token id. Stops at EOT (excluded
// from the output) or after max_new tokens.
std::vector<int> generate_greedy(const MicroTransformer& model, std::span<const int> prompt, std::size_t max_new,
                                 const GenerateOptions& options = {});

struct ParameterCount {
    std::size_t total = 0;
    std::size_t selected = 0;
    double fraction = 0.0;
};

ParameterCount count_parameters(std::span<const Parameter> params, const GradientMask* mask);
ParameterCount count_parameters(const MicroTransformer& model, const GradientMask* mask);
// Reference arithmetic for externally supplied totals.
ParameterCount count_parameters(std::size_t total, std::size_t selected);

}  // namespace nrit
