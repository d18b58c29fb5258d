// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nrit/attribution/attribution.hpp"
#include "nrit/autodiff/optim.hpp"
#include "nrit/data/datasets.hpp"
#include "nrit/model/tokenizer.hpp"
#include "nrit/model/transformer.hpp"

namespace nrit {

// W1[:, j], b1[j] and W2[j, :] of each neuron's block.
GradientMask mask_from_neurons(const MicroTransformer& model, const std::set<NeuronId>& neurons);
// Every parameter of the listed blocks. Embeddings, the final norm and the
// output head are never included.
GradientMask mask_from_layers(const MicroTransformer& model, std::span<const std::size_t> layers);

enum class Stage { denoise, noise_filter };

std::string_view stage_name(Stage stage);

struct TrainConfig {
    Stage stage = Stage::denoise;
    double lr = 1e-5;
    std::size_t epochs = 1;
    std::size_t batch = 4;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;

    // ConfigError unless lr > 0, epochs >= 1 and batch >= 1.
    void validate() const;
    // lr 1e-5 for one epoch (denoise), 2e-5 for two epochs (noise filter), batch 4.
    static TrainConfig published_default(Stage stage);
};

// Seeded permutation of 0..n-1 for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Next-token example: weights[t] scales the loss of predicting ids[t + 1].
struct TrainingExample {
    std::vector<int> ids;
    std::vector<double> weights;

    // Prompt positions get weight 0, each target token weight 1.
    static TrainingExample completion(std::vector<int> prompt, std::span<const int> target);
};

struct TrainResult {
    std::vector<double> epoch_loss;
    std::size_t steps = 0;
};

// Weighted next-token cross-entropy of one example, averaged over its
// weighted positions.
Var example_loss(Graph& g, const MicroTransformer& model, const TrainingExample& ex);

// Mini-batch AdamW over the examples; only masked entries move (mask ==
// nullptr trains everything). Batches follow epoch_order.
TrainResult train_masked(MicroTransformer& model, std::span<const TrainingExample> examples, const GradientMask* mask,
                         const TrainConfig& config, const LrScales* scales = nullptr);

std::vector<int> denoise_prompt_ids(const Tokenizer& tok, const Corpus& corpus, const DenoiseInstance& inst);
std::vector<int> rs_prompt_ids(const Tokenizer& tok, const Corpus& corpus, const RSInstance& inst);

// Prompt followed by a single EOT target.
std::vector<TrainingExample> denoise_examples(const Tokenizer& tok, const Corpus& corpus,
                                              std::span<const DenoiseInstance> instances);
// Prompt followed by summary tokens and EOT.
std::vector<TrainingExample> rs_examples(const Tokenizer& tok, const Corpus& corpus,
                                         std::span<const RSInstance> instances);

// Mean P(EOT) as the first generated token, full-vocabulary softmax.
double mean_eot_probability(const MicroTransformer& model, std::span<const std::vector<int>> prompts);

struct TrainingReport {
    Stage stage = Stage::denoise;
    std::uint64_t seed = 0;
    double lr = 0.0;
    std::size_t epochs = 0;
    std::size_t batch = 0;
    std::size_t examples = 0;
    std::vector<double> epoch_loss;
    // Held-out P(EOT); stage 1 only.
    double eot_before = 0.0;
    double eot_after = 0.0;
    std::size_t trainable = 0;
    std::size_t total = 0;
    double fraction = 0.0;
    double wall_seconds = 0.0;

    bool operator==(const TrainingReport&) const = default;
};

// key=value lines; doubles are written with 17 significant digits.
void save_training_report(const std::filesystem::path& path, const TrainingReport& report);
TrainingReport load_training_report(const std::filesystem::path& path);

struct Stage1Inputs {
    std::span<const TrainingExample> train;
    // Prompts (without target) for the before/after P(EOT) measurement.
    std::span<const std::vector<int>> heldout;
};

// Trains only the irrel neurons toward EOT. ConfigError if the set or the
// data is empty.
TrainingReport stage1_denoise(MicroTransformer& model, const std::set<NeuronId>& irrel, const Stage1Inputs& data,
                              const TrainConfig& config);

struct Stage2Options {
    bool use_neurons = true;
    bool use_layers = true;
    // Learning-rate multipliers per group. Layer entries take layer_scale;
    // neuron entries outside the layers take their group's scale.
    double rel_scale = 1.0;
    double irrel_scale = 1.0;
    double shared_scale = 1.0;
    double layer_scale = 1.0;
};

GradientMask stage2_mask(const MicroTransformer& model, const NeuronSets& sets, std::span<const std::size_t> layers,
                         const Stage2Options& options);

// ContractError when the neuron groups overlap; ConfigError when the mask
// ends up empty.
TrainingReport stage2_noise_filter(MicroTransformer& model, const NeuronSets& sets, std::span<const std::size_t> layers,
                                   std::span<const TrainingExample> train, const TrainConfig& config,
                                   const Stage2Options& options = {});

// Neuron-set file followed by `layer,<idx>,full` lines.
void save_mask_file(const std::filesystem::path& path, const NeuronSets& sets, std::span<const std::size_t> layers);

}  // namespace nrit
