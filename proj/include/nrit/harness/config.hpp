// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "nrit/attribution/attribution.hpp"
#include "nrit/data/datasets.hpp"
#include "nrit/data/world.hpp"
#include "nrit/model/transformer.hpp"
#include "nrit/tuning/tuning.hpp"

namespace nrit {

enum class Ablation { none, no_denoise, no_neurons, no_layers };

std::string_view ablation_name(Ablation a);
// ConfigError for anything but none|no-denoise|no-neurons|no-layers.
Ablation parse_ablation(std::string_view name);

enum class DenoisePrompt { irrelevant, relevant };

struct WarmupConfig {
    std::size_t epochs = 8;
    double lr = 1e-3;
    std::size_t batch = 8;
    std::uint64_t seed = 1;
    double weight_decay = 0.0;
    // Data sources mixed into every epoch.
    bool lm = true;
    bool binary = true;
    bool qa = true;
};

struct PipelineConfig {
    WorldSpec world;
    ModelConfig model;  // vocab_size is filled from the tokenizer
    std::size_t n_eval_queries = 100;
    std::uint64_t split_seed = 1;
    std::size_t top_n = 50;
    std::size_t top_k = 5;
    WarmupConfig warmup;
    std::size_t attribution_per_type = 389;
    IGConfig ig;
    std::size_t ig_threads = 1;
    MiningConfig mining;
    std::size_t top_layers = 3;
    std::size_t denoise_k = 5;
    DenoisePrompt denoise_prompt = DenoisePrompt::irrelevant;
    // Held-out prompts for the stage-1 P(EOT) measurement; 0 means all.
    std::size_t denoise_heldout = 0;
    std::size_t summary_cap = 142;
    double rs_absent_fraction = 0.0;
    TrainConfig stage1 = TrainConfig::published_default(Stage::denoise);
    TrainConfig stage2 = TrainConfig::published_default(Stage::noise_filter);
    Stage2Options stage2_options;
    std::size_t eval_max_new = 24;
    Ablation ablation = Ablation::none;

    // ConfigError on any out-of-range value.
    void validate() const;
};

// UTF-8 key=value lines, '#' comments, dotted keys. Unknown keys, malformed
// lines and bad values raise ConfigError naming the line.
PipelineConfig parse_config(std::string_view text, std::string_view origin = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);

// Every key with its value, one per line, in a fixed order. Parsing the
// result reproduces the config.
std::string config_to_text(const PipelineConfig& config);

}  // namespace nrit
