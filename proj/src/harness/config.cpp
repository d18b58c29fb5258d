// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/harness/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "nrit/errors.hpp"

namespace nrit {

std::string_view ablation_name(Ablation a) {
    switch (a) {
        case Ablation::none:
            return "none";
        case Ablation::no_denoise:
            return "no-denoise";
        case Ablation::no_neurons:
            return "no-neurons";
        case Ablation::no_layers:
            return "no-layers";
    }
    return "none";
}

Ablation parse_ablation(std::string_view name) {
    for (auto a : {Ablation::none, Ablation::no_denoise, Ablation::no_neurons, Ablation::no_layers}) {
        if (ablation_name(a) == name) {
            return a;
        }
    }
    throw ConfigError("unknown ablation '" + std::string(name) + "' (none|no-denoise|no-neurons|no-layers)");
}

namespace {

struct Entry {
    std::string key;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint64_t to_u64(const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("expected a non-negative integer, got '" + v + "'");
    }
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("integer out of range: '" + v + "'");
    }
}

double to_double(const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError("expected true or false, got '" + v + "'");
}

template <typename T>
Entry size_entry(std::string key, T PipelineConfig::*outer, std::size_t T::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return std::to_string((c.*outer).*field); },
            [=](PipelineConfig& c, const std::string& v) { (c.*outer).*field = static_cast<std::size_t>(to_u64(v)); }};
}

template <typename T>
Entry u64_entry(std::string key, T PipelineConfig::*outer, std::uint64_t T::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return std::to_string((c.*outer).*field); },
            [=](PipelineConfig& c, const std::string& v) { (c.*outer).*field = to_u64(v); }};
}

template <typename T>
Entry double_entry(std::string key, T PipelineConfig::*outer, double T::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return fmt_double((c.*outer).*field); },
            [=](PipelineConfig& c, const std::string& v) { (c.*outer).*field = to_double(v); }};
}

template <typename T>
Entry bool_entry(std::string key, T PipelineConfig::*outer, bool T::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return std::string((c.*outer).*field ? "true" : "false"); },
            [=](PipelineConfig& c, const std::string& v) { (c.*outer).*field = to_bool(v); }};
}

Entry top_size(std::string key, std::size_t PipelineConfig::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return std::to_string(c.*field); },
            [=](PipelineConfig& c, const std::string& v) { c.*field = static_cast<std::size_t>(to_u64(v)); }};
}

Entry top_u64(std::string key, std::uint64_t PipelineConfig::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return std::to_string(c.*field); },
            [=](PipelineConfig& c, const std::string& v) { c.*field = to_u64(v); }};
}

Entry top_double(std::string key, double PipelineConfig::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return fmt_double(c.*field); },
            [=](PipelineConfig& c, const std::string& v) { c.*field = to_double(v); }};
}

Entry string_entry(std::string key, std::string WorldSpec::*field) {
    return {std::move(key), [=](const PipelineConfig& c) { return c.world.*field; },
            [=](PipelineConfig& c, const std::string& v) { c.world.*field = v; }};
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = [] {
        using P = PipelineConfig;
        std::vector<Entry> t;
        t.push_back(size_entry("world.n_entities", &P::world, &WorldSpec::n_entities));
        t.push_back(size_entry("world.n_relations", &P::world, &WorldSpec::n_relations));
        t.push_back(size_entry("world.facts_per_entity", &P::world, &WorldSpec::facts_per_entity));
        t.push_back(size_entry("world.n_values", &P::world, &WorldSpec::n_values));
        t.push_back(size_entry("world.n_distractors", &P::world, &WorldSpec::n_distractors));
        t.push_back(double_entry("world.multi_hop_fraction", &P::world, &WorldSpec::multi_hop_fraction));
        t.push_back(u64_entry("world.seed", &P::world, &WorldSpec::seed));
        t.push_back(string_entry("world.fact_template", &WorldSpec::fact_template));
        t.push_back(string_entry("world.query_template", &WorldSpec::query_template));
        t.push_back(string_entry("world.multi_hop_template", &WorldSpec::multi_hop_template));

        t.push_back(size_entry("model.n_layers", &P::model, &ModelConfig::n_layers));
        t.push_back(size_entry("model.d_model", &P::model, &ModelConfig::d_model));
        t.push_back(size_entry("model.n_heads", &P::model, &ModelConfig::n_heads));
        t.push_back(size_entry("model.d_ff", &P::model, &ModelConfig::d_ff));
        t.push_back(size_entry("model.max_seq_len", &P::model, &ModelConfig::max_seq_len));
        t.push_back(u64_entry("model.init_seed", &P::model, &ModelConfig::init_seed));
        t.push_back(double_entry("model.init_std", &P::model, &ModelConfig::init_std));

        t.push_back(top_size("split.n_eval", &P::n_eval_queries));
        t.push_back(top_u64("split.seed", &P::split_seed));
        t.push_back(top_size("retrieve.top_n", &P::top_n));
        t.push_back(top_size("retrieve.top_k", &P::top_k));

        t.push_back(size_entry("warmup.epochs", &P::warmup, &WarmupConfig::epochs));
        t.push_back(double_entry("warmup.lr", &P::warmup, &WarmupConfig::lr));
        t.push_back(size_entry("warmup.batch", &P::warmup, &WarmupConfig::batch));
        t.push_back(u64_entry("warmup.seed", &P::warmup, &WarmupConfig::seed));
        t.push_back(double_entry("warmup.weight_decay", &P::warmup, &WarmupConfig::weight_decay));
        t.push_back(bool_entry("warmup.lm", &P::warmup, &WarmupConfig::lm));
        t.push_back(bool_entry("warmup.binary", &P::warmup, &WarmupConfig::binary));
        t.push_back(bool_entry("warmup.qa", &P::warmup, &WarmupConfig::qa));

        t.push_back(top_size("attribution.n_per_type", &P::attribution_per_type));
        t.push_back(size_entry("ig.steps", &P::ig, &IGConfig::steps));
        t.push_back({"ig.target",
                     [](const P& c) { return std::string(c.ig.target == IGTarget::probability ? "probability" : "loss"); },
                     [](P& c, const std::string& v) {
                         if (v == "probability") {
                             c.ig.target = IGTarget::probability;
                         } else if (v == "loss") {
                             c.ig.target = IGTarget::loss;
                         } else {
                             throw ConfigError("expected probability or loss, got '" + v + "'");
                         }
                     }});
        t.push_back({"ig.normalization",
                     [](const P& c) {
                         return std::string(c.ig.normalization == ChoiceNormalization::choices_only ? "choices"
                                                                                                    : "full");
                     },
                     [](P& c, const std::string& v) {
                         if (v == "choices") {
                             c.ig.normalization = ChoiceNormalization::choices_only;
                         } else if (v == "full") {
                             c.ig.normalization = ChoiceNormalization::full_vocab;
                         } else {
                             throw ConfigError("expected choices or full, got '" + v + "'");
                         }
                     }});
        t.push_back(top_size("ig.threads", &P::ig_threads));

        t.push_back(double_entry("mining.percentile", &P::mining, &MiningConfig::percentile));
        t.push_back(size_entry("mining.top_k", &P::mining, &MiningConfig::top_k));
        t.push_back({"mining.aggregation",
                     [](const P& c) {
                         return std::string(c.mining.aggregation == Aggregation::threshold ? "threshold" : "top_t");
                     },
                     [](P& c, const std::string& v) {
                         if (v == "threshold") {
                             c.mining.aggregation = Aggregation::threshold;
                         } else if (v == "top_t") {
                             c.mining.aggregation = Aggregation::top_t;
                         } else {
                             throw ConfigError("expected threshold or top_t, got '" + v + "'");
                         }
                     }});
        t.push_back(size_entry("mining.threshold", &P::mining, &MiningConfig::threshold));
        t.push_back(size_entry("mining.top_t", &P::mining, &MiningConfig::top_t));
        t.push_back(top_size("layers.top_k", &P::top_layers));

        t.push_back(top_size("denoise.k", &P::denoise_k));
        t.push_back({"denoise.prompt",
                     [](const P& c) {
                         return std::string(c.denoise_prompt == DenoisePrompt::irrelevant ? "irrelevant"
                                                                                          : "relevant");
                     },
                     [](P& c, const std::string& v) {
                         if (v == "irrelevant") {
                             c.denoise_prompt = DenoisePrompt::irrelevant;
                         } else if (v == "relevant") {
                             c.denoise_prompt = DenoisePrompt::relevant;
                         } else {
                             throw ConfigError("expected irrelevant or relevant, got '" + v + "'");
                         }
                     }});
        t.push_back(top_size("denoise.heldout", &P::denoise_heldout));
        t.push_back(top_size("rs.summary_cap", &P::summary_cap));
        t.push_back(top_double("rs.absent_fraction", &P::rs_absent_fraction));

        t.push_back({"train.batch", [](const P& c) { return std::to_string(c.stage1.batch); },
                     [](P& c, const std::string& v) {
                         c.stage1.batch = static_cast<std::size_t>(to_u64(v));
                         c.stage2.batch = c.stage1.batch;
                     }});
        t.push_back({"train.seed", [](const P& c) { return std::to_string(c.stage1.seed); },
                     [](P& c, const std::string& v) {
                         c.stage1.seed = to_u64(v);
                         c.stage2.seed = c.stage1.seed;
                     }});
        t.push_back(double_entry("train.stage1.lr", &P::stage1, &TrainConfig::lr));
        t.push_back(size_entry("train.stage1.epochs", &P::stage1, &TrainConfig::epochs));
        t.push_back(double_entry("train.stage2.lr", &P::stage2, &TrainConfig::lr));
        t.push_back(size_entry("train.stage2.epochs", &P::stage2, &TrainConfig::epochs));
        t.push_back(double_entry("train.stage2.rel_scale", &P::stage2_options, &Stage2Options::rel_scale));
        t.push_back(double_entry("train.stage2.irrel_scale", &P::stage2_options, &Stage2Options::irrel_scale));
        t.push_back(double_entry("train.stage2.shared_scale", &P::stage2_options, &Stage2Options::shared_scale));
        t.push_back(double_entry("train.stage2.layer_scale", &P::stage2_options, &Stage2Options::layer_scale));

        t.push_back(top_size("eval.max_new_tokens", &P::eval_max_new));
        t.push_back({"ablate", [](const P& c) { return std::string(ablation_name(c.ablation)); },
                     [](P& c, const std::string& v) { c.ablation = parse_ablation(v); }});
        return t;
    }();
    return table;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void PipelineConfig::validate() const {
    world.validate();
    ModelConfig m = model;
    m.vocab_size = std::max<std::size_t>(m.vocab_size, 1);
    m.validate();
    if (n_eval_queries < 1) {
        throw ConfigError("split.n_eval must be >= 1");
    }
    if (top_n < 1 || top_k < 1 || top_k > top_n) {
        throw ConfigError("retrieve.top_k must be in [1, retrieve.top_n]");
    }
    if (warmup.lr <= 0.0 || warmup.batch < 1) {
        throw ConfigError("warmup.lr must be > 0 and warmup.batch >= 1");
    }
    if (attribution_per_type < 1) {
        throw ConfigError("attribution.n_per_type must be >= 1");
    }
    if (ig_threads < 1) {
        throw ConfigError("ig.threads must be >= 1");
    }
    ig.validate();
    mining.validate();
    if (top_layers > model.n_layers) {
        throw ConfigError("layers.top_k exceeds model.n_layers");
    }
    if (denoise_k < 1) {
        throw ConfigError("denoise.k must be >= 1");
    }
    if (summary_cap < 1) {
        throw ConfigError("rs.summary_cap must be >= 1");
    }
    if (rs_absent_fraction < 0.0 || rs_absent_fraction > 1.0) {
        throw ConfigError("rs.absent_fraction must be in [0, 1]");
    }
    stage1.validate();
    stage2.validate();
    if (eval_max_new < 1) {
        throw ConfigError("eval.max_new_tokens must be >= 1");
    }
}

PipelineConfig parse_config(std::string_view text, std::string_view origin) {
    PipelineConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = std::string(origin) + ":" + std::to_string(line_no);
        const std::string body = trim(line);
        if (body.empty() || body[0] == '#') {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + ": expected key=value");
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        const Entry* found = nullptr;
        for (const auto& e : entries()) {
            if (e.key == key) {
                found = &e;
                break;
            }
        }
        if (found == nullptr) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
        try {
            found->set(c, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + key + ": " + e.what());
        }
    }
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string config_to_text(const PipelineConfig& config) {
    std::string out;
    for (const auto& e : entries()) {
        out += e.key + "=" + e.get(config) + "\n";
    }
    return out;
}

}  // namespace nrit
