// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/tuning/tuning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "nrit/data/prompts.hpp"
#include "nrit/errors.hpp"

namespace nrit {

GradientMask mask_from_neurons(const MicroTransformer& model, const std::set<NeuronId>& neurons) {
    const auto& c = model.config();
    GradientMask mask("neurons");
    for (const auto& n : neurons) {
        if (n.layer >= c.n_layers || n.index >= c.d_ff) {
            throw IndexError("neuron (" + std::to_string(n.layer) + ", " + std::to_string(n.index) +
                             ") outside model");
        }
        const std::string p = MicroTransformer::block_prefix(n.layer);
        // W1 is d_model x d_ff, W2 is d_ff x d_model.
        for (std::size_t r = 0; r < c.d_model; ++r) {
            mask.select(p + "ffn.w1", c.d_model * c.d_ff, r * c.d_ff + n.index);
            mask.select(p + "ffn.w2", c.d_ff * c.d_model, n.index * c.d_model + r);
        }
        mask.select(p + "ffn.b1", c.d_ff, n.index);
    }
    return mask;
}

GradientMask mask_from_layers(const MicroTransformer& model, std::span<const std::size_t> layers) {
    GradientMask mask("layers");
    for (std::size_t l : layers) {
        for (const auto& name : model.block_parameter_names(l)) {
            mask.select_all(name, model.param(name).value.numel());
        }
    }
    return mask;
}

std::string_view stage_name(Stage stage) {
    return stage == Stage::denoise ? "denoise" : "noise-filter";
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw ConfigError("learning rate must be > 0");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
    if (batch < 1) {
        throw ConfigError("batch size must be >= 1");
    }
    if (weight_decay < 0.0) {
        throw ConfigError("weight decay must be >= 0");
    }
}

TrainConfig TrainConfig::published_default(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    c.lr = stage == Stage::denoise ? 1e-5 : 2e-5;
    c.epochs = stage == Stage::denoise ? 1 : 2;
    c.batch = 4;
    return c;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed * 1'000'003ULL + epoch);
    // Explicit Fisher-Yates; std::shuffle is not portable across libraries.
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    return order;
}

TrainingExample TrainingExample::completion(std::vector<int> prompt, std::span<const int> target) {
    if (prompt.empty() || target.empty()) {
        throw ContractError("completion example needs a prompt and a target");
    }
    TrainingExample ex;
    ex.ids = std::move(prompt);
    ex.weights.assign(ex.ids.size() - 1, 0.0);
    ex.ids.insert(ex.ids.end(), target.begin(), target.end());
    ex.weights.resize(ex.ids.size() - 1, 1.0);
    return ex;
}

Var example_loss(Graph& g, const MicroTransformer& model, const TrainingExample& ex) {
    if (ex.ids.size() < 2 || ex.weights.size() != ex.ids.size() - 1) {
        throw ContractError("training example needs ids.size() - 1 weights");
    }
    std::size_t first = 0;
    while (first < ex.weights.size() && ex.weights[first] == 0.0) {
        ++first;
    }
    if (first == ex.weights.size()) {
        throw ContractError("training example has no weighted position");
    }
    // Only positions from `first` on need logits.
    const auto input = std::span<const int>(ex.ids).first(ex.ids.size() - 1);
    ForwardOptions opt;
    opt.logits_from = first;
    const ForwardResult res = model.forward(g, input, {}, opt);
    const std::vector<int> targets(ex.ids.begin() + static_cast<std::ptrdiff_t>(first + 1), ex.ids.end());
    const std::vector<double> weights(ex.weights.begin() + static_cast<std::ptrdiff_t>(first), ex.weights.end());
    return ops::cross_entropy(res.logits, targets, weights);
}

TrainResult train_masked(MicroTransformer& model, std::span<const TrainingExample> examples, const GradientMask* mask,
                         const TrainConfig& config, const LrScales* scales) {
    config.validate();
    if (examples.empty()) {
        throw ConfigError(std::string(stage_name(config.stage)) + ": no training examples");
    }
    if (mask != nullptr) {
        mask->validate(model.parameters());
    }
    AdamWState state;
    state.config.lr = config.lr;
    state.config.weight_decay = config.weight_decay;
    for (auto& p : model.parameters()) {
        p.zero_grad();
    }
    TrainResult result;
    const double inv_batch = 1.0 / static_cast<double>(config.batch);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(examples.size(), config.seed, epoch);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t end = std::min(order.size(), start + config.batch);
            const double scale = end - start == config.batch ? inv_batch : 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                Graph g;
                Var loss = example_loss(g, model, examples[order[i]]);
                total += loss.value()[0];
                g.backward(ops::scale(loss, scale));
            }
            adamw_step(state, model.parameters(), mask, scales);
            ++result.steps;
        }
        result.epoch_loss.push_back(total / static_cast<double>(examples.size()));
    }
    return result;
}

std::vector<int> denoise_prompt_ids(const Tokenizer& tok, const Corpus& corpus, const DenoiseInstance& inst) {
    PromptSlots slots;
    slots.question = inst.question;
    slots.documents = document_texts(corpus, inst.doc_ids);
    return tok.encode(render_prompt(PromptKind::denoise, slots));
}

std::vector<int> rs_prompt_ids(const Tokenizer& tok, const Corpus& corpus, const RSInstance& inst) {
    PromptSlots slots;
    slots.question = inst.question;
    slots.documents = document_texts(corpus, inst.doc_ids);
    return tok.encode(render_prompt(PromptKind::denoise, slots));
}

std::vector<TrainingExample> denoise_examples(const Tokenizer& tok, const Corpus& corpus,
                                              std::span<const DenoiseInstance> instances) {
    std::vector<TrainingExample> out;
    const int eot[] = {Tokenizer::kEot};
    for (const auto& inst : instances) {
        out.push_back(TrainingExample::completion(denoise_prompt_ids(tok, corpus, inst), eot));
    }
    return out;
}

std::vector<TrainingExample> rs_examples(const Tokenizer& tok, const Corpus& corpus,
                                         std::span<const RSInstance> instances) {
    std::vector<TrainingExample> out;
    for (const auto& inst : instances) {
        auto target = tok.encode(inst.summary);
        target.push_back(Tokenizer::kEot);
        out.push_back(TrainingExample::completion(rs_prompt_ids(tok, corpus, inst), target));
    }
    return out;
}

double mean_eot_probability(const MicroTransformer& model, std::span<const std::vector<int>> prompts) {
    if (prompts.empty()) {
        throw ConfigError("no prompts for the EOT probability measurement");
    }
    double sum = 0.0;
    for (const auto& p : prompts) {
        sum += choice_probability(model, p, p.size() - 1, Tokenizer::kEot);
    }
    return sum / static_cast<double>(prompts.size());
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw IoError("report key " + key + ": bad number '" + v + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto d = std::stoull(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return static_cast<std::size_t>(d);
    } catch (const std::exception&) {
        throw IoError("report key " + key + ": bad integer '" + v + "'");
    }
}

TrainingReport finish_report(Stage stage, const TrainConfig& config, std::size_t n_examples, const TrainResult& r,
                             const MicroTransformer& model, const GradientMask& mask,
                             std::chrono::steady_clock::time_point t0) {
    TrainingReport rep;
    rep.stage = stage;
    rep.seed = config.seed;
    rep.lr = config.lr;
    rep.epochs = config.epochs;
    rep.batch = config.batch;
    rep.examples = n_examples;
    rep.epoch_loss = r.epoch_loss;
    const ParameterCount pc = count_parameters(model, &mask);
    rep.trainable = pc.selected;
    rep.total = pc.total;
    rep.fraction = pc.fraction;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

}  // namespace

void save_training_report(const std::filesystem::path& path, const TrainingReport& r) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "stage=" << stage_name(r.stage) << '\n';
    out << "seed=" << r.seed << '\n';
    out << "lr=" << fmt(r.lr) << '\n';
    out << "epochs=" << r.epochs << '\n';
    out << "batch=" << r.batch << '\n';
    out << "examples=" << r.examples << '\n';
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
        out << "epoch." << e + 1 << ".loss=" << fmt(r.epoch_loss[e]) << '\n';
    }
    if (r.stage == Stage::denoise) {
        out << "eot_before=" << fmt(r.eot_before) << '\n';
        out << "eot_after=" << fmt(r.eot_after) << '\n';
        out << "eot_delta=" << fmt(r.eot_after - r.eot_before) << '\n';
    }
    out << "trainable=" << r.trainable << '\n';
    out << "total=" << r.total << '\n';
    out << "fraction=" << fmt(r.fraction) << '\n';
    out << "wall_seconds=" << fmt(r.wall_seconds) << '\n';
}

TrainingReport load_training_report(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    TrainingReport r;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw IoError(path.string() + ": line without '=': " + line);
        }
        const std::string key = line.substr(0, eq);
        const std::string v = line.substr(eq + 1);
        if (key == "stage") {
            if (v == "denoise") {
                r.stage = Stage::denoise;
            } else if (v == "noise-filter") {
                r.stage = Stage::noise_filter;
            } else {
                throw IoError("unknown stage '" + v + "'");
            }
        } else if (key == "seed") {
            r.seed = parse_size(key, v);
        } else if (key == "lr") {
            r.lr = parse_double(key, v);
        } else if (key == "epochs") {
            r.epochs = parse_size(key, v);
        } else if (key == "batch") {
            r.batch = parse_size(key, v);
        } else if (key == "examples") {
            r.examples = parse_size(key, v);
        } else if (key.starts_with("epoch.") && key.ends_with(".loss")) {
            const std::size_t e = parse_size(key, key.substr(6, key.size() - 11));
            if (e != r.epoch_loss.size() + 1) {
                throw IoError("epoch losses out of order at " + key);
            }
            r.epoch_loss.push_back(parse_double(key, v));
        } else if (key == "eot_before") {
            r.eot_before = parse_double(key, v);
        } else if (key == "eot_after") {
            r.eot_after = parse_double(key, v);
        } else if (key == "eot_delta") {
            // derived
        } else if (key == "trainable") {
            r.trainable = parse_size(key, v);
        } else if (key == "total") {
            r.total = parse_size(key, v);
        } else if (key == "fraction") {
            r.fraction = parse_double(key, v);
        } else if (key == "wall_seconds") {
            r.wall_seconds = parse_double(key, v);
        } else {
            throw IoError(path.string() + ": unknown key '" + key + "'");
        }
    }
    return r;
}

TrainingReport stage1_denoise(MicroTransformer& model, const std::set<NeuronId>& irrel, const Stage1Inputs& data,
                              const TrainConfig& config) {
    const auto t0 = std::chrono::steady_clock::now();
    config.validate();
    if (irrel.empty()) {
        throw ConfigError("denoise: the irrelevant neuron set is empty, so the stage would train nothing");
    }
    if (data.train.empty()) {
        throw ConfigError("denoise: no training instances");
    }
    const GradientMask mask = mask_from_neurons(model, irrel);
    const double before = data.heldout.empty() ? 0.0 : mean_eot_probability(model, data.heldout);
    const TrainResult r = train_masked(model, data.train, &mask, config);
    TrainingReport rep = finish_report(Stage::denoise, config, data.train.size(), r, model, mask, t0);
    rep.eot_before = before;
    rep.eot_after = data.heldout.empty() ? 0.0 : mean_eot_probability(model, data.heldout);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

GradientMask stage2_mask(const MicroTransformer& model, const NeuronSets& sets, std::span<const std::size_t> layers,
                         const Stage2Options& options) {
    sets.validate();
    GradientMask mask("union");
    if (options.use_neurons) {
        mask = GradientMask::unite(mask, mask_from_neurons(model, sets.all()));
    }
    if (options.use_layers) {
        mask = GradientMask::unite(mask, mask_from_layers(model, layers));
    }
    mask.set_origin("union");
    return mask;
}

namespace {

LrScales stage2_scales(const MicroTransformer& model, const NeuronSets& sets, std::span<const std::size_t> layers,
                       const Stage2Options& options) {
    LrScales scales;
    for (const auto& p : model.parameters()) {
        scales[p.name].assign(p.value.numel(), 1.0);
    }
    auto apply = [&](const GradientMask& m, double s) {
        for (const auto& [name, bits] : m.entries()) {
            auto& v = scales[name];
            for (std::size_t i = 0; i < bits.size(); ++i) {
                if (bits[i] != 0) {
                    v[i] = s;
                }
            }
        }
    };
    if (options.use_neurons) {
        apply(mask_from_neurons(model, sets.rel), options.rel_scale);
        apply(mask_from_neurons(model, sets.irrel), options.irrel_scale);
        apply(mask_from_neurons(model, sets.shared), options.shared_scale);
    }
    if (options.use_layers) {
        apply(mask_from_layers(model, layers), options.layer_scale);
    }
    return scales;
}

}  // namespace

TrainingReport stage2_noise_filter(MicroTransformer& model, const NeuronSets& sets, std::span<const std::size_t> layers,
                                   std::span<const TrainingExample> train, const TrainConfig& config,
                                   const Stage2Options& options) {
    const auto t0 = std::chrono::steady_clock::now();
    config.validate();
    const GradientMask mask = stage2_mask(model, sets, layers, options);
    if (mask.empty()) {
        throw ConfigError("noise-filter: the gradient mask is empty, so the stage would train nothing");
    }
    if (train.empty()) {
        throw ConfigError("noise-filter: no training instances");
    }
    const bool uniform = options.rel_scale == 1.0 && options.irrel_scale == 1.0 && options.shared_scale == 1.0 &&
                         options.layer_scale == 1.0;
    const LrScales scales = uniform ? LrScales{} : stage2_scales(model, sets, layers, options);
    const TrainResult r = train_masked(model, train, &mask, config, uniform ? nullptr : &scales);
    return finish_report(Stage::noise_filter, config, train.size(), r, model, mask, t0);
}

void save_mask_file(const std::filesystem::path& path, const NeuronSets& sets, std::span<const std::size_t> layers) {
    save_neuron_sets(path, sets);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) {
        throw IoError("cannot append to " + path.string());
    }
    std::vector<std::size_t> sorted(layers.begin(), layers.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t l : sorted) {
        out << "layer," << l << ",full\n";
    }
}

}  // namespace nrit
