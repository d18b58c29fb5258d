// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nrit/errors.hpp"

namespace nrit {

void ModelConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0 || vocab_size == 0) {
        throw ConfigError("model dimensions must all be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (!(init_std > 0.0)) {
        throw ConfigError("init_std must be positive");
    }
}

std::string MicroTransformer::block_prefix(std::size_t layer) { return "layers." + std::to_string(layer) + "."; }

void MicroTransformer::add_param(const std::string& name, Shape shape, double std_dev, double fill,
                                 std::uint64_t& counter) {
    Tensor t(std::move(shape));
    if (std_dev > 0.0) {
        // One stream per parameter so that the layout of one tensor never
        // shifts the values of another.
        std::seed_seq seq{static_cast<std::uint32_t>(config_.init_seed), static_cast<std::uint32_t>(config_.init_seed >> 32),
                          static_cast<std::uint32_t>(counter)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> dist(0.0, std_dev);
        for (double& v : t.data) {
            v = dist(rng);
        }
    } else {
        t.fill(fill);
    }
    ++counter;
    params_.emplace_back(name, std::move(t));
}

MicroTransformer::MicroTransformer(ModelConfig config) : config_(config) {
    config_.validate();
    const std::size_t d = config_.d_model;
    const double s = config_.init_std;
    std::uint64_t counter = 0;
    add_param("tok_emb", {config_.vocab_size, d}, s, 0.0, counter);
    add_param("pos_emb", {config_.max_seq_len, d}, s, 0.0, counter);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string p = block_prefix(l);
        add_param(p + "ln1.gamma", {d}, 0.0, 1.0, counter);
        add_param(p + "ln1.beta", {d}, 0.0, 0.0, counter);
        add_param(p + "attn.wq", {d, d}, s, 0.0, counter);
        add_param(p + "attn.wk", {d, d}, s, 0.0, counter);
        add_param(p + "attn.wv", {d, d}, s, 0.0, counter);
        add_param(p + "attn.wo", {d, d}, s, 0.0, counter);
        add_param(p + "ln2.gamma", {d}, 0.0, 1.0, counter);
        add_param(p + "ln2.beta", {d}, 0.0, 0.0, counter);
        add_param(p + "ffn.w1", {d, config_.d_ff}, s, 0.0, counter);
        add_param(p + "ffn.b1", {config_.d_ff}, 0.0, 0.0, counter);
        add_param(p + "ffn.w2", {config_.d_ff, d}, s, 0.0, counter);
        add_param(p + "ffn.b2", {d}, 0.0, 0.0, counter);
    }
    add_param("ln_f.gamma", {d}, 0.0, 1.0, counter);
    add_param("ln_f.beta", {d}, 0.0, 0.0, counter);
    add_param("lm_head", {d, config_.vocab_size}, s, 0.0, counter);
}

Parameter& MicroTransformer::param(const std::string& name) {
    for (Parameter& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw ConfigError("no parameter named '" + name + "'");
}

const Parameter& MicroTransformer::param(const std::string& name) const {
    return const_cast<MicroTransformer*>(this)->param(name);
}

std::vector<std::string> MicroTransformer::block_parameter_names(std::size_t layer) const {
    if (layer >= config_.n_layers) {
        throw IndexError("layer " + std::to_string(layer) + " outside model of " + std::to_string(config_.n_layers));
    }
    const std::string prefix = block_prefix(layer);
    std::vector<std::string> names;
    for (const Parameter& p : params_) {
        if (p.name.starts_with(prefix)) {
            names.push_back(p.name);
        }
    }
    return names;
}

void MicroTransformer::load_parameters(std::span<const Parameter> loaded) {
    if (loaded.size() != params_.size()) {
        throw ConfigError("checkpoint has " + std::to_string(loaded.size()) + " tensors, model expects " +
                          std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (loaded[i].name != params_[i].name || loaded[i].value.shape != params_[i].value.shape) {
            throw ConfigError("checkpoint tensor '" + loaded[i].name + "' " + shape_string(loaded[i].value.shape) +
                              " does not match model tensor '" + params_[i].name + "' " +
                              shape_string(params_[i].value.shape));
        }
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        params_[i].value = loaded[i].value;
        params_[i].zero_grad();
    }
}

ForwardResult MicroTransformer::forward(Graph& g, std::span<const int> ids, std::span<ActivationProbe> probes,
                                        const ForwardOptions& options) const {
    const std::size_t len = ids.size();
    if (len == 0) {
        throw LengthError("forward: empty token sequence");
    }
    if (len > config_.max_seq_len) {
        throw LengthError("forward: sequence of " + std::to_string(len) + " tokens exceeds max_seq_len " +
                          std::to_string(config_.max_seq_len));
    }
    if (options.logits_from >= len) {
        throw IndexError("forward: logits_from outside sequence");
    }
    for (const ActivationProbe& pr : probes) {
        if (pr.layer >= config_.n_layers) {
            throw IndexError("probe layer " + std::to_string(pr.layer) + " outside model");
        }
        if (pr.position.value_or(len - 1) >= len) {
            throw IndexError("probe position " + std::to_string(*pr.position) + " outside sequence of " +
                             std::to_string(len));
        }
        if (pr.override_value && pr.override_value->numel() != config_.d_ff) {
            throw ContractError("probe override must have d_ff entries");
        }
    }
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw TokenError("token id " + std::to_string(id) + " outside vocabulary");
        }
    }

    auto P = [&](const std::string& name) { return g.parameter(const_cast<Parameter&>(param(name))); };

    std::vector<int> positions(len);
    std::iota(positions.begin(), positions.end(), 0);
    Var x = ops::add(ops::embedding(P("tok_emb"), ids), ops::embedding(P("pos_emb"), positions));

    const std::size_t hd = config_.d_model / config_.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string pre = block_prefix(l);
        Var h = ops::layer_norm(x, P(pre + "ln1.gamma"), P(pre + "ln1.beta"));
        Var q = ops::matmul(h, P(pre + "attn.wq"));
        Var k = ops::matmul(h, P(pre + "attn.wk"));
        Var v = ops::matmul(h, P(pre + "attn.wv"));
        std::vector<Var> heads;
        heads.reserve(config_.n_heads);
        for (std::size_t hh = 0; hh < config_.n_heads; ++hh) {
            Var qh = ops::slice_cols(q, hh * hd, hd);
            Var kh = ops::slice_cols(k, hh * hd, hd);
            Var vh = ops::slice_cols(v, hh * hd, hd);
            Var att = ops::causal_softmax(ops::scale(ops::matmul_nt(qh, kh), att_scale));
            heads.push_back(ops::matmul(att, vh));
        }
        Var attn = heads.size() == 1 ? heads[0] : ops::concat_cols(heads);
        x = ops::add(x, ops::matmul(attn, P(pre + "attn.wo")));

        Var h2 = ops::layer_norm(x, P(pre + "ln2.gamma"), P(pre + "ln2.beta"));
        Var act = ops::gelu(ops::add_bias(ops::matmul(h2, P(pre + "ffn.w1")), P(pre + "ffn.b1")));
        for (ActivationProbe& pr : probes) {
            if (pr.layer != l) {
                continue;
            }
            const std::size_t pos = pr.position.value_or(len - 1);
            const auto row = act.value().row(pos);
            pr.captured = Tensor({config_.d_ff}, std::vector<double>(row.begin(), row.end()));
            if (pr.override_value) {
                Var ov = g.input(*pr.override_value);
                pr.override_var = ov;
                act = ops::override_row(act, pos, ov);
            }
        }
        x = ops::add(x, ops::add_bias(ops::matmul(act, P(pre + "ffn.w2")), P(pre + "ffn.b2")));
    }
    if (options.logits_from > 0) {
        x = ops::slice_rows(x, options.logits_from, len - options.logits_from);
    }
    Var xf = ops::layer_norm(x, P("ln_f.gamma"), P("ln_f.beta"));
    return ForwardResult{ops::matmul(xf, P("lm_head")), options.logits_from};
}

Var choice_probability_var(Var logits_row, int choice_token, ChoiceNormalization norm, std::span<const int> choices) {
    const std::size_t vocab = logits_row.value().cols();
    if (choice_token < 0 || static_cast<std::size_t>(choice_token) >= vocab) {
        throw TokenError("choice token " + std::to_string(choice_token) + " not in vocabulary");
    }
    if (norm == ChoiceNormalization::full_vocab) {
        return ops::pick(ops::softmax(logits_row), static_cast<std::size_t>(choice_token));
    }
    std::vector<std::size_t> cols;
    std::size_t slot = choices.size();
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (choices[i] < 0 || static_cast<std::size_t>(choices[i]) >= vocab) {
            throw TokenError("choice token " + std::to_string(choices[i]) + " not in vocabulary");
        }
        cols.push_back(static_cast<std::size_t>(choices[i]));
        if (choices[i] == choice_token) {
            slot = i;
        }
    }
    if (slot == choices.size()) {
        throw TokenError("choice token is not one of the listed choices");
    }
    return ops::pick(ops::softmax(ops::select_cols(logits_row, cols)), slot);
}

double choice_probability(const MicroTransformer& model, std::span<const int> ids, std::size_t answer_position,
                          int choice_token, ChoiceNormalization norm, std::span<const int> choices) {
    if (answer_position >= ids.size()) {
        throw IndexError("answer position " + std::to_string(answer_position) + " outside prompt of " +
                         std::to_string(ids.size()));
    }
    if (choice_token < 0 || static_cast<std::size_t>(choice_token) >= model.config().vocab_size) {
        throw TokenError("choice token " + std::to_string(choice_token) + " not in vocabulary");
    }
    Graph g(false);
    const auto prefix = ids.subspan(0, answer_position + 1);
    ForwardOptions opt;
    opt.logits_from = answer_position;
    const ForwardResult res = model.forward(g, prefix, {}, opt);
    return choice_probability_var(res.logits, choice_token, norm, choices).value()[0];
}

std::vector<int> generate_greedy(const MicroTransformer& model, std::span<const int> prompt, std::size_t max_new,
                                 const GenerateOptions& options) {
    const std::size_t ctx = model.config().max_seq_len;
    if (prompt.empty()) {
        throw LengthError("generate: empty prompt");
    }
    if (prompt.size() >= ctx || prompt.size() + max_new > ctx) {
        throw LengthError("generate: prompt of " + std::to_string(prompt.size()) + " tokens leaves no room for " +
                          std::to_string(max_new) + " new tokens in context " + std::to_string(ctx));
    }
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (std::size_t step = 0; step < max_new; ++step) {
        Graph g(false);
        ForwardOptions opt;
        opt.logits_from = seq.size() - 1;
        const ForwardResult res = model.forward(g, seq, {}, opt);
        std::vector<double> logits = res.logits.value().data;
        if (options.logit_hook) {
            options.logit_hook(step, logits);
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[best]) {
                best = i;
            }
        }
        const int tok = static_cast<int>(best);
        if (tok == options.eot_token) {
            break;
        }
        out.push_back(tok);
        seq.push_back(tok);
    }
    return out;
}

ParameterCount count_parameters(std::size_t total, std::size_t selected) {
    ParameterCount c;
    c.total = total;
    c.selected = selected;
    c.fraction = total == 0 ? 0.0 : static_cast<double>(selected) / static_cast<double>(total);
    return c;
}

ParameterCount count_parameters(std::span<const Parameter> params, const GradientMask* mask) {
    std::size_t total = 0;
    for (const Parameter& p : params) {
        total += p.value.numel();
    }
    if (mask == nullptr) {
        return count_parameters(total, total);
    }
    mask->validate(params);
    return count_parameters(total, mask->count());
}

ParameterCount count_parameters(const MicroTransformer& model, const GradientMask* mask) {
    return count_parameters(model.parameters(), mask);
}

}  // namespace nrit
