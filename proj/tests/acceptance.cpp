// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
//
// usage: acceptance <nrit-cli> <desk-config> <small-config> <work-dir>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nrit/autodiff/graph.hpp"
#include "nrit/errors.hpp"
#include "nrit/harness/pipeline.hpp"
#include "nrit/model/checkpoint.hpp"

using namespace nrit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data) {
        v = dist(rng);
    }
    return t;
}

// ---- criterion 1 ---------------------------------------------------------

// Central differences computed here, independent of the library checker.
double max_relative_error(const std::function<Var(Graph&)>& loss, std::vector<Parameter*> params, double h) {
    for (auto* p : params) {
        p->zero_grad();
    }
    {
        Graph g;
        g.backward(loss(g));
    }
    std::vector<std::vector<double>> analytic;
    for (auto* p : params) {
        analytic.push_back(p->grad.data);
        p->zero_grad();
    }
    auto value = [&] {
        Graph g(false);
        return loss(g).value().data[0];
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& data = params[k]->value.data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = value();
            data[i] = saved - h;
            const double down = value();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

Outcome criterion_gradients() {
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    for (std::uint64_t seed = 0; seed <= 4; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<Parameter> ps;
        ps.emplace_back("a", random_tensor({3, 4}, rng));
        ps.emplace_back("b", random_tensor({3, 4}, rng));
        ps.emplace_back("m", random_tensor({4, 5}, rng));
        ps.emplace_back("n", random_tensor({6, 4}, rng));
        ps.emplace_back("bias", random_tensor({5}, rng));
        ps.emplace_back("pos", random_tensor({3, 4}, rng, 0.5, 1.5));
        ps.emplace_back("gamma", random_tensor({4}, rng));
        ps.emplace_back("beta", random_tensor({4}, rng));
        ps.emplace_back("table", random_tensor({5, 4}, rng));
        ps.emplace_back("row", random_tensor({4}, rng));
        const Tensor probe_w = random_tensor({64}, rng);

        using Build = std::function<Var(std::vector<Var>&)>;
        const std::vector<std::pair<std::string, Build>> prims = {
            {"add", [](auto& v) { return ops::add(v[0], v[1]); }},
            {"mul", [](auto& v) { return ops::mul(v[0], v[1]); }},
            {"scale", [](auto& v) { return ops::scale(v[0], -1.3); }},
            {"matmul", [](auto& v) { return ops::matmul(v[0], v[2]); }},
            {"matmul_nt", [](auto& v) { return ops::matmul_nt(v[0], v[3]); }},
            {"add_bias", [](auto& v) { return ops::add_bias(ops::matmul(v[0], v[2]), v[4]); }},
            {"gelu", [](auto& v) { return ops::gelu(v[0]); }},
            {"tanh", [](auto& v) { return ops::tanh(v[0]); }},
            {"log", [](auto& v) { return ops::log(v[5]); }},
            {"layer_norm", [](auto& v) { return ops::layer_norm(v[0], v[6], v[7]); }},
            {"softmax", [](auto& v) { return ops::softmax(v[0]); }},
            {"causal_softmax", [](auto& v) { return ops::causal_softmax(ops::matmul_nt(v[0], v[1])); }},
            {"embedding",
             [](auto& v) {
                 const std::vector<int> ids{4, 1, 4};
                 return ops::embedding(v[8], ids);
             }},
            {"cross_entropy",
             [](auto& v) {
                 const std::vector<int> t{2, 0, 3};
                 const std::vector<double> w{1.0, 0.5, 2.0};
                 return ops::cross_entropy(v[0], t, w);
             }},
            {"slice_rows", [](auto& v) { return ops::slice_rows(v[0], 1, 2); }},
            {"slice_cols", [](auto& v) { return ops::slice_cols(v[0], 1, 2); }},
            {"select_cols",
             [](auto& v) {
                 const std::vector<std::size_t> cols{3, 0, 3};
                 return ops::select_cols(v[0], cols);
             }},
            {"concat_cols",
             [](auto& v) {
                 const std::vector<Var> parts{v[0], ops::slice_cols(v[1], 0, 2)};
                 return ops::concat_cols(parts);
             }},
            {"override_row", [](auto& v) { return ops::override_row(v[0], 1, v[9]); }},
            {"sum", [](auto& v) { return ops::sum(v[0]); }},
            {"pick", [](auto& v) { return ops::pick(ops::tanh(v[0]), 5); }},
        };
        std::vector<Parameter*> ptrs;
        for (auto& p : ps) {
            ptrs.push_back(&p);
        }
        for (const auto& [name, build] : prims) {
            auto loss = [&](Graph& g) {
                std::vector<Var> vars;
                for (auto& p : ps) {
                    vars.push_back(g.parameter(p));
                }
                Var y = build(vars);
                const auto& shape = y.value().shape;
                Tensor w(shape);
                for (std::size_t i = 0; i < w.data.size(); ++i) {
                    w.data[i] = probe_w.data[i % probe_w.data.size()];
                }
                return ops::sum(ops::mul(y, g.constant(std::move(w))));
            };
            const double e = max_relative_error(loss, ptrs, 1e-5);
            ++checks;
            if (e > worst) {
                worst = e;
                worst_name = name + " seed " + std::to_string(seed);
            }
        }

        // The full micro-lm loss: next-token cross-entropy over a sequence.
        ModelConfig mc;
        mc.n_layers = 2;
        mc.d_model = 8;
        mc.n_heads = 2;
        mc.d_ff = 12;
        mc.max_seq_len = 8;
        mc.vocab_size = 11;
        mc.init_seed = seed;
        mc.init_std = 0.3;
        MicroTransformer model(mc);
        std::vector<Parameter*> mp;
        for (auto& p : model.parameters()) {
            mp.push_back(&p);
        }
        std::uniform_int_distribution<int> tok(0, 10);
        std::vector<int> ids(6);
        for (int& t : ids) {
            t = tok(rng);
        }
        auto lm_loss = [&](Graph& g) {
            ForwardOptions fo;
            fo.logits_from = 0;
            auto res = model.forward(g, std::span<const int>(ids).first(5), {}, fo);
            const std::vector<int> targets(ids.begin() + 1, ids.end());
            const std::vector<double> w(5, 1.0);
            return ops::cross_entropy(res.logits, targets, w);
        };
        const double e = max_relative_error(lm_loss, mp, 1e-5);
        ++checks;
        if (e > worst) {
            worst = e;
            worst_name = "micro-lm loss seed " + std::to_string(seed);
        }
    }
    return {worst < 1e-4, std::to_string(checks) + " gradient checks over seeds 0-4, max relative error " + fmt(worst) +
                              " (" + worst_name + "), bound 1e-4"};
}

// ---- criterion 2 ---------------------------------------------------------

Outcome criterion_completeness(const PipelineConfig& config, const fs::path& run) {
    const Prepared p = prepare(config);
    MicroTransformer model(
        [&] {
            ModelConfig m = config.model;
            m.vocab_size = p.tok.size();
            return m;
        }());
    model.load_parameters(load_checkpoint(run / "warmup" / "model.nrit"));

    std::vector<AttributionInstance> instances;
    const std::size_t per_type = 12;
    for (const auto* set : {&p.attribution.rel, &p.attribution.irrel}) {
        for (std::size_t i = 0; i < std::min(per_type, set->size()); ++i) {
            instances.push_back((*set)[i]);
        }
    }
    if (instances.size() < 20) {
        return {false, "only " + std::to_string(instances.size()) + " attribution instances available"};
    }
    static constexpr int kChoices[] = {Tokenizer::kYes, Tokenizer::kNo};
    double worst20 = 0.0;
    double worst200 = 0.0;
    double worst_anchor = 0.0;
    std::size_t improved = 0;
    for (const auto& inst : instances) {
        const auto enc = encode_attribution(p.tok, inst);
        double e20 = 0.0;
        double e200 = 0.0;
        for (std::size_t l = 0; l < config.model.n_layers; ++l) {
            IGConfig c20 = config.ig;
            c20.steps = 20;
            IGConfig c200 = config.ig;
            c200.steps = 200;
            const auto a20 = integrated_gradients_layer(model, enc, l, c20);
            const auto a200 = integrated_gradients_layer(model, enc, l, c200);
            const auto f = attribution_closure(model, enc, l, c20);
            const double f_target = evaluate_closure(f, a20.target);
            const double f_base = evaluate_closure(f, a20.base);
            // Anchor: at the captured activation the closure is the unmodified model.
            const double direct = choice_probability(model, enc.full_ids, enc.full_ids.size() - 1, enc.gold_token,
                                                     config.ig.normalization, kChoices);
            worst_anchor = std::max(worst_anchor, std::abs(direct - f_target));
            const double delta = f_target - f_base;
            auto err = [&](const std::vector<double>& s) {
                double sum = 0.0;
                for (double v : s) {
                    sum += v;
                }
                return std::abs(sum - delta) / std::max(std::abs(delta), 1e-12);
            };
            e20 = std::max(e20, err(a20.scores));
            e200 = std::max(e200, err(a200.scores));
        }
        worst20 = std::max(worst20, e20);
        worst200 = std::max(worst200, e200);
        improved += e200 < e20 ? 1 : 0;
    }
    const double share = static_cast<double>(improved) / static_cast<double>(instances.size());
    const bool pass = worst20 <= 1e-2 && worst200 <= 1e-3 && share >= 0.9 && worst_anchor < 1e-12;
    return {pass, std::to_string(instances.size()) + " instances x " + std::to_string(config.model.n_layers) +
                      " layers: max rel error " + fmt(worst20) + " at 20 steps, " + fmt(worst200) +
                      " at 200 steps; 200-step error smaller on " + fmt(100.0 * share, "%.1f") +
                      "% of instances; closure anchor error " + fmt(worst_anchor)};
}

// ---- criterion 3 ---------------------------------------------------------

Outcome criterion_zero_cases(const PipelineConfig& config, const fs::path& run) {
    const Prepared p = prepare(config);
    ModelConfig mc = config.model;
    mc.vocab_size = p.tok.size();
    MicroTransformer model(mc);
    model.load_parameters(load_checkpoint(run / "warmup" / "model.nrit"));

    std::size_t nonzero_identity = 0;
    std::size_t checked_identity = 0;
    AttributionInstance same = p.attribution.rel.front();
    same.context = "";
    const auto enc_same = encode_attribution(p.tok, same);
    if (enc_same.query_ids != enc_same.full_ids) {
        return {false, "empty-context prompt differs from the query-only prompt"};
    }
    for (std::size_t l = 0; l < mc.n_layers; ++l) {
        for (double s : integrated_gradients_layer(model, enc_same, l, config.ig).scores) {
            ++checked_identity;
            nonzero_identity += s != 0.0 ? 1 : 0;
        }
    }

    // Removing W2 of a block leaves its FFN hidden vector with no downstream path.
    std::size_t nonzero_cut = 0;
    std::size_t checked_cut = 0;
    std::size_t nonzero_control = 0;
    const auto enc = encode_attribution(p.tok, p.attribution.rel.front());
    for (std::size_t l = 0; l < mc.n_layers; ++l) {
        MicroTransformer cut(mc);
        cut.load_parameters(model.parameters());
        auto& w2 = cut.param(MicroTransformer::block_prefix(l) + "ffn.w2").value.data;
        std::fill(w2.begin(), w2.end(), 0.0);
        for (double s : integrated_gradients_layer(cut, enc, l, config.ig).scores) {
            ++checked_cut;
            nonzero_cut += s != 0.0 ? 1 : 0;
        }
        for (double s : integrated_gradients_layer(model, enc, l, config.ig).scores) {
            nonzero_control += s != 0.0 ? 1 : 0;
        }
    }
    const bool pass = nonzero_identity == 0 && nonzero_cut == 0 && nonzero_control > 0;
    return {pass, "identical prompts: " + std::to_string(nonzero_identity) + " of " +
                      std::to_string(checked_identity) + " scores nonzero; W2 removed: " +
                      std::to_string(nonzero_cut) + " of " + std::to_string(checked_cut) +
                      " nonzero (intact model: " + std::to_string(nonzero_control) + " nonzero)"};
}

// ---- criterion 4 ---------------------------------------------------------

struct OracleCandidates {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> freq;  // every selected neuron
    std::set<std::pair<std::size_t, std::size_t>> selected;
};

OracleCandidates oracle_mine(const std::vector<std::vector<int>>& rows, std::size_t d_ff, int percent,
                             std::size_t top_k, bool threshold_mode, std::size_t threshold, std::size_t top_t) {
    OracleCandidates out;
    for (const auto& row : rows) {
        std::vector<int> sorted = row;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = row.size();
        // Nearest rank: smallest r with r/n >= percent/100.
        std::size_t rank = (static_cast<std::size_t>(percent) * n + 99) / 100;
        rank = std::clamp<std::size_t>(rank, 1, n);
        const int cutoff = sorted[rank - 1];
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < n; ++i) {
            if (row[i] >= cutoff) {
                keep.push_back(i);
            }
        }
        std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
            if (row[a] != row[b]) {
                return row[a] > row[b];
            }
            return a < b;  // flat index order is (layer, index) order
        });
        keep.resize(std::min(keep.size(), top_k));
        for (std::size_t i : keep) {
            ++out.freq[{i / d_ff, i % d_ff}];
        }
    }
    std::vector<std::pair<std::pair<std::size_t, std::size_t>, std::size_t>> items(out.freq.begin(), out.freq.end());
    if (threshold_mode) {
        for (const auto& [n, c] : items) {
            if (c >= threshold) {
                out.selected.insert(n);
            }
        }
    } else {
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) {
                return a.second > b.second;
            }
            return a.first < b.first;
        });
        for (std::size_t i = 0; i < std::min(top_t, items.size()); ++i) {
            out.selected.insert(items[i].first);
        }
    }
    return out;
}

Outcome criterion_mining_oracle() {
    std::mt19937_64 rng(2026);
    std::size_t mismatches = 0;
    std::size_t nonempty = 0;
    const int percents[] = {50, 70, 75, 80, 90, 95};
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<std::size_t> layers_d(1, 4);
        const std::size_t n_layers = layers_d(rng);
        std::uniform_int_distribution<std::size_t> dff_d(1, 64 / n_layers);
        const std::size_t d_ff = dff_d(rng);
        const std::size_t width = n_layers * d_ff;
        std::uniform_int_distribution<std::size_t> q_d(1, 10);
        const std::size_t n_rel = q_d(rng);
        const std::size_t n_irrel = q_d(rng);
        // Few distinct values so that ties are common.
        std::uniform_int_distribution<int> score_d(-3, 4);
        MiningConfig mc;
        const int percent = percents[rng() % std::size(percents)];
        mc.percentile = percent / 100.0;
        mc.top_k = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        const bool threshold_mode = rng() % 2 == 0;
        mc.aggregation = threshold_mode ? Aggregation::threshold : Aggregation::top_t;
        mc.threshold = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        mc.top_t = std::uniform_int_distribution<std::size_t>(1, 12)(rng);

        AttributionMatrix m(n_layers, d_ff);
        std::vector<std::vector<int>> rel_rows;
        std::vector<std::vector<int>> irrel_rows;
        for (std::size_t q = 0; q < n_rel + n_irrel; ++q) {
            std::vector<int> row(width);
            for (int& v : row) {
                v = score_d(rng);
            }
            const bool is_rel = q < n_rel;
            (is_rel ? rel_rows : irrel_rows).push_back(row);
            m.add("i" + std::to_string(q), is_rel ? ContextType::rel : ContextType::irrel,
                  std::vector<double>(row.begin(), row.end()));
        }
        const auto rel = mine_candidates(m, m.rows_of(ContextType::rel), mc);
        const auto irrel = mine_candidates(m, m.rows_of(ContextType::irrel), mc);
        const auto sets = decouple(rel, irrel);
        const auto o_rel = oracle_mine(rel_rows, d_ff, percent, mc.top_k, threshold_mode, mc.threshold, mc.top_t);
        const auto o_irrel =
            oracle_mine(irrel_rows, d_ff, percent, mc.top_k, threshold_mode, mc.threshold, mc.top_t);

        auto same = [](const Candidates& c, const OracleCandidates& o) {
            std::set<std::pair<std::size_t, std::size_t>> sel;
            for (const auto& n : c.selected) {
                sel.insert({n.layer, n.index});
            }
            std::map<std::pair<std::size_t, std::size_t>, std::size_t> fr;
            for (const auto& [n, f] : c.frequency) {
                fr[{n.layer, n.index}] = f;
            }
            return sel == o.selected && fr == o.freq;
        };
        bool ok = same(rel, o_rel) && same(irrel, o_irrel);

        // Decoupling oracle.
        std::set<std::pair<std::size_t, std::size_t>> e_rel;
        std::set<std::pair<std::size_t, std::size_t>> e_irrel;
        std::set<std::pair<std::size_t, std::size_t>> e_shared;
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> e_freq;
        for (const auto& n : o_rel.selected) {
            if (o_irrel.selected.count(n)) {
                e_shared.insert(n);
                e_freq[n] = o_rel.freq.at(n) + o_irrel.freq.at(n);
            } else {
                e_rel.insert(n);
                e_freq[n] = o_rel.freq.at(n);
            }
        }
        for (const auto& n : o_irrel.selected) {
            if (!o_rel.selected.count(n)) {
                e_irrel.insert(n);
                e_freq[n] = o_irrel.freq.at(n);
            }
        }
        auto as_pairs = [](const std::set<NeuronId>& s) {
            std::set<std::pair<std::size_t, std::size_t>> out;
            for (const auto& n : s) {
                out.insert({n.layer, n.index});
            }
            return out;
        };
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> got_freq;
        for (const auto& [n, f] : sets.frequency) {
            got_freq[{n.layer, n.index}] = f;
        }
        ok = ok && as_pairs(sets.rel) == e_rel && as_pairs(sets.irrel) == e_irrel &&
             as_pairs(sets.shared) == e_shared && got_freq == e_freq;
        mismatches += ok ? 0 : 1;
        nonempty += (!e_rel.empty() || !e_irrel.empty() || !e_shared.empty()) ? 1 : 0;
    }
    return {mismatches == 0 && nonempty > 50, "100 random instances (<=64 neurons, <=10 queries per type): " +
                                                  std::to_string(mismatches) + " mismatches, " +
                                                  std::to_string(nonempty) + " with nonempty sets"};
}

// ---- criterion 5 ---------------------------------------------------------

Outcome criterion_set_algebra(const std::vector<fs::path>& runs) {
    std::string detail;
    bool pass = true;
    for (const auto& run : runs) {
        const auto sets = load_neuron_sets(run / "neurons.txt");
        const auto [rel, irrel] = load_candidates(run / "candidates.txt");
        std::size_t overlaps = 0;
        for (const auto& n : sets.rel) {
            overlaps += sets.irrel.count(n) + sets.shared.count(n);
        }
        for (const auto& n : sets.irrel) {
            overlaps += sets.shared.count(n);
        }
        std::set<NeuronId> r(sets.rel);
        r.insert(sets.shared.begin(), sets.shared.end());
        std::set<NeuronId> i(sets.irrel);
        i.insert(sets.shared.begin(), sets.shared.end());
        const bool ok = overlaps == 0 && r == rel.selected && i == irrel.selected;
        pass = pass && ok;
        detail += (detail.empty() ? "" : "; ") + run.filename().string() + ": rel " + std::to_string(sets.rel.size()) +
                  " irrel " + std::to_string(sets.irrel.size()) + " shared " + std::to_string(sets.shared.size()) +
                  (ok ? " ok" : " BROKEN");
    }
    return {pass, detail};
}

// ---- criterion 6 ---------------------------------------------------------

struct DiffCount {
    std::size_t outside_changed = 0;
    std::size_t inside_changed = 0;
    std::size_t outside = 0;
};

DiffCount checkpoint_diff(const fs::path& before, const fs::path& after, const GradientMask& mask) {
    const auto a = load_checkpoint(before);
    const auto b = load_checkpoint(after);
    if (a.size() != b.size()) {
        throw ContractError("checkpoints differ in parameter count");
    }
    DiffCount d;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].name != b[k].name || a[k].value.shape != b[k].value.shape) {
            throw ContractError("checkpoint layout differs at " + a[k].name);
        }
        for (std::size_t i = 0; i < a[k].value.data.size(); ++i) {
            const bool same = std::memcmp(&a[k].value.data[i], &b[k].value.data[i], sizeof(double)) == 0;
            if (mask.selects(a[k].name, i)) {
                d.inside_changed += same ? 0 : 1;
            } else {
                ++d.outside;
                d.outside_changed += same ? 0 : 1;
            }
        }
    }
    return d;
}

Outcome criterion_mask_isolation(const PipelineConfig& config, const fs::path& work) {
    const Prepared p = prepare(config);
    ModelConfig mc = config.model;
    mc.vocab_size = p.tok.size();
    MicroTransformer model(mc);
    const fs::path dir = work / "isolation";
    fs::create_directories(dir);

    std::mt19937_64 rng(11);
    auto random_neurons = [&](std::size_t n) {
        std::set<NeuronId> s;
        while (s.size() < n) {
            s.insert({rng() % mc.n_layers, rng() % mc.d_ff});
        }
        return s;
    };

    // Stage 1 at the published defaults.
    const auto irrel = random_neurons(12);
    auto train1 = denoise_examples(p.tok, p.world.corpus, p.denoise_train);
    train1.resize(std::min<std::size_t>(train1.size(), 24));
    std::vector<std::vector<int>> held;
    for (const auto& d : p.denoise_heldout) {
        held.push_back(denoise_prompt_ids(p.tok, p.world.corpus, d));
    }
    save_checkpoint(dir / "before1.nrit", model.parameters());
    stage1_denoise(model, irrel, {train1, held}, TrainConfig::published_default(Stage::denoise));
    save_checkpoint(dir / "after1.nrit", model.parameters());
    const auto d1 = checkpoint_diff(dir / "before1.nrit", dir / "after1.nrit", mask_from_neurons(model, irrel));

    // Stage 2 at the published defaults: three groups plus one full block.
    NeuronSets sets;
    for (const auto& n : random_neurons(18)) {
        const auto which = rng() % 3;
        (which == 0 ? sets.rel : which == 1 ? sets.irrel : sets.shared).insert(n);
        sets.frequency[n] = 1;
    }
    const std::vector<std::size_t> layers{mc.n_layers - 1};
    auto train2 = rs_examples(p.tok, p.world.corpus, p.rs);
    train2.resize(std::min<std::size_t>(train2.size(), 24));
    save_checkpoint(dir / "before2.nrit", model.parameters());
    stage2_noise_filter(model, sets, layers, train2, TrainConfig::published_default(Stage::noise_filter));
    save_checkpoint(dir / "after2.nrit", model.parameters());
    const auto d2 = checkpoint_diff(dir / "before2.nrit", dir / "after2.nrit", stage2_mask(model, sets, layers, {}));

    const bool pass = d1.outside_changed == 0 && d2.outside_changed == 0 && d1.inside_changed > 0 &&
                      d2.inside_changed > 0;
    return {pass, "stage 1 (lr 1e-5, 1 epoch, batch 4): " + std::to_string(d1.outside_changed) + " of " +
                      std::to_string(d1.outside) + " unmasked entries changed, " + std::to_string(d1.inside_changed) +
                      " masked entries moved; stage 2 (lr 2e-5, 2 epochs, batch 4): " +
                      std::to_string(d2.outside_changed) + " of " + std::to_string(d2.outside) +
                      " unmasked entries changed, " + std::to_string(d2.inside_changed) + " masked entries moved"};
}

// ---- criterion 7 ---------------------------------------------------------

// P(EOT) at the last prompt position, softmax written out here.
double eot_probability(const MicroTransformer& model, const std::vector<int>& ids) {
    Graph g(false);
    ForwardOptions fo;
    fo.logits_from = ids.size() - 1;
    const auto res = model.forward(g, ids, {}, fo);
    const auto& row = res.logits.value().data;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) {
        z += std::exp(v - mx);
    }
    return std::exp(row[Tokenizer::kEot] - mx) / z;
}

Outcome criterion_stage1_effect(const PipelineConfig& config, const fs::path& run) {
    const Prepared p = prepare(config);
    ModelConfig mc = config.model;
    mc.vocab_size = p.tok.size();
    MicroTransformer before(mc);
    before.load_parameters(load_checkpoint(run / "warmup" / "model.nrit"));
    MicroTransformer after(mc);
    after.load_parameters(load_checkpoint(run / "stage1" / "model.nrit"));
    double pb = 0.0;
    double pa = 0.0;
    std::size_t irrelevant_only = 0;
    for (const auto& d : p.denoise_heldout) {
        const auto ids = denoise_prompt_ids(p.tok, p.world.corpus, d);
        pb += eot_probability(before, ids);
        pa += eot_probability(after, ids);
        // Every document must be free of the question's answer.
        bool clean = false;
        for (const auto& q : p.split.eval) {
            if (q.id + "-dn" == d.id) {
                clean = true;
                for (const auto& text : document_texts(p.world.corpus, d.doc_ids)) {
                    clean = clean && match_metric(text, q.gold_answers) == 0;
                }
            }
        }
        irrelevant_only += clean ? 1 : 0;
    }
    const std::size_t n = p.denoise_heldout.size();
    pb /= static_cast<double>(n);
    pa /= static_cast<double>(n);
    const bool pass = n >= 50 && irrelevant_only == n && pa > pb;
    return {pass, std::to_string(n) + " held-out all-irrelevant prompts: mean P(EOT) " + fmt(pb) + " -> " + fmt(pa)};
}

// ---- criterion 8 ---------------------------------------------------------

Outcome criterion_end_to_end(const fs::path& run, double seconds) {
    const auto r = load_eval_report(run / "eval" / "report.txt");
    auto show = [](std::optional<double> v) { return v ? fmt(*v, "%.4f") : std::string("absent"); };
    const bool present_ok = r.baseline_present.accuracy() && r.tuned_present.accuracy() &&
                            *r.tuned_present.accuracy() >= *r.baseline_present.accuracy();
    const bool absent_ok = r.baseline_absent.abstain_rate() && r.tuned_absent.abstain_rate() &&
                           *r.tuned_absent.abstain_rate() >= *r.baseline_absent.abstain_rate();
    const bool sizes_ok = r.tuned_all.n >= 200 && r.tuned_present.n + r.tuned_absent.n == r.tuned_all.n;
    const bool time_ok = seconds < 30.0 * 60.0;
    return {present_ok && absent_ok && sizes_ok && time_ok,
            std::to_string(r.tuned_all.n) + " eval instances (" + std::to_string(r.tuned_present.n) + " present, " +
                std::to_string(r.tuned_absent.n) + " absent): answer-present accuracy " +
                show(r.baseline_present.accuracy()) + " -> " + show(r.tuned_present.accuracy()) +
                ", answer-absent EOT/no-evidence rate " + show(r.baseline_absent.abstain_rate()) + " -> " +
                show(r.tuned_absent.abstain_rate()) + ", wall " + fmt(seconds / 60.0, "%.1f") + " min"};
}

// ---- criterion 9 ---------------------------------------------------------

Outcome criterion_parameter_count(const PipelineConfig& config, const fs::path& run) {
    std::size_t vocab = 0;
    {
        std::istringstream in(slurp(run / "tokenizer.txt"));
        std::string line;
        while (std::getline(in, line)) {
            ++vocab;
        }
    }
    const std::size_t d = config.model.d_model;
    const std::size_t f = config.model.d_ff;
    const std::size_t block = 4 * d + 4 * d * d + 2 * d * f + f + d;
    const std::size_t total = 2 * vocab * d + config.model.max_seq_len * d + config.model.n_layers * block + 2 * d;

    const auto sets = load_neuron_sets(run / "neurons.txt");
    std::set<std::size_t> layers;
    {
        std::istringstream in(slurp(run / "layers.txt"));
        std::size_t l = 0;
        while (in >> l) {
            layers.insert(l);
        }
    }
    std::size_t trainable = layers.size() * block;
    for (const auto* group : {&sets.rel, &sets.irrel, &sets.shared}) {
        for (const auto& n : *group) {
            trainable += layers.count(n.layer) ? 0 : 2 * d + 1;
        }
    }
    const auto r = load_eval_report(run / "eval" / "report.txt");
    const double fraction = static_cast<double>(trainable) / static_cast<double>(total);
    const auto ref = count_parameters(8'000'000'000ULL, 529'000'000ULL);
    const bool pass = r.trainable == trainable && r.total == total && r.fraction == fraction &&
                      ref.fraction == 0.529 / 8.0 && std::abs(ref.fraction - 0.066) < 5e-4;
    return {pass, "manual count " + std::to_string(trainable) + " / " + std::to_string(total) + " = " +
                      fmt(100.0 * fraction, "%.3f") + "%, reported " + std::to_string(r.trainable) + " / " +
                      std::to_string(r.total) + "; reference 0.529e9 / 8e9 = " +
                      fmt(100.0 * ref.fraction, "%.4f") + "%"};
}

// ---- criterion 10 --------------------------------------------------------

Outcome criterion_determinism(const fs::path& a, const fs::path& b) {
    const char* files[] = {"neurons.txt",         "candidates.txt",    "layers.txt",
                           "warmup/model.nrit",   "attribution/matrix.nrit", "stage1/model.nrit",
                           "stage2/model.nrit",   "stage2/mask.txt",   "eval/report.txt",
                           "eval/baseline.jsonl", "eval/tuned.jsonl"};
    std::size_t differ = 0;
    std::string detail;
    for (const char* f : files) {
        const auto ha = fnv1a(slurp(a / f));
        const auto hb = fnv1a(slurp(b / f));
        differ += ha == hb ? 0 : 1;
        if (ha != hb) {
            detail += std::string(" ") + f + " differs;";
        }
    }
    const bool reports_equal = load_eval_report(a / "eval" / "report.txt") == load_eval_report(b / "eval" / "report.txt");
    char h[32];
    std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(fnv1a(slurp(a / "eval" / "report.txt"))));
    return {differ == 0 && reports_equal, std::to_string(std::size(files)) + " artifacts compared between two run-all "
                                                                             "invocations, " +
                                              std::to_string(differ) + " differ;" + detail +
                                              " eval report hash " + h};
}

// ---- criterion 11 --------------------------------------------------------

std::set<std::string> oracle_keys(const std::string& text) {
    std::string clean;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::ispunct(u) && u < 128) {
            continue;
        }
        clean += static_cast<char>(std::tolower(u));
    }
    std::istringstream in(clean);
    std::set<std::string> keys;
    std::string w;
    while (in >> w) {
        if (!stopwords().count(w)) {
            keys.insert(w);
        }
    }
    return keys;
}

Outcome criterion_retrieval(const PipelineConfig& config) {
    const World world = generate_world(config.world);
    const Corpus& corpus = world.corpus;
    std::vector<std::set<std::string>> doc_keys;
    for (const auto& d : corpus.docs()) {
        doc_keys.push_back(oracle_keys(d.text()));
    }
    std::size_t mismatched = 0;
    std::size_t tied_pairs = 0;
    for (const auto& q : world.queries) {
        const auto qk = oracle_keys(q.text);
        std::vector<std::pair<std::size_t, std::string>> ranked;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            std::size_t s = 0;
            for (const auto& k : qk) {
                s += doc_keys[i].count(k);
            }
            ranked.push_back({s, corpus.doc(i).id});
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) {
                return x.first > y.first;
            }
            return x.second < y.second;
        });
        for (std::size_t i = 1; i < ranked.size(); ++i) {
            tied_pairs += ranked[i].first == ranked[i - 1].first ? 1 : 0;
        }
        const auto got = retrieve(q.text, corpus, corpus.size(), corpus.size());
        bool ok = got.size() == ranked.size();
        for (std::size_t i = 0; ok && i < got.size(); ++i) {
            ok = got[i].id == ranked[i].second && got[i].score == ranked[i].first;
        }
        const auto top = retrieve(q.text, corpus, config.top_n, config.top_k);
        for (std::size_t i = 0; ok && i < top.size(); ++i) {
            ok = top[i].id == ranked[i].second;
        }
        ok = ok && top.size() == std::min(config.top_k, corpus.size());
        mismatched += ok ? 0 : 1;
    }
    return {mismatched == 0, std::to_string(world.queries.size()) + " queries over " + std::to_string(corpus.size()) +
                                 " documents: " + std::to_string(mismatched) + " rankings differ from brute force (" +
                                 std::to_string(tied_pairs) + " adjacent ties exercised)"};
}

// ---- driver --------------------------------------------------------------

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 5) {
        std::cerr << "usage: acceptance <nrit-cli> <desk-config> <small-config> <work-dir>\n";
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path desk_cfg = argv[2];
    const fs::path small_cfg = argv[3];
    const fs::path work = argv[4];
    fs::remove_all(work);
    fs::create_directories(work);

    std::map<int, Outcome> results;
    auto guard = [&](int id, const std::function<Outcome()>& f) {
        try {
            results[id] = f();
        } catch (const std::exception& e) {
            results[id] = {false, std::string("exception: ") + e.what()};
        }
    };

    const auto desk = load_config(desk_cfg);
    const auto small = load_config(small_cfg);

    // Pipeline runs shared by several criteria.
    bool small_ok = true;
    for (const char* name : {"small-a", "small-b"}) {
        const int rc = run_cli(cli, "run-all --quiet --config \"" + small_cfg.string() + "\" --out \"" +
                                        (work / name).string() + "\"",
                               work / (std::string(name) + ".log"));
        small_ok = small_ok && rc == 0;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const int desk_rc = run_cli(cli, "run-all --config \"" + desk_cfg.string() + "\" --out \"" +
                                         (work / "desk").string() + "\"",
                                work / "desk.log");
    const double desk_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string small_fail = "run-all on the small config failed; see " + (work / "small-a.log").string();
    const std::string desk_fail = "run-all on the desk config failed; see " + (work / "desk.log").string();

    guard(1, criterion_gradients);
    guard(2, [&]() -> Outcome {
        if (!small_ok) {
            return {false, small_fail};
        }
        return criterion_completeness(small, work / "small-a");
    });
    guard(3, [&]() -> Outcome {
        if (!small_ok) {
            return {false, small_fail};
        }
        return criterion_zero_cases(small, work / "small-a");
    });
    guard(4, criterion_mining_oracle);
    guard(5, [&]() -> Outcome {
        std::vector<fs::path> runs;
        for (const char* name : {"small-a", "small-b", "desk"}) {
            if (fs::exists(work / name / "neurons.txt")) {
                runs.push_back(work / name);
            }
        }
        if (runs.size() != 3) {
            return {false, "missing pipeline runs"};
        }
        return criterion_set_algebra(runs);
    });
    guard(6, [&] { return criterion_mask_isolation(small, work); });
    guard(7, [&]() -> Outcome {
        if (desk_rc != 0) {
            return {false, desk_fail};
        }
        return criterion_stage1_effect(desk, work / "desk");
    });
    guard(8, [&]() -> Outcome {
        if (desk_rc != 0) {
            return {false, desk_fail};
        }
        return criterion_end_to_end(work / "desk", desk_seconds);
    });
    guard(9, [&]() -> Outcome {
        if (desk_rc != 0) {
            return {false, desk_fail};
        }
        return criterion_parameter_count(desk, work / "desk");
    });
    guard(10, [&]() -> Outcome {
        if (!small_ok) {
            return {false, small_fail};
        }
        return criterion_determinism(work / "small-a", work / "small-b");
    });
    guard(11, [&] { return criterion_retrieval(desk); });

    int failed = 0;
    for (const auto& [id, r] : results) {
        std::cout << "criterion " << id << ": " << (r.pass ? "PASS" : "FAIL") << " - " << r.detail << std::endl;
        failed += r.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
