// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/attribution/attribution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "nrit/data/prompts.hpp"
#include "nrit/errors.hpp"
#include "nrit/model/checkpoint.hpp"

namespace nrit {

void IGConfig::validate() const {
    if (steps < 1) {
        throw ConfigError("ig.steps must be >= 1");
    }
}

std::vector<double> integrated_gradients(const Tensor& base, const Tensor& target, std::size_t steps,
                                         const IGClosure& f, const std::string& where) {
    if (steps < 1) {
        throw ConfigError("integrated gradients needs at least one step");
    }
    if (base.numel() != target.numel()) {
        throw ContractError("integrated gradients: baseline and target sizes differ");
    }
    const std::size_t n = base.numel();
    std::vector<double> acc(n, 0.0);
    for (std::size_t s = 1; s <= steps; ++s) {
        const double alpha = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
        Tensor v(base.shape);
        for (std::size_t j = 0; j < n; ++j) {
            v.data[j] = base.data[j] + alpha * (target.data[j] - base.data[j]);
        }
        Graph g(false);
        try {
            auto [out, leaf] = f(g, v);
            g.backward(out);
            const Tensor& grad = leaf.grad();
            for (std::size_t j = 0; j < n; ++j) {
                if (!std::isfinite(grad.data[j])) {
                    throw NumericError("non-finite gradient at component " + std::to_string(j));
                }
                acc[j] += grad.data[j];
            }
        } catch (const NumericError& e) {
            throw NumericError("integrated gradients (" + where + ", step " + std::to_string(s) + "): " + e.what());
        }
    }
    std::vector<double> scores(n);
    for (std::size_t j = 0; j < n; ++j) {
        scores[j] = (target.data[j] - base.data[j]) * (acc[j] / static_cast<double>(steps));
    }
    return scores;
}

double evaluate_closure(const IGClosure& f, const Tensor& v) {
    Graph g(false);
    return f(g, v).first.value().data.at(0);
}

EncodedAttribution encode_attribution(const Tokenizer& tok, const AttributionInstance& inst) {
    inst.validate();
    PromptSlots slots;
    slots.question = inst.question;
    slots.proposed_answer = inst.proposed_answer;
    slots.context = "";
    EncodedAttribution enc;
    enc.id = inst.id;
    enc.query_ids = tok.encode(render_prompt(PromptKind::attribution, slots));
    slots.context = inst.context;
    enc.full_ids = tok.encode(render_prompt(PromptKind::attribution, slots));
    enc.gold_token = inst.gold == 0 ? Tokenizer::kYes : Tokenizer::kNo;
    enc.type = inst.type;
    return enc;
}

IGClosure attribution_closure(const MicroTransformer& model, const EncodedAttribution& inst, std::size_t layer,
                              const IGConfig& config) {
    return [&model, &inst, layer, config](Graph& g, const Tensor& v) {
        std::vector<ActivationProbe> probes(1);
        probes[0].layer = layer;
        probes[0].override_value = v;
        ForwardOptions opt;
        opt.logits_from = inst.full_ids.size() - 1;
        const ForwardResult res = model.forward(g, inst.full_ids, probes, opt);
        static constexpr int kChoices[] = {Tokenizer::kYes, Tokenizer::kNo};
        Var p = choice_probability_var(res.logits, inst.gold_token, config.normalization, kChoices);
        if (config.target == IGTarget::loss) {
            p = ops::scale(ops::log(p), -1.0);
        }
        return std::pair<Var, Var>{p, *probes[0].override_var};
    };
}

namespace {

// FFN activations at the final token for every layer.
std::vector<Tensor> capture_all_layers(const MicroTransformer& model, std::span<const int> ids) {
    const std::size_t n_layers = model.config().n_layers;
    std::vector<ActivationProbe> probes(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        probes[l].layer = l;
    }
    Graph g(false);
    ForwardOptions opt;
    opt.logits_from = ids.size() - 1;
    model.forward(g, ids, probes, opt);
    std::vector<Tensor> out;
    for (auto& p : probes) {
        out.push_back(std::move(p.captured));
    }
    return out;
}

std::string where(const EncodedAttribution& inst, std::size_t layer) {
    return "instance " + inst.id + ", layer " + std::to_string(layer);
}

}  // namespace

LayerAttribution integrated_gradients_layer(const MicroTransformer& model, const EncodedAttribution& inst,
                                            std::size_t layer, const IGConfig& config) {
    config.validate();
    if (layer >= model.config().n_layers) {
        throw IndexError("attribution layer " + std::to_string(layer) + " outside model");
    }
    LayerAttribution out;
    out.base = capture_all_layers(model, inst.query_ids)[layer];
    out.target = capture_all_layers(model, inst.full_ids)[layer];
    out.scores =
        integrated_gradients(out.base, out.target, config.steps, attribution_closure(model, inst, layer, config),
                             where(inst, layer));
    return out;
}

void AttributionMatrix::add(std::string id, ContextType type, std::vector<double> scores) {
    if (scores.size() != width()) {
        throw ContractError("attribution row for '" + id + "' has " + std::to_string(scores.size()) +
                            " entries, expected " + std::to_string(width()));
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw NumericError("non-finite attribution for instance " + id + ", layer " +
                               std::to_string(i / d_ff_) + ", neuron " + std::to_string(i % d_ff_));
        }
    }
    ids_.push_back(std::move(id));
    types_.push_back(type);
    data_.insert(data_.end(), scores.begin(), scores.end());
}

std::span<const double> AttributionMatrix::row(std::size_t i) const {
    if (i >= ids_.size()) {
        throw IndexError("attribution row " + std::to_string(i) + " out of range");
    }
    return std::span<const double>(data_).subspan(i * width(), width());
}

double AttributionMatrix::score(std::size_t i, NeuronId n) const {
    if (n.layer >= n_layers_ || n.index >= d_ff_) {
        throw IndexError("neuron outside attribution matrix");
    }
    return row(i)[n.layer * d_ff_ + n.index];
}

std::vector<std::size_t> AttributionMatrix::rows_of(ContextType type) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < types_.size(); ++i) {
        if (types_[i] == type) {
            out.push_back(i);
        }
    }
    return out;
}

void AttributionMatrix::save(const std::filesystem::path& path) const {
    std::vector<Parameter> tensors;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const auto r = row(i);
        tensors.emplace_back("attr/" + ids_[i] + "/type",
                             Tensor({1}, {types_[i] == ContextType::rel ? 0.0 : 1.0}));
        for (std::size_t l = 0; l < n_layers_; ++l) {
            tensors.emplace_back("attr/" + ids_[i] + "/" + std::to_string(l),
                                 Tensor({d_ff_}, std::vector<double>(r.begin() + static_cast<std::ptrdiff_t>(l * d_ff_),
                                                                     r.begin() + static_cast<std::ptrdiff_t>((l + 1) * d_ff_))));
        }
    }
    save_checkpoint(path, tensors);
}

AttributionMatrix AttributionMatrix::load(const std::filesystem::path& path) {
    const auto tensors = load_checkpoint(path);
    AttributionMatrix m;
    std::size_t i = 0;
    while (i < tensors.size()) {
        const std::string& name = tensors[i].name;
        if (!name.starts_with("attr/") || !name.ends_with("/type")) {
            throw IoError("attribution file: expected attr/<id>/type, found '" + name + "'");
        }
        std::string id = name.substr(5, name.size() - 5 - 5);
        const ContextType type = tensors[i].value.data.at(0) == 0.0 ? ContextType::rel : ContextType::irrel;
        ++i;
        std::vector<double> scores;
        std::size_t layers = 0;
        while (i < tensors.size() && tensors[i].name == "attr/" + id + "/" + std::to_string(layers)) {
            const auto& t = tensors[i].value;
            if (m.d_ff_ == 0) {
                m.d_ff_ = t.numel();
            } else if (t.numel() != m.d_ff_) {
                throw IoError("attribution file: inconsistent d_ff for " + id);
            }
            scores.insert(scores.end(), t.data.begin(), t.data.end());
            ++layers;
            ++i;
        }
        if (m.n_layers_ == 0) {
            m.n_layers_ = layers;
        } else if (layers != m.n_layers_) {
            throw IoError("attribution file: inconsistent layer count for " + id);
        }
        m.add(std::move(id), type, std::move(scores));
    }
    return m;
}

AttributionMatrix compute_attribution_matrix(const MicroTransformer& model, const Tokenizer& tok,
                                             std::span<const AttributionInstance> instances, const IGConfig& config,
                                             const AttributionRunOptions& options) {
    config.validate();
    const std::size_t n_layers = model.config().n_layers;
    const std::size_t d_ff = model.config().d_ff;
    std::vector<EncodedAttribution> encoded;
    encoded.reserve(instances.size());
    for (const auto& inst : instances) {
        encoded.push_back(encode_attribution(tok, inst));
    }
    std::vector<std::vector<double>> rows(encoded.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;
    auto work = [&]() {
        for (std::size_t i = next++; i < encoded.size(); i = next++) {
            const auto& inst = encoded[i];
            const auto base = capture_all_layers(model, inst.query_ids);
            const auto target = capture_all_layers(model, inst.full_ids);
            std::vector<double> row;
            row.reserve(n_layers * d_ff);
            for (std::size_t l = 0; l < n_layers; ++l) {
                const auto s = integrated_gradients(base[l], target[l], config.steps,
                                                    attribution_closure(model, inst, l, config), where(inst, l));
                row.insert(row.end(), s.begin(), s.end());
            }
            rows[i] = std::move(row);
            const std::size_t d = ++done;
            if (options.progress) {
                std::lock_guard lock(progress_mutex);
                options.progress(d, encoded.size());
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.threads, encoded.size()));
    if (n_threads == 1) {
        work();
    } else {
        std::vector<std::exception_ptr> errors(n_threads);
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back([&, t]() {
                try {
                    work();
                } catch (...) {
                    errors[t] = std::current_exception();
                    next = encoded.size();
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }
    AttributionMatrix m(n_layers, d_ff);
    for (std::size_t i = 0; i < encoded.size(); ++i) {
        m.add(encoded[i].id, encoded[i].type, std::move(rows[i]));
    }
    return m;
}

void MiningConfig::validate() const {
    if (!(percentile > 0.0 && percentile < 1.0)) {
        throw ConfigError("mining.percentile must be in (0, 1)");
    }
    if (top_k < 1) {
        throw ConfigError("mining.top_k must be >= 1");
    }
    if (aggregation == Aggregation::top_t && top_t < 1) {
        throw ConfigError("mining.top_t must be >= 1 in top-t mode");
    }
}

std::size_t nearest_rank(double percentile, std::size_t n) {
    if (n == 0) {
        throw ContractError("percentile of an empty list");
    }
    const double r = percentile * static_cast<double>(n);
    // Guard against r landing a few ulps above an integer.
    auto rank = static_cast<std::size_t>(std::ceil(r - 1e-9 * std::max(1.0, r)));
    return std::clamp<std::size_t>(rank, 1, n);
}

std::vector<NeuronId> select_instance_neurons(std::span<const double> row, std::size_t d_ff,
                                              const MiningConfig& config) {
    config.validate();
    if (d_ff == 0 || row.size() % d_ff != 0) {
        throw ContractError("attribution row width is not a multiple of d_ff");
    }
    std::vector<double> sorted(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end());
    const double cutoff = sorted[nearest_rank(config.percentile, sorted.size()) - 1];
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i] >= cutoff) {
            kept.push_back(i);
        }
    }
    // Flat index order is (layer, index) order.
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
        return row[a] != row[b] ? row[a] > row[b] : a < b;
    });
    kept.resize(std::min(kept.size(), config.top_k));
    std::vector<NeuronId> out;
    out.reserve(kept.size());
    for (std::size_t i : kept) {
        out.push_back({i / d_ff, i % d_ff});
    }
    return out;
}

Candidates mine_candidates(const AttributionMatrix& matrix, std::span<const std::size_t> rows,
                           const MiningConfig& config) {
    config.validate();
    if (rows.empty()) {
        throw ConfigError("mining needs at least one attribution instance");
    }
    Candidates c;
    for (std::size_t r : rows) {
        for (const NeuronId& n : select_instance_neurons(matrix.row(r), matrix.d_ff(), config)) {
            ++c.frequency[n];
        }
    }
    if (config.aggregation == Aggregation::threshold) {
        for (const auto& [n, f] : c.frequency) {
            if (f >= config.threshold) {
                c.selected.insert(n);
            }
        }
    } else {
        std::vector<std::pair<NeuronId, std::size_t>> ranked(c.frequency.begin(), c.frequency.end());
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        for (std::size_t i = 0; i < std::min(config.top_t, ranked.size()); ++i) {
            c.selected.insert(ranked[i].first);
        }
    }
    return c;
}

void NeuronSets::validate() const {
    auto overlap = [](const std::set<NeuronId>& a, const std::set<NeuronId>& b) {
        for (const auto& n : a) {
            if (b.contains(n)) {
                return true;
            }
        }
        return false;
    };
    if (overlap(rel, irrel) || overlap(rel, shared) || overlap(irrel, shared)) {
        throw ContractError("neuron groups overlap");
    }
}

std::set<NeuronId> NeuronSets::all() const {
    std::set<NeuronId> out = rel;
    out.insert(irrel.begin(), irrel.end());
    out.insert(shared.begin(), shared.end());
    return out;
}

NeuronSets decouple(const Candidates& rel, const Candidates& irrel) {
    NeuronSets s;
    auto freq = [](const Candidates& c, const NeuronId& n) {
        const auto it = c.frequency.find(n);
        return it == c.frequency.end() ? std::size_t{0} : it->second;
    };
    for (const auto& n : rel.selected) {
        if (irrel.selected.contains(n)) {
            s.shared.insert(n);
            s.frequency[n] = freq(rel, n) + freq(irrel, n);
        } else {
            s.rel.insert(n);
            s.frequency[n] = freq(rel, n);
        }
    }
    for (const auto& n : irrel.selected) {
        if (!rel.selected.contains(n)) {
            s.irrel.insert(n);
            s.frequency[n] = freq(irrel, n);
        }
    }
    return s;
}

std::vector<LayerDensityRow> layer_density(const NeuronSets& sets, std::size_t n_layers) {
    std::vector<LayerDensityRow> rows(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        rows[l].layer = l;
    }
    auto tally = [&](const std::set<NeuronId>& group, std::size_t LayerDensityRow::*field) {
        for (const auto& n : group) {
            if (n.layer >= n_layers) {
                throw IndexError("neuron layer " + std::to_string(n.layer) + " outside model");
            }
            ++(rows[n.layer].*field);
        }
    };
    tally(sets.rel, &LayerDensityRow::rel);
    tally(sets.irrel, &LayerDensityRow::irrel);
    tally(sets.shared, &LayerDensityRow::shared);
    return rows;
}

std::vector<std::size_t> top_k_layers(const NeuronSets& sets, std::size_t n_layers, std::size_t k) {
    if (k > n_layers) {
        throw ConfigError("top_k_layers: k=" + std::to_string(k) + " exceeds " + std::to_string(n_layers) + " layers");
    }
    const auto rows = layer_density(sets, n_layers);
    std::vector<std::size_t> order(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        order[l] = l;
    }
    auto count = [&](std::size_t l) { return rows[l].irrel + rows[l].shared; };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return count(a) != count(b) ? count(a) > count(b) : a > b;
    });
    order.resize(k);
    return order;
}

void save_neuron_sets(const std::filesystem::path& path, const NeuronSets& sets) {
    sets.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "nrit-neurons v1\n";
    // Group names sort as irrel < rel < shared.
    for (const auto& [name, group] : {std::pair<const char*, const std::set<NeuronId>*>{"irrel", &sets.irrel},
                                      {"rel", &sets.rel},
                                      {"shared", &sets.shared}}) {
        for (const auto& n : *group) {
            const auto it = sets.frequency.find(n);
            out << name << ',' << n.layer << ',' << n.index << ',' << (it == sets.frequency.end() ? 0 : it->second)
                << '\n';
        }
    }
}

NeuronSets load_neuron_sets(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "nrit-neurons v1") {
        throw IoError(path.string() + ": missing 'nrit-neurons v1' header");
    }
    NeuronSets s;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        std::string group;
        std::string layer;
        std::string index;
        std::string freq;
        if (!std::getline(fields, group, ',') || !std::getline(fields, layer, ',') ||
            !std::getline(fields, index, ',') || !std::getline(fields, freq)) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected group,layer,index,frequency");
        }
        NeuronId n;
        try {
            n = {std::stoul(layer), std::stoul(index)};
            s.frequency[n] = std::stoul(freq);
        } catch (const std::exception&) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number");
        }
        if (group == "rel") {
            s.rel.insert(n);
        } else if (group == "irrel") {
            s.irrel.insert(n);
        } else if (group == "shared") {
            s.shared.insert(n);
        } else {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": unknown group '" + group + "'");
        }
    }
    s.validate();
    return s;
}

}  // namespace nrit
