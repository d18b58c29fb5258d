// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/harness/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "nrit/data/prompts.hpp"
#include "nrit/errors.hpp"
#include "nrit/model/checkpoint.hpp"

namespace nrit {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{Tokenizer::normalize_text(text)};
    std::string w;
    while (in >> w) {
        out.push_back(w);
    }
    return out;
}

bool contains_run(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > hay.size()) {
        return false;
    }
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void log(const RunOptions& o, const std::string& msg) {
    if (o.log) {
        o.log(msg);
    }
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw IoError(path.string() + ": line without '=': " + line);
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

int match_metric(std::string_view generated, std::span<const std::string> gold_answers) {
    if (gold_answers.empty()) {
        throw ContractError("match metric needs at least one gold answer");
    }
    const auto hay = words(generated);
    for (const auto& g : gold_answers) {
        if (contains_run(hay, words(g))) {
            return 1;
        }
    }
    return 0;
}

bool is_abstention(std::string_view generated) {
    const auto w = words(generated);
    return w.empty() || contains_run(w, words(kNoEvidenceSentence));
}

std::optional<double> SplitScore::accuracy() const {
    if (n == 0) {
        return std::nullopt;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

std::optional<double> SplitScore::abstain_rate() const {
    if (n == 0) {
        return std::nullopt;
    }
    return static_cast<double>(abstained) / static_cast<double>(n);
}

std::vector<int> qa_prompt_ids(const Tokenizer& tok, const Corpus& corpus, const QAInstance& inst) {
    PromptSlots slots;
    slots.question = inst.question;
    slots.documents = document_texts(corpus, inst.doc_ids);
    return tok.encode(render_prompt(PromptKind::qa, slots));
}

EvalResult evaluate(std::span<const QAInstance> qa, const Tokenizer& tok, const Corpus& corpus, const AnswerFn& answer,
                    EvalSplit split) {
    EvalResult r;
    for (const auto& inst : qa) {
        if ((split == EvalSplit::answer_present && !inst.answer_present) ||
            (split == EvalSplit::answer_absent && inst.answer_present)) {
            continue;
        }
        EvalRecord rec;
        rec.id = inst.id;
        rec.generated = answer(inst, qa_prompt_ids(tok, corpus, inst));
        rec.match = match_metric(rec.generated, inst.gold_answers);
        rec.abstained = is_abstention(rec.generated);
        rec.answer_present = inst.answer_present;
        for (SplitScore* s : {&r.all, inst.answer_present ? &r.present : &r.absent}) {
            ++s->n;
            s->correct += static_cast<std::size_t>(rec.match);
            s->abstained += rec.abstained ? 1 : 0;
        }
        r.records.push_back(std::move(rec));
    }
    return r;
}

EvalResult evaluate(const MicroTransformer& model, std::span<const QAInstance> qa, const Tokenizer& tok,
                    const Corpus& corpus, std::size_t max_new, EvalSplit split) {
    return evaluate(
        qa, tok, corpus,
        [&](const QAInstance&, std::span<const int> prompt) {
            return tok.decode(generate_greedy(model, prompt, max_new));
        },
        split);
}

Tokenizer build_tokenizer(const World& world, std::size_t top_k) {
    auto texts = template_texts();
    std::string numbers;
    for (std::size_t i = 1; i <= top_k; ++i) {
        numbers += std::to_string(i) + " ";
    }
    texts.push_back(numbers);
    for (const auto& d : world.corpus.docs()) {
        texts.push_back(d.text());
    }
    for (const auto& q : world.queries) {
        texts.push_back(q.text);
        for (const auto& a : q.gold_answers) {
            texts.push_back(a);
        }
    }
    return Tokenizer::build(texts);
}

Prepared prepare(const PipelineConfig& config) {
    config.validate();
    Prepared p;
    p.world = generate_world(config.world);
    p.split = split_queries(p.world.queries, config.n_eval_queries, config.split_seed);
    p.tok = build_tokenizer(p.world, std::max(config.top_k, config.denoise_k));
    const auto& corpus = p.world.corpus;

    p.attribution = build_attribution_sets(corpus, p.split.train, std::numeric_limits<std::size_t>::max());
    p.attribution_heldout = build_attribution_sets(corpus, p.split.eval, std::numeric_limits<std::size_t>::max());
    for (const auto& w : p.attribution.warnings) {
        p.warnings.push_back("attribution: " + w);
    }

    if (config.denoise_prompt == DenoisePrompt::irrelevant) {
        auto train = build_denoise_set(corpus, p.split.train, config.denoise_k);
        auto held = build_denoise_set(corpus, p.split.eval, config.denoise_k);
        p.denoise_train = std::move(train.instances);
        p.denoise_heldout = std::move(held.instances);
        for (const auto& w : train.warnings) {
            p.warnings.push_back("denoise: " + w);
        }
    } else {
        auto relevant = [&](std::span<const Query> qs) {
            std::vector<DenoiseInstance> out;
            for (const auto& q : qs) {
                DenoiseInstance d;
                d.id = q.id + "-dn";
                d.question = q.text;
                for (const auto& s : retrieve(q.text, corpus, config.top_n, config.denoise_k)) {
                    d.doc_ids.push_back(s.id);
                }
                out.push_back(std::move(d));
            }
            return out;
        };
        p.denoise_train = relevant(p.split.train);
        p.denoise_heldout = relevant(p.split.eval);
    }
    if (config.denoise_heldout > 0 && p.denoise_heldout.size() > config.denoise_heldout) {
        p.denoise_heldout.resize(config.denoise_heldout);
    }

    RSOptions rs;
    rs.top_n = config.top_n;
    rs.top_k = config.top_k;
    rs.summary_cap = config.summary_cap;
    rs.absent_fraction = config.rs_absent_fraction;
    p.rs = build_rs_set(corpus, p.world.facts, p.split.train, rs);
    p.qa_eval = build_qa_set(corpus, p.split.eval, config.top_n, config.top_k);
    return p;
}

WarmupData warmup_examples(const Prepared& prep, const PipelineConfig& config) {
    WarmupData d;
    const auto& tok = prep.tok;
    if (config.warmup.lm) {
        for (const auto& doc : prep.world.corpus.docs()) {
            const auto body = tok.encode(doc.text() + " <eot>");
            d.examples.push_back(TrainingExample::completion({Tokenizer::kBos}, body));
            ++d.n_lm;
        }
    }
    if (config.warmup.binary) {
        for (const auto* set : {&prep.attribution.rel, &prep.attribution.irrel}) {
            for (const auto& inst : *set) {
                const auto enc = encode_attribution(tok, inst);
                const int target[] = {enc.gold_token};
                d.examples.push_back(TrainingExample::completion(enc.full_ids, target));
                ++d.n_binary;
            }
        }
    }
    if (config.warmup.qa) {
        const auto qa = build_qa_set(prep.world.corpus, prep.split.train, config.top_n, config.top_k);
        for (const auto& inst : qa) {
            if (!inst.answer_present || !inst.id.ends_with("-n")) {
                continue;
            }
            auto target = tok.encode(inst.gold_answers.front());
            target.push_back(Tokenizer::kEot);
            d.examples.push_back(TrainingExample::completion(qa_prompt_ids(tok, prep.world.corpus, inst), target));
            ++d.n_qa;
        }
    }
    return d;
}

double mean_gold_probability(const MicroTransformer& model, const Tokenizer& tok,
                             std::span<const AttributionInstance> instances, ChoiceNormalization norm) {
    if (instances.empty()) {
        throw ConfigError("no instances for the gold-probability measurement");
    }
    static constexpr int kChoices[] = {Tokenizer::kYes, Tokenizer::kNo};
    double sum = 0.0;
    for (const auto& inst : instances) {
        const auto enc = encode_attribution(tok, inst);
        sum += choice_probability(model, enc.full_ids, enc.full_ids.size() - 1, enc.gold_token, norm, kChoices);
    }
    return sum / static_cast<double>(instances.size());
}

bool EvalReport::operator==(const EvalReport& o) const {
    auto same_density = [](const std::vector<LayerDensityRow>& a, const std::vector<LayerDensityRow>& b) {
        if (a.size() != b.size()) {
            return false;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].layer != b[i].layer || a[i].rel != b[i].rel || a[i].irrel != b[i].irrel ||
                a[i].shared != b[i].shared) {
                return false;
            }
        }
        return true;
    };
    return config_hash == o.config_hash && ablation == o.ablation && baseline_all == o.baseline_all &&
           baseline_present == o.baseline_present && baseline_absent == o.baseline_absent &&
           tuned_all == o.tuned_all && tuned_present == o.tuned_present && tuned_absent == o.tuned_absent &&
           trainable == o.trainable && total == o.total && fraction == o.fraction &&
           rel_candidates == o.rel_candidates && irrel_candidates == o.irrel_candidates && n_rel == o.n_rel &&
           n_irrel == o.n_irrel && n_shared == o.n_shared && top_layers == o.top_layers &&
           same_density(density, o.density) && warmup_p_gold == o.warmup_p_gold && eot_before == o.eot_before &&
           eot_after == o.eot_after;
}

namespace {

void put_split(std::ostream& out, const std::string& prefix, const SplitScore& s) {
    out << prefix << ".n=" << s.n << '\n';
    out << prefix << ".correct=" << s.correct << '\n';
    out << prefix << ".abstained=" << s.abstained << '\n';
    const auto acc = s.accuracy();
    const auto abs = s.abstain_rate();
    out << prefix << ".accuracy=" << (acc ? fmt(*acc) : "absent") << '\n';
    out << prefix << ".abstain_rate=" << (abs ? fmt(*abs) : "absent") << '\n';
}

std::size_t get_size(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw IoError("eval report lacks " + key);
    }
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw IoError("eval report key " + key + ": bad integer");
    }
}

double get_double(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw IoError("eval report lacks " + key);
    }
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw IoError("eval report key " + key + ": bad number");
    }
}

SplitScore get_split(const std::map<std::string, std::string>& kv, const std::string& prefix) {
    SplitScore s;
    s.n = get_size(kv, prefix + ".n");
    s.correct = get_size(kv, prefix + ".correct");
    s.abstained = get_size(kv, prefix + ".abstained");
    return s;
}

}  // namespace

void save_eval_report(const fs::path& path, const EvalReport& r) {
    std::ostringstream out;
    out << "config_hash=" << r.config_hash << '\n';
    out << "ablation=" << ablation_name(r.ablation) << '\n';
    put_split(out, "baseline.all", r.baseline_all);
    put_split(out, "baseline.answer_present", r.baseline_present);
    put_split(out, "baseline.answer_absent", r.baseline_absent);
    put_split(out, "tuned.all", r.tuned_all);
    put_split(out, "tuned.answer_present", r.tuned_present);
    put_split(out, "tuned.answer_absent", r.tuned_absent);
    out << "trainable=" << r.trainable << '\n';
    out << "total=" << r.total << '\n';
    out << "fraction=" << fmt(r.fraction) << '\n';
    out << "candidates.rel=" << r.rel_candidates << '\n';
    out << "candidates.irrel=" << r.irrel_candidates << '\n';
    out << "neurons.rel=" << r.n_rel << '\n';
    out << "neurons.irrel=" << r.n_irrel << '\n';
    out << "neurons.shared=" << r.n_shared << '\n';
    out << "top_layers=";
    for (std::size_t i = 0; i < r.top_layers.size(); ++i) {
        out << (i ? "," : "") << r.top_layers[i];
    }
    out << '\n';
    out << "layers=" << r.density.size() << '\n';
    for (const auto& row : r.density) {
        out << "density." << row.layer << "=" << row.rel << ',' << row.irrel << ',' << row.shared << '\n';
    }
    out << "warmup.p_gold=" << fmt(r.warmup_p_gold) << '\n';
    out << "stage1.eot_before=" << (r.eot_before ? fmt(*r.eot_before) : "absent") << '\n';
    out << "stage1.eot_after=" << (r.eot_after ? fmt(*r.eot_after) : "absent") << '\n';
    write_text(path, out.str());
}

EvalReport load_eval_report(const fs::path& path) {
    const auto kv = read_key_values(path);
    EvalReport r;
    r.config_hash = kv.count("config_hash") ? kv.at("config_hash") : "";
    r.ablation = parse_ablation(kv.count("ablation") ? kv.at("ablation") : "none");
    r.baseline_all = get_split(kv, "baseline.all");
    r.baseline_present = get_split(kv, "baseline.answer_present");
    r.baseline_absent = get_split(kv, "baseline.answer_absent");
    r.tuned_all = get_split(kv, "tuned.all");
    r.tuned_present = get_split(kv, "tuned.answer_present");
    r.tuned_absent = get_split(kv, "tuned.answer_absent");
    r.trainable = get_size(kv, "trainable");
    r.total = get_size(kv, "total");
    r.fraction = get_double(kv, "fraction");
    r.rel_candidates = get_size(kv, "candidates.rel");
    r.irrel_candidates = get_size(kv, "candidates.irrel");
    r.n_rel = get_size(kv, "neurons.rel");
    r.n_irrel = get_size(kv, "neurons.irrel");
    r.n_shared = get_size(kv, "neurons.shared");
    {
        std::istringstream in(kv.count("top_layers") ? kv.at("top_layers") : "");
        std::string item;
        while (std::getline(in, item, ',')) {
            if (!item.empty()) {
                r.top_layers.push_back(static_cast<std::size_t>(std::stoull(item)));
            }
        }
    }
    const std::size_t layers = get_size(kv, "layers");
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string key = "density." + std::to_string(l);
        if (!kv.count(key)) {
            throw IoError("eval report lacks " + key);
        }
        LayerDensityRow row;
        row.layer = l;
        char c1 = 0;
        char c2 = 0;
        std::istringstream in(kv.at(key));
        if (!(in >> row.rel >> c1 >> row.irrel >> c2 >> row.shared) || c1 != ',' || c2 != ',') {
            throw IoError("eval report key " + key + ": expected rel,irrel,shared");
        }
        r.density.push_back(row);
    }
    r.warmup_p_gold = get_double(kv, "warmup.p_gold");
    for (auto [key, field] : {std::pair{"stage1.eot_before", &r.eot_before}, {"stage1.eot_after", &r.eot_after}}) {
        const auto it = kv.find(key);
        if (it != kv.end() && it->second != "absent") {
            *field = get_double(kv, key);
        }
    }
    return r;
}

void save_density_csv(const fs::path& path, std::span<const LayerDensityRow> rows) {
    std::ostringstream out;
    out << "layer,rel,irrel,shared,irrel_plus_shared\n";
    for (const auto& r : rows) {
        out << r.layer << ',' << r.rel << ',' << r.irrel << ',' << r.shared << ',' << r.irrel + r.shared << '\n';
    }
    write_text(path, out.str());
}

void save_candidates(const fs::path& path, const Candidates& rel, const Candidates& irrel) {
    std::ostringstream out;
    out << "nrit-candidates v1\n";
    for (const auto& [name, c] : {std::pair<const char*, const Candidates*>{"irrel", &irrel}, {"rel", &rel}}) {
        for (const auto& n : c->selected) {
            out << name << ',' << n.layer << ',' << n.index << ',' << c->frequency.at(n) << '\n';
        }
    }
    write_text(path, out.str());
}

std::pair<Candidates, Candidates> load_candidates(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "nrit-candidates v1") {
        throw IoError(path.string() + ": missing 'nrit-candidates v1' header");
    }
    Candidates rel;
    Candidates irrel;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream f(line);
        std::string group;
        std::string a;
        std::string b;
        std::string c;
        if (!std::getline(f, group, ',') || !std::getline(f, a, ',') || !std::getline(f, b, ',') ||
            !std::getline(f, c)) {
            throw IoError(path.string() + ": bad line '" + line + "'");
        }
        Candidates* target = group == "rel" ? &rel : group == "irrel" ? &irrel : nullptr;
        if (target == nullptr) {
            throw IoError(path.string() + ": unknown group '" + group + "'");
        }
        const NeuronId n{std::stoul(a), std::stoul(b)};
        target->selected.insert(n);
        target->frequency[n] = std::stoul(c);
    }
    return {rel, irrel};
}

void check_set_algebra(const NeuronSets& sets, const Candidates& rel, const Candidates& irrel) {
    sets.validate();
    std::set<NeuronId> r = sets.rel;
    r.insert(sets.shared.begin(), sets.shared.end());
    std::set<NeuronId> i = sets.irrel;
    i.insert(sets.shared.begin(), sets.shared.end());
    if (r != rel.selected) {
        throw ContractError("rel + shared does not rebuild the relevant candidates");
    }
    if (i != irrel.selected) {
        throw ContractError("irrel + shared does not rebuild the irrelevant candidates");
    }
}

std::string config_hash(const PipelineConfig& config) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : config_to_text(config)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

template <typename F>
auto guarded(std::string_view stage, const RunDirs& dirs, F&& f) {
    auto fail = [&](const std::string& what) {
        std::error_code ec;
        fs::create_directories(dirs.out, ec);
        std::ofstream(dirs.out / "FAILED") << "stage=" << stage << "\nerror=" << what << '\n';
        return "stage " + std::string(stage) + ": " + what;
    };
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(fail(e.what()));
    } catch (const NumericError& e) {
        throw NumericError(fail(e.what()));
    } catch (const std::exception& e) {
        throw StageError(fail(e.what()));
    }
}

ModelConfig model_config(const PipelineConfig& config, const Tokenizer& tok) {
    ModelConfig m = config.model;
    m.vocab_size = tok.size();
    return m;
}

MicroTransformer load_model(const PipelineConfig& config, const Tokenizer& tok, const fs::path& path) {
    if (!fs::exists(path)) {
        throw StageError("missing checkpoint " + path.string() + " (run the earlier stage first)");
    }
    MicroTransformer m(model_config(config, tok));
    m.load_parameters(load_checkpoint(path));
    return m;
}

void save_model(const MicroTransformer& m, const fs::path& path) {
    fs::create_directories(path.parent_path());
    save_checkpoint(path, m.parameters());
}

std::vector<std::size_t> load_layers(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::vector<std::size_t> out;
    std::size_t l = 0;
    while (in >> l) {
        out.push_back(l);
    }
    return out;
}

fs::path stage1_source(const PipelineConfig& config, const RunDirs& dirs) {
    if (config.ablation == Ablation::no_denoise) {
        return dirs.shared / "warmup" / "model.nrit";
    }
    if (fs::exists(dirs.out / "stage1" / "model.nrit")) {
        return dirs.out / "stage1" / "model.nrit";
    }
    return dirs.shared / "stage1" / "model.nrit";
}

void save_records(const fs::path& path, std::span<const EvalRecord> records) {
    std::string text;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["generated"] = r.generated;
        j["match"] = r.match;
        j["abstained"] = r.abstained;
        j["answer_present"] = r.answer_present;
        text += j.dump() + "\n";
    }
    write_text(path, text);
}

EvalResult load_records(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    EvalResult r;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        EvalRecord rec;
        rec.id = j.at("id").get<std::string>();
        rec.generated = j.at("generated").get<std::string>();
        rec.match = j.at("match").get<int>();
        rec.abstained = j.at("abstained").get<bool>();
        rec.answer_present = j.at("answer_present").get<bool>();
        for (SplitScore* s : {&r.all, rec.answer_present ? &r.present : &r.absent}) {
            ++s->n;
            s->correct += static_cast<std::size_t>(rec.match);
            s->abstained += rec.abstained ? 1 : 0;
        }
        r.records.push_back(std::move(rec));
    }
    return r;
}

void write_config(const PipelineConfig& config, const fs::path& path) {
    write_text(path, config_to_text(config));
}

}  // namespace

void stage_gen_world(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options) {
    guarded("gen-world", dirs, [&] {
        const Prepared p = prepare(config);
        const fs::path w = dirs.out / "world";
        fs::create_directories(w);
        write_config(config, dirs.out / "config.txt");
        p.world.corpus.save_tsv(w / "corpus.tsv");
        std::string queries;
        for (const auto& q : p.world.queries) {
            nlohmann::ordered_json j;
            j["id"] = q.id;
            j["text"] = q.text;
            j["gold_answers"] = q.gold_answers;
            j["multi_hop"] = q.multi_hop;
            queries += j.dump() + "\n";
        }
        write_text(w / "queries.jsonl", queries);
        std::string eval_ids;
        for (const auto& q : p.split.eval) {
            eval_ids += q.id + "\n";
        }
        write_text(w / "eval_queries.txt", eval_ids);
        p.tok.save(dirs.out / "tokenizer.txt");
        const fs::path d = dirs.out / "data";
        fs::create_directories(d);
        save_jsonl(d / "attribution_rel.jsonl", p.attribution.rel);
        save_jsonl(d / "attribution_irrel.jsonl", p.attribution.irrel);
        save_jsonl(d / "denoise_train.jsonl", p.denoise_train);
        save_jsonl(d / "denoise_heldout.jsonl", p.denoise_heldout);
        save_jsonl(d / "rs.jsonl", p.rs);
        save_jsonl(d / "qa_eval.jsonl", p.qa_eval);
        std::string warnings;
        for (const auto& x : p.warnings) {
            warnings += x + "\n";
        }
        write_text(w / "warnings.txt", warnings);
        log(options, "gen-world: " + std::to_string(p.world.corpus.size()) + " documents, " +
                         std::to_string(p.world.queries.size()) + " queries, vocabulary " +
                         std::to_string(p.tok.size()));
    });
}

void stage_warmup(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options) {
    guarded("warmup", dirs, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const Prepared p = prepare(config);
        const WarmupData data = warmup_examples(p, config);
        MicroTransformer model(model_config(config, p.tok));
        TrainConfig tc;
        tc.lr = config.warmup.lr;
        tc.epochs = config.warmup.epochs;
        tc.batch = config.warmup.batch;
        tc.seed = config.warmup.seed;
        tc.weight_decay = config.warmup.weight_decay;
        log(options, "warmup: " + std::to_string(data.examples.size()) + " examples (lm " +
                         std::to_string(data.n_lm) + ", binary " + std::to_string(data.n_binary) + ", qa " +
                         std::to_string(data.n_qa) + "), " + std::to_string(tc.epochs) + " epochs");
        TrainResult r;
        if (tc.epochs > 0) {
            r = train_masked(model, data.examples, nullptr, tc);
        }
        save_model(model, dirs.out / "warmup" / "model.nrit");

        std::vector<AttributionInstance> held = p.attribution_heldout.rel;
        held.insert(held.end(), p.attribution_heldout.irrel.begin(), p.attribution_heldout.irrel.end());
        std::ostringstream rep;
        rep << "examples=" << data.examples.size() << "\nlm=" << data.n_lm << "\nbinary=" << data.n_binary
            << "\nqa=" << data.n_qa << "\nepochs=" << tc.epochs << "\nlr=" << fmt(tc.lr) << "\nbatch=" << tc.batch
            << "\nseed=" << tc.seed << '\n';
        for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
            rep << "epoch." << e + 1 << ".loss=" << fmt(r.epoch_loss[e]) << '\n';
            log(options, "warmup: epoch " + std::to_string(e + 1) + " loss " + fmt(r.epoch_loss[e]));
        }
        if (!held.empty()) {
            const double pc = mean_gold_probability(model, p.tok, held, ChoiceNormalization::choices_only);
            const double pf = mean_gold_probability(model, p.tok, held, ChoiceNormalization::full_vocab);
            rep << "heldout.p_gold=" << fmt(pc) << "\nheldout.p_gold_full_vocab=" << fmt(pf) << '\n';
            log(options, "warmup: held-out P(gold) " + fmt(pc));
        }
        rep << "wall_seconds=" << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
            << '\n';
        write_text(dirs.out / "warmup" / "report.txt", rep.str());
    });
}

void stage_attribute(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options) {
    guarded("attribute", dirs, [&] {
        const Prepared p = prepare(config);
        const MicroTransformer model = load_model(config, p.tok, dirs.shared / "warmup" / "model.nrit");
        const std::size_t n = std::min(config.attribution_per_type, p.attribution.rel.size());
        if (n == 0) {
            throw ConfigError("no attribution instances could be built");
        }
        std::vector<AttributionInstance> instances(p.attribution.rel.begin(),
                                                   p.attribution.rel.begin() + static_cast<std::ptrdiff_t>(n));
        instances.insert(instances.end(), p.attribution.irrel.begin(),
                         p.attribution.irrel.begin() + static_cast<std::ptrdiff_t>(n));
        AttributionRunOptions ro;
        ro.threads = config.ig_threads;
        ro.progress = [&](std::size_t done, std::size_t total) {
            if (done % 20 == 0 || done == total) {
                log(options, "attribute: " + std::to_string(done) + "/" + std::to_string(total));
            }
        };
        const auto matrix = compute_attribution_matrix(model, p.tok, instances, config.ig, ro);
        fs::create_directories(dirs.out / "attribution");
        matrix.save(dirs.out / "attribution" / "matrix.nrit");
    });
}

void stage_mine(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options) {
    guarded("mine", dirs, [&] {
        const auto matrix = AttributionMatrix::load(dirs.shared / "attribution" / "matrix.nrit");
        const auto rel = mine_candidates(matrix, matrix.rows_of(ContextType::rel), config.mining);
        const auto irrel = mine_candidates(matrix, matrix.rows_of(ContextType::irrel), config.mining);
        const NeuronSets sets = decouple(rel, irrel);
        check_set_algebra(sets, rel, irrel);
        save_candidates(dirs.out / "candidates.txt", rel, irrel);
        save_neuron_sets(dirs.out / "neurons.txt", sets);
        save_density_csv(dirs.out / "density.csv", layer_density(sets, config.model.n_layers));
        const auto layers = top_k_layers(sets, config.model.n_layers, config.top_layers);
        std::string text;
        for (std::size_t l : layers) {
            text += std::to_string(l) + "\n";
        }
        write_text(dirs.out / "layers.txt", text);
        log(options, "mine: candidates rel " + std::to_string(rel.selected.size()) + ", irrel " +
                         std::to_string(irrel.selected.size()) + "; sets rel " + std::to_string(sets.rel.size()) +
                         ", irrel " + std::to_string(sets.irrel.size()) + ", shared " +
                         std::to_string(sets.shared.size()));
    });
}

void stage_denoise(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options) {
    guarded("denoise", dirs, [&] {
        if (config.ablation == Ablation::no_denoise) {
            log(options, "denoise: skipped (no-denoise ablation)");
            return;
        }
        const Prepared p = prepare(config);
        MicroTransformer model = load_model(config, p.tok, dirs.shared / "warmup" / "model.nrit");
        const NeuronSets sets = load_neuron_sets(dirs.shared / "neurons.txt");
        const auto train = denoise_examples(p.tok, p.world.corpus, p.denoise_train);
        std::vector<std::vector<int>> held;
        for (const auto& d : p.denoise_heldout) {
            held.push_back(denoise_prompt_ids(p.tok, p.world.corpus, d));
        }
        const fs::path s1 = dirs.out / "stage1";
        fs::create_directories(s1);
        write_config(config, s1 / "config.txt");
        save_mask_file(s1 / "mask.txt", NeuronSets{{}, sets.irrel, {}, [&] {
                                                       std::map<NeuronId, std::size_t> f;
                                                       for (const auto& n : sets.irrel) {
                                                           f[n] = sets.frequency.at(n);
                                                       }
                                                       return f;
                                                   }()},
                       {});
        const auto rep = stage1_denoise(model, sets.irrel, {train, held}, config.stage1);
        save_model(model, s1 / "model.nrit");
        save_training_report(s1 / "report.txt", rep);
        log(options, "denoise: held-out P(EOT) " + fmt(rep.eot_before) + " -> " + fmt(rep.eot_after));
    });
}

void stage_tune(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options) {
    guarded("tune", dirs, [&] {
        const Prepared p = prepare(config);
        MicroTransformer model = load_model(config, p.tok, stage1_source(config, dirs));
        NeuronSets sets = load_neuron_sets(dirs.shared / "neurons.txt");
        std::vector<std::size_t> layers = load_layers(dirs.shared / "layers.txt");
        Stage2Options opt = config.stage2_options;
        opt.use_neurons = config.ablation != Ablation::no_neurons;
        opt.use_layers = config.ablation != Ablation::no_layers;
        const auto train = rs_examples(p.tok, p.world.corpus, p.rs);
        const fs::path s2 = dirs.out / "stage2";
        fs::create_directories(s2);
        write_config(config, s2 / "config.txt");
        save_mask_file(s2 / "mask.txt", opt.use_neurons ? sets : NeuronSets{},
                       opt.use_layers ? layers : std::vector<std::size_t>{});
        const auto rep = stage2_noise_filter(model, sets, layers, train, config.stage2, opt);
        save_model(model, s2 / "model.nrit");
        save_training_report(s2 / "report.txt", rep);
        log(options, "tune: " + std::to_string(rep.trainable) + " of " + std::to_string(rep.total) +
                         " parameters trainable (" + fmt(rep.fraction) + ")");
    });
}

EvalReport stage_eval(const PipelineConfig& config, const RunDirs& dirs, const RunOptions& options) {
    return guarded("eval", dirs, [&] {
        const Prepared p = prepare(config);
        const fs::path ev = dirs.out / "eval";
        fs::create_directories(ev);
        EvalResult base;
        const fs::path shared_base = dirs.shared / "eval" / "baseline.jsonl";
        if (dirs.out != dirs.shared && fs::exists(shared_base)) {
            base = load_records(shared_base);
        } else {
            const MicroTransformer warm = load_model(config, p.tok, dirs.shared / "warmup" / "model.nrit");
            base = evaluate(warm, p.qa_eval, p.tok, p.world.corpus, config.eval_max_new);
        }
        save_records(ev / "baseline.jsonl", base.records);
        const MicroTransformer tuned = load_model(config, p.tok, dirs.out / "stage2" / "model.nrit");
        const EvalResult t = evaluate(tuned, p.qa_eval, p.tok, p.world.corpus, config.eval_max_new);
        save_records(ev / "tuned.jsonl", t.records);

        EvalReport r;
        r.config_hash = config_hash(config);
        r.ablation = config.ablation;
        r.baseline_all = base.all;
        r.baseline_present = base.present;
        r.baseline_absent = base.absent;
        r.tuned_all = t.all;
        r.tuned_present = t.present;
        r.tuned_absent = t.absent;
        const auto s2 = load_training_report(dirs.out / "stage2" / "report.txt");
        r.trainable = s2.trainable;
        r.total = s2.total;
        r.fraction = s2.fraction;
        const auto [rel, irrel] = load_candidates(dirs.shared / "candidates.txt");
        r.rel_candidates = rel.selected.size();
        r.irrel_candidates = irrel.selected.size();
        const NeuronSets sets = load_neuron_sets(dirs.shared / "neurons.txt");
        r.n_rel = sets.rel.size();
        r.n_irrel = sets.irrel.size();
        r.n_shared = sets.shared.size();
        r.top_layers = load_layers(dirs.shared / "layers.txt");
        r.density = layer_density(sets, config.model.n_layers);
        const auto warm = read_key_values(dirs.shared / "warmup" / "report.txt");
        r.warmup_p_gold = warm.count("heldout.p_gold") ? std::stod(warm.at("heldout.p_gold")) : 0.0;
        if (config.ablation != Ablation::no_denoise) {
            const fs::path s1 = fs::exists(dirs.out / "stage1" / "report.txt") ? dirs.out / "stage1" / "report.txt"
                                                                               : dirs.shared / "stage1" / "report.txt";
            const auto rep1 = load_training_report(s1);
            r.eot_before = rep1.eot_before;
            r.eot_after = rep1.eot_after;
        }
        save_eval_report(ev / "report.txt", r);
        auto pct = [](std::optional<double> v) { return v ? fmt(*v) : std::string("absent"); };
        log(options, "eval: answer-present accuracy " + pct(r.baseline_present.accuracy()) + " -> " +
                         pct(r.tuned_present.accuracy()) + ", answer-absent abstain rate " +
                         pct(r.baseline_absent.abstain_rate()) + " -> " + pct(r.tuned_absent.abstain_rate()));
        return r;
    });
}

EvalReport run_pipeline(const PipelineConfig& config, const fs::path& out, const RunOptions& options) {
    const RunDirs dirs(out);
    fs::create_directories(out);
    fs::remove(out / "FAILED");
    stage_gen_world(config, dirs, options);
    stage_warmup(config, dirs, options);
    stage_attribute(config, dirs, options);
    stage_mine(config, dirs, options);
    stage_denoise(config, dirs, options);
    stage_tune(config, dirs, options);
    return stage_eval(config, dirs, options);
}

EvalReport run_ablation(const PipelineConfig& config, Ablation ablation, const fs::path& out,
                        const RunOptions& options) {
    PipelineConfig c = config;
    c.ablation = ablation;
    const RunDirs dirs(out / ("ablate-" + std::string(ablation_name(ablation))), out);
    fs::create_directories(dirs.out);
    write_config(c, dirs.out / "config.txt");
    stage_tune(c, dirs, options);
    return stage_eval(c, dirs, options);
}

std::string summarize_reports(const fs::path& out) {
    std::vector<fs::path> reports;
    if (fs::exists(out / "eval" / "report.txt")) {
        reports.push_back(out / "eval" / "report.txt");
    }
    if (fs::exists(out)) {
        std::vector<fs::path> sub;
        for (const auto& e : fs::directory_iterator(out)) {
            if (e.is_directory() && e.path().filename().string().starts_with("ablate-") &&
                fs::exists(e.path() / "eval" / "report.txt")) {
                sub.push_back(e.path() / "eval" / "report.txt");
            }
        }
        std::sort(sub.begin(), sub.end());
        reports.insert(reports.end(), sub.begin(), sub.end());
    }
    if (reports.empty()) {
        throw StageError("no eval reports under " + out.string());
    }
    auto num = [](std::optional<double> v) {
        if (!v) {
            return std::string("absent");
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *v);
        return std::string(buf);
    };
    std::ostringstream t;
    t << "run,present_acc_base,present_acc_tuned,absent_abstain_base,absent_abstain_tuned,all_acc_base,"
         "all_acc_tuned,trainable_fraction\n";
    for (const auto& path : reports) {
        const auto r = load_eval_report(path);
        t << (r.ablation == Ablation::none ? std::string("full") : std::string(ablation_name(r.ablation))) << ','
          << num(r.baseline_present.accuracy()) << ',' << num(r.tuned_present.accuracy()) << ','
          << num(r.baseline_absent.abstain_rate()) << ',' << num(r.tuned_absent.abstain_rate()) << ','
          << num(r.baseline_all.accuracy()) << ',' << num(r.tuned_all.accuracy()) << ',' << num(r.fraction) << '\n';
    }
    return t.str();
}

}  // namespace nrit
