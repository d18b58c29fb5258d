// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/data/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "nrit/data/prompts.hpp"
#include "nrit/errors.hpp"
#include "nrit/text.hpp"

namespace nrit {

namespace {

using ojson = nlohmann::ordered_json;

// Zero-score documents free of the answers, in retrieval (id) order.
std::vector<std::size_t> irrelevant_pool(const Corpus& corpus, const Query& q) {
    const auto scores = score_all(q.text, corpus);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (scores[i] == 0 && !contains_any_answer(corpus, i, q.gold_answers)) {
            pool.push_back(i);
        }
    }
    std::sort(pool.begin(), pool.end(),
              [&](std::size_t a, std::size_t b) { return corpus.doc(a).id < corpus.doc(b).id; });
    return pool;
}

void write_lines(const std::filesystem::path& path, const std::vector<ojson>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& r : rows) {
        out << r.dump() << '\n';
    }
}

std::vector<ojson> read_lines(const std::filesystem::path& path, std::initializer_list<std::string_view> fields) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::vector<ojson> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object() || j.size() != fields.size()) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": unexpected field set");
        }
        for (auto f : fields) {
            if (!j.contains(std::string(f))) {
                throw IoError(path.string() + ":" + std::to_string(line_no) + ": missing field '" + std::string(f) +
                              "'");
            }
        }
        rows.push_back(std::move(j));
    }
    return rows;
}

template <typename T>
std::vector<T> get_vector(const ojson& j) {
    return j.get<std::vector<T>>();
}

}  // namespace

std::string_view context_type_name(ContextType type) { return type == ContextType::rel ? "rel" : "irrel"; }

ContextType parse_context_type(std::string_view name) {
    if (name == "rel") {
        return ContextType::rel;
    }
    if (name == "irrel") {
        return ContextType::irrel;
    }
    throw ContractError("unknown context type '" + std::string(name) + "'");
}

void AttributionInstance::validate() const {
    if (choices[0] != "YES" || choices[1] != "NO") {
        throw ContractError("attribution instance '" + id + "' must offer choices [YES, NO]");
    }
    if (gold != 0 && gold != 1) {
        throw ContractError("attribution instance '" + id + "' has gold outside {0, 1}");
    }
}

QuerySplit split_queries(std::span<const Query> queries, std::size_t n_eval, std::uint64_t seed) {
    std::vector<std::size_t> order(queries.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    if (n_eval > queries.size()) {
        throw ConfigError("requested " + std::to_string(n_eval) + " evaluation queries but the world has " +
                          std::to_string(queries.size()));
    }
    QuerySplit split;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_eval ? split.eval : split.train).push_back(queries[order[i]]);
    }
    return split;
}

AttributionSets build_attribution_sets(const Corpus& corpus, std::span<const Query> queries, std::size_t n_per_type) {
    if (corpus.empty()) {
        throw ContractError("attribution sets need a nonempty corpus");
    }
    AttributionSets sets;
    std::size_t rotation = 0;
    for (const Query& q : queries) {
        if (sets.rel.size() >= n_per_type) {
            break;
        }
        const auto top = retrieve(q.text, corpus, 1, 1);
        if (top.empty() || top[0].score == 0 || !contains_any_answer(corpus, top[0].index, q.gold_answers)) {
            sets.warnings.push_back("query " + q.id + ": top-1 document lacks the answer; skipped");
            continue;
        }
        const auto pool = irrelevant_pool(corpus, q);
        if (pool.empty()) {
            sets.warnings.push_back("query " + q.id + ": no zero-score context; skipped");
            continue;
        }
        AttributionInstance rel;
        rel.id = q.id + "-rel";
        rel.question = q.text;
        rel.context = corpus.doc(top[0].index).text();
        rel.proposed_answer = q.gold_answers.front();
        rel.gold = 0;
        rel.type = ContextType::rel;

        AttributionInstance irrel = rel;
        irrel.id = q.id + "-irrel";
        irrel.context = corpus.doc(pool[rotation % pool.size()]).text();
        irrel.gold = 1;
        irrel.type = ContextType::irrel;
        ++rotation;

        sets.rel.push_back(std::move(rel));
        sets.irrel.push_back(std::move(irrel));
    }
    return sets;
}

DenoiseSet build_denoise_set(const Corpus& corpus, std::span<const Query> queries, std::size_t k) {
    if (k == 0) {
        throw ConfigError("denoising needs at least one document per prompt");
    }
    DenoiseSet set;
    std::size_t offset = 0;
    for (const Query& q : queries) {
        const auto pool = irrelevant_pool(corpus, q);
        if (pool.size() < k) {
            set.warnings.push_back("query " + q.id + ": only " + std::to_string(pool.size()) +
                                   " irrelevant documents; skipped");
            continue;
        }
        DenoiseInstance inst;
        inst.id = q.id + "-dn";
        inst.question = q.text;
        for (std::size_t j = 0; j < k; ++j) {
            inst.doc_ids.push_back(corpus.doc(pool[(offset + j) % pool.size()]).id);
        }
        offset += k;
        set.instances.push_back(std::move(inst));
    }
    return set;
}

std::string oracle_summary(std::span<const Document* const> docs, std::span<const Fact> support,
                           std::span<const std::string> gold_answers, std::size_t summary_cap) {
    std::vector<std::vector<std::string>> answers;
    for (const auto& a : gold_answers) {
        answers.push_back(normalized_words(a));
    }
    std::vector<std::string> picked;
    std::size_t used = 0;
    bool full = false;
    for (const Document* d : docs) {
        for (const auto& sentence : d->sentences) {
            const auto words = normalized_words(sentence);
            const auto has = [&](const std::string& w) { return std::find(words.begin(), words.end(), w) != words.end(); };
            bool relevant = false;
            for (const auto& a : answers) {
                relevant = relevant || contains_phrase(std::span<const std::string>(words), std::span<const std::string>(a));
            }
            for (const Fact& f : support) {
                relevant = relevant || (has(normalize(f.subject)) && has(normalize(f.relation)));
            }
            if (!relevant || std::find(picked.begin(), picked.end(), sentence) != picked.end()) {
                continue;
            }
            if (used + words.size() > summary_cap) {
                full = true;
                break;
            }
            used += words.size();
            picked.push_back(sentence);
        }
        if (full) {
            break;
        }
    }
    return picked.empty() ? std::string(kNoEvidenceSentence) : join(picked);
}

std::vector<char> answer_exclusion(const Corpus& corpus, std::span<const std::string> answers) {
    std::vector<char> out(corpus.size(), 0);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        out[i] = contains_any_answer(corpus, i, answers) ? 1 : 0;
    }
    return out;
}

std::vector<RSInstance> build_rs_set(const Corpus& corpus, std::span<const Fact> facts, std::span<const Query> queries,
                                     const RSOptions& options) {
    if (!(options.absent_fraction >= 0.0 && options.absent_fraction <= 1.0)) {
        throw ConfigError("rs absent fraction must be in [0, 1]");
    }
    std::vector<RSInstance> out;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const Query& q = queries[i];
        const auto lo = std::floor(static_cast<double>(i) * options.absent_fraction);
        const auto hi = std::floor(static_cast<double>(i + 1) * options.absent_fraction);
        const bool absent = hi > lo;
        std::vector<char> exclude;
        if (absent) {
            exclude = answer_exclusion(corpus, q.gold_answers);
        }
        const auto hits = retrieve(q.text, corpus, options.top_n, options.top_k, absent ? &exclude : nullptr);
        std::vector<const Document*> docs;
        RSInstance inst;
        inst.id = q.id + (absent ? "-rsx" : "-rs");
        inst.question = q.text;
        for (const auto& h : hits) {
            docs.push_back(&corpus.doc(h.index));
            inst.doc_ids.push_back(h.id);
        }
        std::vector<Fact> support;
        for (std::size_t f : q.support) {
            if (f >= facts.size()) {
                throw IndexError("query " + q.id + " references fact " + std::to_string(f));
            }
            support.push_back(facts[f]);
        }
        inst.summary = oracle_summary(docs, support, q.gold_answers, options.summary_cap);
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<QAInstance> build_qa_set(const Corpus& corpus, std::span<const Query> queries, std::size_t top_n,
                                     std::size_t top_k) {
    std::vector<QAInstance> out;
    for (const Query& q : queries) {
        const auto exclude = answer_exclusion(corpus, q.gold_answers);
        for (const bool removed : {false, true}) {
            const auto hits = retrieve(q.text, corpus, top_n, top_k, removed ? &exclude : nullptr);
            QAInstance inst;
            inst.id = q.id + (removed ? "-x" : "-n");
            inst.question = q.text;
            inst.gold_answers = q.gold_answers;
            for (const auto& h : hits) {
                inst.doc_ids.push_back(h.id);
                inst.answer_present = inst.answer_present || exclude[h.index];
            }
            out.push_back(std::move(inst));
        }
    }
    return out;
}

std::vector<std::string> document_texts(const Corpus& corpus, std::span<const std::string> doc_ids) {
    std::vector<std::string> out;
    out.reserve(doc_ids.size());
    for (const auto& id : doc_ids) {
        out.push_back(corpus.by_id(id).text());
    }
    return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const AttributionInstance> items) {
    std::vector<ojson> rows;
    for (const auto& it : items) {
        ojson j;
        j["id"] = it.id;
        j["question"] = it.question;
        j["context"] = it.context;
        j["proposed_answer"] = it.proposed_answer;
        j["choices"] = it.choices;
        j["gold"] = it.gold;
        j["type"] = context_type_name(it.type);
        rows.push_back(std::move(j));
    }
    write_lines(path, rows);
}

void save_jsonl(const std::filesystem::path& path, std::span<const DenoiseInstance> items) {
    std::vector<ojson> rows;
    for (const auto& it : items) {
        ojson j;
        j["id"] = it.id;
        j["question"] = it.question;
        j["doc_ids"] = it.doc_ids;
        rows.push_back(std::move(j));
    }
    write_lines(path, rows);
}

void save_jsonl(const std::filesystem::path& path, std::span<const RSInstance> items) {
    std::vector<ojson> rows;
    for (const auto& it : items) {
        ojson j;
        j["id"] = it.id;
        j["question"] = it.question;
        j["doc_ids"] = it.doc_ids;
        j["summary"] = it.summary;
        rows.push_back(std::move(j));
    }
    write_lines(path, rows);
}

void save_jsonl(const std::filesystem::path& path, std::span<const QAInstance> items) {
    std::vector<ojson> rows;
    for (const auto& it : items) {
        ojson j;
        j["id"] = it.id;
        j["question"] = it.question;
        j["gold_answers"] = it.gold_answers;
        j["doc_ids"] = it.doc_ids;
        j["answer_present"] = it.answer_present;
        rows.push_back(std::move(j));
    }
    write_lines(path, rows);
}

std::vector<AttributionInstance> load_attribution_jsonl(const std::filesystem::path& path) {
    std::vector<AttributionInstance> out;
    for (const auto& j : read_lines(path, {"id", "question", "context", "proposed_answer", "choices", "gold", "type"})) {
        AttributionInstance it;
        it.id = j["id"].get<std::string>();
        it.question = j["question"].get<std::string>();
        it.context = j["context"].get<std::string>();
        it.proposed_answer = j["proposed_answer"].get<std::string>();
        const auto choices = get_vector<std::string>(j["choices"]);
        if (choices.size() != 2) {
            throw IoError(path.string() + ": instance '" + it.id + "' needs exactly two choices");
        }
        it.choices = {choices[0], choices[1]};
        it.gold = j["gold"].get<int>();
        it.type = parse_context_type(j["type"].get<std::string>());
        it.validate();
        out.push_back(std::move(it));
    }
    return out;
}

std::vector<DenoiseInstance> load_denoise_jsonl(const std::filesystem::path& path) {
    std::vector<DenoiseInstance> out;
    for (const auto& j : read_lines(path, {"id", "question", "doc_ids"})) {
        out.push_back({j["id"].get<std::string>(), j["question"].get<std::string>(),
                       get_vector<std::string>(j["doc_ids"])});
    }
    return out;
}

std::vector<RSInstance> load_rs_jsonl(const std::filesystem::path& path) {
    std::vector<RSInstance> out;
    for (const auto& j : read_lines(path, {"id", "question", "doc_ids", "summary"})) {
        out.push_back({j["id"].get<std::string>(), j["question"].get<std::string>(),
                       get_vector<std::string>(j["doc_ids"]), j["summary"].get<std::string>()});
    }
    return out;
}

std::vector<QAInstance> load_qa_jsonl(const std::filesystem::path& path) {
    std::vector<QAInstance> out;
    for (const auto& j : read_lines(path, {"id", "question", "gold_answers", "doc_ids", "answer_present"})) {
        out.push_back({j["id"].get<std::string>(), j["question"].get<std::string>(),
                       get_vector<std::string>(j["gold_answers"]), get_vector<std::string>(j["doc_ids"]),
                       j["answer_present"].get<bool>()});
    }
    return out;
}

}  // namespace nrit
