// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/data/world.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

#include "nrit/data/prompts.hpp"
#include "nrit/errors.hpp"
#include "nrit/text.hpp"

namespace nrit {

namespace {

constexpr std::string_view kRelationPool[] = {
    "capital", "color",  "founder", "mayor",  "emblem", "anthem", "currency", "language",
    "patron",  "harbor", "mascot",  "motto",  "crop",   "guild",  "dialect",  "treaty",
};

constexpr std::string_view kBridgePool[] = {"neighbor", "ally", "twin", "sister"};

constexpr std::string_view kFillerAdjectives[] = {"quiet", "bright", "old", "gentle", "narrow",
                                                  "heavy", "silver", "broad", "hollow", "warm"};
constexpr std::string_view kFillerNouns[] = {"garden", "lantern", "meadow",  "bridge", "window",
                                             "orchard", "cellar", "chimney", "pebble", "wagon"};
constexpr std::string_view kFillerVerbs[] = {"rests", "glows", "waits", "leans", "shines", "sways", "hums", "sleeps"};
constexpr std::string_view kFillerPreps[] = {"near", "under", "beside", "behind", "across"};

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[pick(rng, i)]);
    }
}

std::string substitute(std::string text, std::string_view key, std::string_view value) {
    const std::string slot = "{" + std::string(key) + "}";
    for (auto pos = text.find(slot); pos != std::string::npos; pos = text.find(slot, pos + value.size())) {
        text.replace(pos, slot.size(), value);
    }
    return text;
}

void require_slots(const std::string& tmpl, std::initializer_list<std::string_view> keys, std::string_view what) {
    for (auto key : keys) {
        if (tmpl.find("{" + std::string(key) + "}") == std::string::npos) {
            throw ConfigError(std::string(what) + " template lacks {" + std::string(key) + "}");
        }
    }
}

std::set<std::string> reserved_words() {
    std::set<std::string> out(stopwords().begin(), stopwords().end());
    for (auto w : kRelationPool) out.emplace(w);
    for (auto w : kBridgePool) out.emplace(w);
    for (auto w : kFillerAdjectives) out.emplace(w);
    for (auto w : kFillerNouns) out.emplace(w);
    for (auto w : kFillerVerbs) out.emplace(w);
    for (auto w : kFillerPreps) out.emplace(w);
    for (const auto& t : template_texts()) {
        for (auto& w : normalized_words(t)) {
            out.insert(std::move(w));
        }
    }
    out.insert("yes");
    out.insert("no");
    return out;
}

// Unique pronounceable names such as "ravoki" or "tesun".
std::vector<std::string> make_names(std::size_t n, std::mt19937_64& rng, std::set<std::string>& taken) {
    std::vector<std::string> out;
    std::size_t attempts = 0;
    while (out.size() < n) {
        if (++attempts > 1000 * (n + 10)) {
            throw GenerationError("cannot generate " + std::to_string(n) + " distinct names");
        }
        const std::size_t syllables = 2 + pick(rng, 2);
        std::string name;
        for (std::size_t s = 0; s < syllables; ++s) {
            name += kConsonants[pick(rng, kConsonants.size())];
            name += kVowels[pick(rng, kVowels.size())];
        }
        if (pick(rng, 3) == 0) {
            name += kConsonants[pick(rng, kConsonants.size())];
        }
        if (taken.insert(name).second) {
            out.push_back(std::move(name));
        }
    }
    return out;
}

std::string filler_sentence(std::mt19937_64& rng) {
    auto any = [&](const auto& pool) { return std::string(pool[pick(rng, std::size(pool))]); };
    return "the " + any(kFillerAdjectives) + " " + any(kFillerNouns) + " " + any(kFillerVerbs) + " " +
           any(kFillerPreps) + " the " + any(kFillerNouns) + " .";
}

std::string numbered_id(char prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%05zu", prefix, i);
    return buf;
}

}  // namespace

void WorldSpec::validate() const {
    if (n_entities == 0 || n_relations == 0 || facts_per_entity == 0 || n_values == 0) {
        throw ConfigError("world sizes must be positive");
    }
    if (n_relations > std::size(kRelationPool)) {
        throw ConfigError("world.n_relations exceeds the relation pool of " + std::to_string(std::size(kRelationPool)));
    }
    if (facts_per_entity > n_relations) {
        throw GenerationError("facts_per_entity > n_relations: some (subject, relation) pair would repeat and its "
                              "query would have several answers");
    }
    if (!(multi_hop_fraction >= 0.0 && multi_hop_fraction <= 1.0)) {
        throw ConfigError("world.multi_hop_fraction must be in [0, 1]");
    }
    const auto n_single = n_entities * facts_per_entity;
    const auto n_multi = static_cast<std::size_t>(std::llround(multi_hop_fraction * static_cast<double>(n_single)));
    if (n_multi > 0 && (n_entities < 2 || n_multi > n_entities * std::size(kBridgePool))) {
        throw GenerationError("too many multi-hop queries for the bridge relations available");
    }
    require_slots(fact_template, {"relation", "subject", "object"}, "fact");
    require_slots(query_template, {"relation", "subject"}, "query");
    require_slots(multi_hop_template, {"relation", "bridge", "subject"}, "multi-hop");
}

std::string Document::text() const { return join(sentences); }

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
    keys_.reserve(docs_.size());
    words_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        const Document& d = docs_[i];
        if (d.sentences.empty() || d.text().empty()) {
            throw ContractError("document '" + d.id + "' has no text");
        }
        if (!index_.emplace(d.id, i).second) {
            throw ContractError("duplicate document id '" + d.id + "'");
        }
        const std::string text = d.text();
        keys_.push_back(retrieval_keys(text));
        words_.push_back(normalized_words(text));
    }
}

const Document& Corpus::by_id(std::string_view id) const {
    const auto it = index_.find(std::string(id));
    if (it == index_.end()) {
        throw IndexError("unknown document id '" + std::string(id) + "'");
    }
    return docs_[it->second];
}

bool Corpus::has(std::string_view id) const { return index_.contains(std::string(id)); }

void Corpus::save_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const Document& d : docs_) {
        out << d.id << '\t' << d.text() << '\n';
    }
}

Corpus Corpus::load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::vector<Document> docs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw IoError("corpus line without tab in " + path.string());
        }
        Document d;
        d.id = line.substr(0, tab);
        // Sentences end with a standalone "." token.
        std::string current;
        for (const auto& w : split_whitespace(std::string_view(line).substr(tab + 1))) {
            current += current.empty() ? w : " " + w;
            if (w == ".") {
                d.sentences.push_back(std::move(current));
                current.clear();
            }
        }
        if (!current.empty()) {
            d.sentences.push_back(std::move(current));
        }
        docs.push_back(std::move(d));
    }
    return Corpus(std::move(docs));
}

World generate_world(const WorldSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    World w;
    std::set<std::string> taken = reserved_words();
    w.entities = make_names(spec.n_entities, rng, taken);
    w.values = make_names(spec.n_values, rng, taken);
    for (std::size_t r = 0; r < spec.n_relations; ++r) {
        w.relations.emplace_back(kRelationPool[r]);
    }

    std::vector<Document> docs;
    auto add_fact = [&](Fact f) {
        Document d;
        d.id = numbered_id('f', w.facts.size());
        std::string s = substitute(spec.fact_template, "relation", f.relation);
        s = substitute(std::move(s), "subject", f.subject);
        d.sentences.push_back(substitute(std::move(s), "object", f.object));
        d.subjects.insert(f.subject);
        docs.push_back(std::move(d));
        w.facts.push_back(std::move(f));
        return w.facts.size() - 1;
    };

    // entity -> (relation -> fact index)
    std::vector<std::vector<std::size_t>> facts_of(spec.n_entities);
    for (std::size_t e = 0; e < spec.n_entities; ++e) {
        std::vector<std::size_t> rel(spec.n_relations);
        for (std::size_t r = 0; r < rel.size(); ++r) {
            rel[r] = r;
        }
        shuffle(rel, rng);
        rel.resize(spec.facts_per_entity);
        std::sort(rel.begin(), rel.end());
        for (std::size_t r : rel) {
            facts_of[e].push_back(add_fact({w.entities[e], w.relations[r], w.values[pick(rng, w.values.size())]}));
        }
    }
    for (std::size_t f = 0; f < w.facts.size(); ++f) {
        Query q;
        q.id = numbered_id('q', w.queries.size());
        q.text = substitute(substitute(spec.query_template, "relation", w.facts[f].relation), "subject",
                            w.facts[f].subject);
        q.gold_answers = {w.facts[f].object};
        q.support = {f};
        w.queries.push_back(std::move(q));
    }

    const std::size_t n_multi =
        static_cast<std::size_t>(std::llround(spec.multi_hop_fraction * static_cast<double>(w.facts.size())));
    std::set<std::pair<std::size_t, std::size_t>> bridges_used;  // (entity, bridge relation)
    for (std::size_t m = 0; m < n_multi; ++m) {
        std::size_t s = 0;
        std::size_t b = 0;
        do {
            s = pick(rng, spec.n_entities);
            b = pick(rng, std::size(kBridgePool));
        } while (bridges_used.contains({s, b}));
        bridges_used.insert({s, b});
        std::size_t t = pick(rng, spec.n_entities - 1);
        t += t >= s ? 1 : 0;
        const std::size_t hop2 = facts_of[t][pick(rng, facts_of[t].size())];
        const std::string bridge(kBridgePool[b]);
        const std::size_t hop1 = add_fact({w.entities[s], bridge, w.entities[t]});
        Query q;
        q.id = numbered_id('q', w.queries.size());
        q.text = substitute(spec.multi_hop_template, "relation", w.facts[hop2].relation);
        q.text = substitute(substitute(std::move(q.text), "bridge", bridge), "subject", w.entities[s]);
        q.gold_answers = {w.facts[hop2].object};
        q.support = {hop1, hop2};
        q.multi_hop = true;
        w.queries.push_back(std::move(q));
    }

    for (std::size_t i = 0; i < spec.n_distractors; ++i) {
        Document d;
        d.id = numbered_id('x', i);
        const std::size_t n_sent = 1 + pick(rng, 2);
        for (std::size_t s = 0; s < n_sent; ++s) {
            d.sentences.push_back(filler_sentence(rng));
        }
        docs.push_back(std::move(d));
    }
    w.corpus = Corpus(std::move(docs));
    return w;
}

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words{"a",  "an", "and", "are", "at",  "by",   "for", "in",    "is",
                                             "it", "of", "on",  "or",  "the", "to",   "was", "what",  "which",
                                             "who", "with"};
    return words;
}

std::vector<std::string> retrieval_keys(std::string_view text) {
    std::vector<std::string> keys;
    for (auto& w : normalized_words(text)) {
        if (!stopwords().contains(w)) {
            keys.push_back(std::move(w));
        }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

std::vector<std::size_t> score_all(std::string_view query, const Corpus& corpus) {
    const auto q = retrieval_keys(query);
    std::vector<std::size_t> scores(corpus.size(), 0);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& k = corpus.keys(i);
        std::size_t a = 0;
        std::size_t b = 0;
        std::size_t shared = 0;
        while (a < q.size() && b < k.size()) {
            if (q[a] < k[b]) {
                ++a;
            } else if (k[b] < q[a]) {
                ++b;
            } else {
                ++shared;
                ++a;
                ++b;
            }
        }
        scores[i] = shared;
    }
    return scores;
}

std::vector<ScoredDocument> retrieve(std::string_view query, const Corpus& corpus, std::size_t top_n,
                                     std::size_t top_k, const std::vector<char>* exclude) {
    const auto scores = score_all(query, corpus);
    std::vector<std::size_t> order;
    order.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (exclude == nullptr || !(*exclude)[i]) {
            order.push_back(i);
        }
    }
    const std::size_t n = std::min(top_n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) {
                              return scores[a] > scores[b];
                          }
                          return corpus.doc(a).id < corpus.doc(b).id;
                      });
    std::vector<ScoredDocument> out;
    for (std::size_t i = 0; i < std::min(n, top_k); ++i) {
        out.push_back({order[i], corpus.doc(order[i]).id, scores[order[i]]});
    }
    return out;
}

bool contains_phrase(std::span<const std::string> text_words, std::span<const std::string> phrase_words) {
    if (phrase_words.empty()) {
        return false;
    }
    return std::search(text_words.begin(), text_words.end(), phrase_words.begin(), phrase_words.end()) !=
           text_words.end();
}

bool contains_phrase(std::string_view text, std::string_view phrase) {
    const auto t = normalized_words(text);
    const auto p = normalized_words(phrase);
    return contains_phrase(std::span<const std::string>(t), std::span<const std::string>(p));
}

bool contains_any_answer(const Corpus& corpus, std::size_t doc, std::span<const std::string> answers) {
    for (const auto& a : answers) {
        const auto p = normalized_words(a);
        if (contains_phrase(std::span<const std::string>(corpus.words(doc)), std::span<const std::string>(p))) {
            return true;
        }
    }
    return false;
}

}  // namespace nrit
