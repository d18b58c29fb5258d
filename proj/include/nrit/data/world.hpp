// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nrit {

struct WorldSpec {
    std::size_t n_entities = 160;
    std::size_t n_relations = 8;
    std::size_t facts_per_entity = 3;
    // Fact objects are drawn from this many value names (reused across facts).
    std::size_t n_values = 40;
    std::size_t n_distractors = 200;
    // Multi-hop queries added, as a fraction of the single-hop query count.
    double multi_hop_fraction = 0.1;
    std::uint64_t seed = 1;
    std::string fact_template = "the {relation} of {subject} is {object} .";
    std::string query_template = "what is the {relation} of {subject} ?";
    std::string multi_hop_template = "what is the {relation} of the {bridge} of {subject} ?";

    // ConfigError on malformed templates or zero sizes; GenerationError when
    // answers cannot be made unique.
    void validate() const;
};

struct Fact {
    std::string subject;
    std::string relation;
    std::string object;
};

struct Document {
    std::string id;
    std::vector<std::string> sentences;
    std::set<std::string> subjects;

    [[nodiscard]] std::string text() const;
};

struct Query {
    std::string id;
    std::string text;
    std::vector<std::string> gold_answers;
    // Indices into World::facts, in reasoning order.
    std::vector<std::size_t> support;
    bool multi_hop = false;
};

// Immutable document collection with precomputed retrieval keys.
class Corpus {
  public:
    Corpus() = default;
    explicit Corpus(std::vector<Document> docs);

    [[nodiscard]] std::size_t size() const { return docs_.size(); }
    [[nodiscard]] bool empty() const { return docs_.empty(); }
    [[nodiscard]] const Document& doc(std::size_t i) const { return docs_[i]; }
    [[nodiscard]] const std::vector<Document>& docs() const { return docs_; }
    // IndexError for an unknown id.
    [[nodiscard]] const Document& by_id(std::string_view id) const;
    [[nodiscard]] bool has(std::string_view id) const;
    // Sorted unique non-stopword normalized tokens of document i.
    [[nodiscard]] const std::vector<std::string>& keys(std::size_t i) const { return keys_[i]; }
    [[nodiscard]] const std::vector<std::string>& words(std::size_t i) const { return words_[i]; }

    // Copy keeping only documents for which keep(doc) is true.
    template <typename Pred>
    [[nodiscard]] Corpus filtered(Pred keep) const {
        std::vector<Document> out;
        for (const Document& d : docs_) {
            if (keep(d)) {
                out.push_back(d);
            }
        }
        return Corpus(std::move(out));
    }

    // One document per line: id<TAB>text.
    void save_tsv(const std::filesystem::path& path) const;
    static Corpus load_tsv(const std::filesystem::path& path);

  private:
    std::vector<Document> docs_;
    std::vector<std::vector<std::string>> keys_;
    std::vector<std::vector<std::string>> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct World {
    std::vector<std::string> entities;
    std::vector<std::string> values;
    std::vector<std::string> relations;
    std::vector<Fact> facts;
    Corpus corpus;
    std::vector<Query> queries;
};

World generate_world(const WorldSpec& spec);

// Words ignored by retrieval scoring.
const std::set<std::string>& stopwords();

// Sorted unique non-stopword normalized tokens.
std::vector<std::string> retrieval_keys(std::string_view text);

struct ScoredDocument {
    std::size_t index = 0;  // position in the corpus
    std::string id;
    std::size_t score = 0;
};

// Overlap scoring; top_n by (score desc, id asc), then the first top_k.
// Documents with a nonzero entry in `exclude` are not candidates.
std::vector<ScoredDocument> retrieve(std::string_view query, const Corpus& corpus, std::size_t top_n,
                                     std::size_t top_k, const std::vector<char>* exclude = nullptr);

// Scores for every document in corpus order.
std::vector<std::size_t> score_all(std::string_view query, const Corpus& corpus);

// True iff the normalized phrase occurs as a contiguous token run of the
// normalized text.
bool contains_phrase(std::span<const std::string> text_words, std::span<const std::string> phrase_words);
bool contains_phrase(std::string_view text, std::string_view phrase);

// True iff the document contains any of the answers.
bool contains_any_answer(const Corpus& corpus, std::size_t doc, std::span<const std::string> answers);

}  // namespace nrit
