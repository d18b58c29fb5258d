// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nrit/data/world.hpp"

namespace nrit {

enum class ContextType { rel, irrel };

std::string_view context_type_name(ContextType type);
ContextType parse_context_type(std::string_view name);

struct AttributionInstance {
    std::string id;
    std::string question;
    std::string context;
    std::string proposed_answer;
    std::array<std::string, 2> choices{"YES", "NO"};
    int gold = 0;  // index into choices
    ContextType type = ContextType::rel;

    // ContractError unless choices are YES/NO and gold is 0 or 1.
    void validate() const;
};

struct DenoiseInstance {
    std::string id;
    std::string question;
    std::vector<std::string> doc_ids;
};

struct RSInstance {
    std::string id;
    std::string question;
    std::vector<std::string> doc_ids;
    std::string summary;
};

struct QAInstance {
    std::string id;
    std::string question;
    std::vector<std::string> gold_answers;
    std::vector<std::string> doc_ids;
    bool answer_present = false;
};

struct QuerySplit {
    std::vector<Query> train;
    std::vector<Query> eval;
};

// Seeded shuffle; the first n_eval queries become the evaluation split.
QuerySplit split_queries(std::span<const Query> queries, std::size_t n_eval, std::uint64_t seed);

struct AttributionSets {
    std::vector<AttributionInstance> rel;
    std::vector<AttributionInstance> irrel;
    std::vector<std::string> warnings;
};

// Relevant: the query's top-1 document, labeled YES. Irrelevant: a
// zero-score document without the answer, labeled NO. Zero-score documents
// are taken in retrieval order, rotating across queries. A query enters both
// sets or neither.
AttributionSets build_attribution_sets(const Corpus& corpus, std::span<const Query> queries, std::size_t n_per_type);

struct DenoiseSet {
    std::vector<DenoiseInstance> instances;
    std::vector<std::string> warnings;
};

// k zero-score, answer-free documents per query.
DenoiseSet build_denoise_set(const Corpus& corpus, std::span<const Query> queries, std::size_t k);

struct RSOptions {
    std::size_t top_n = 50;
    std::size_t top_k = 5;
    std::size_t summary_cap = 142;
    // Fraction of instances retrieved from a copy of the corpus without
    // answer-bearing documents, spread evenly over the query order.
    double absent_fraction = 0.0;
};

std::vector<RSInstance> build_rs_set(const Corpus& corpus, std::span<const Fact> facts, std::span<const Query> queries,
                                     const RSOptions& options);

// Extractive oracle over the given documents; kNoEvidenceSentence when
// nothing qualifies.
std::string oracle_summary(std::span<const Document* const> docs, std::span<const Fact> support,
                           std::span<const std::string> gold_answers, std::size_t summary_cap);

// Two instances per query: "<id>-n" with normal retrieval and "<id>-x" with
// every answer-bearing document removed from the candidate pool.
std::vector<QAInstance> build_qa_set(const Corpus& corpus, std::span<const Query> queries, std::size_t top_n,
                                     std::size_t top_k);

// 1 for every document containing one of the answers, else 0.
std::vector<char> answer_exclusion(const Corpus& corpus, std::span<const std::string> answers);

std::vector<std::string> document_texts(const Corpus& corpus, std::span<const std::string> doc_ids);

void save_jsonl(const std::filesystem::path& path, std::span<const AttributionInstance> items);
void save_jsonl(const std::filesystem::path& path, std::span<const DenoiseInstance> items);
void save_jsonl(const std::filesystem::path& path, std::span<const RSInstance> items);
void save_jsonl(const std::filesystem::path& path, std::span<const QAInstance> items);

std::vector<AttributionInstance> load_attribution_jsonl(const std::filesystem::path& path);
std::vector<DenoiseInstance> load_denoise_jsonl(const std::filesystem::path& path);
std::vector<RSInstance> load_rs_jsonl(const std::filesystem::path& path);
std::vector<QAInstance> load_qa_jsonl(const std::filesystem::path& path);

}  // namespace nrit
