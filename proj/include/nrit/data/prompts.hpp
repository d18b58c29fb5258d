// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nrit {

enum class PromptKind { attribution, denoise, qa, rs_construction };

std::string_view prompt_kind_name(PromptKind kind);

// attribution: question, context, proposed_answer
// denoise, qa: question, documents (one or more)
// rs_construction: question, document
struct PromptSlots {
    std::optional<std::string> question;
    std::optional<std::string> context;
    std::optional<std::string> proposed_answer;
    std::optional<std::string> document;
    std::vector<std::string> documents;
};

// Throws TemplateError when a slot required by `kind` is missing.
std::string render_prompt(PromptKind kind, const PromptSlots& slots);

// Summary target used when no retrieved sentence is relevant.
inline constexpr std::string_view kNoEvidenceSentence = "no relevant information is found in the documents .";

inline constexpr std::string_view kQaSystemText =
    "You are a helpful assistant. Your task is to extract relevant information from the provided documents\n"
    "and answer questions as briefly as possible.";

// Every literal fragment of every template, for vocabulary construction.
std::vector<std::string> template_texts();

}  // namespace nrit
