// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/data/prompts.hpp"

#include "nrit/errors.hpp"

namespace nrit {

namespace {

constexpr std::string_view kAttributionTail =
    "If the proposed answer can be derived by referring to the context, answer YES; otherwise, answer NO.\n"
    "The correct answer is";

constexpr std::string_view kDenoiseInstruction =
    "Given a document and a query, reason step by step to identify only the parts of the document that are "
    "directly relevant to the query, and provide a concise summary of those relevant parts.";

constexpr std::string_view kRsConstructionHead =
    "Below is a document.\n\n"
    "Your task is to find and concisely summarize only the parts of the document that are directly relevant to "
    "the given query.\n\n"
    "- Do not summarize the entire document.\n"
    "- Exclude any information that is not related to the query.\n"
    "- Focus only on the key points that are most relevant to the query.\n\n";

constexpr std::string_view kRsConstructionTail =
    "[Relevant Summary]\n"
    "(For this section, reason step-by-step in a Chain-of-Thought (CoT) manner to identify the relevant "
    "information. Show your thinking process as you determine which parts of the document are relevant to the "
    "query. Then, Summarize only the information directly related to the query based on your reasoning. If "
    "nothing is relevant, leave this section blank.)";

const std::string& require(const std::optional<std::string>& slot, std::string_view name, PromptKind kind) {
    if (!slot) {
        throw TemplateError("missing slot '" + std::string(name) + "' for " + std::string(prompt_kind_name(kind)) +
                            " prompt");
    }
    return *slot;
}

std::string background(const PromptSlots& slots, PromptKind kind) {
    if (slots.documents.empty()) {
        throw TemplateError("missing slot 'documents' for " + std::string(prompt_kind_name(kind)) + " prompt");
    }
    std::string out = "Background:\n";
    for (std::size_t i = 0; i < slots.documents.size(); ++i) {
        out += "Document " + std::to_string(i + 1) + ": " + slots.documents[i] + "\n";
    }
    return out;
}

}  // namespace

std::string_view prompt_kind_name(PromptKind kind) {
    switch (kind) {
        case PromptKind::attribution:
            return "attribution";
        case PromptKind::denoise:
            return "denoise";
        case PromptKind::qa:
            return "qa";
        case PromptKind::rs_construction:
            return "rs-construction";
    }
    return "unknown";
}

std::string render_prompt(PromptKind kind, const PromptSlots& slots) {
    switch (kind) {
        case PromptKind::attribution: {
            const auto& context = require(slots.context, "context", kind);
            const auto& question = require(slots.question, "question", kind);
            const auto& answer = require(slots.proposed_answer, "proposed_answer", kind);
            return "<bos> user:\nContext: " + context + "\nQuestion: " + question + "\nProposed Answer: " + answer +
                   "\n" + std::string(kAttributionTail);
        }
        case PromptKind::denoise: {
            const auto& question = require(slots.question, "question", kind);
            return "<bos> user:\n" + std::string(kDenoiseInstruction) + "\n\n" + background(slots, kind) +
                   "\nQuestion: " + question + " <eot> assistant:";
        }
        case PromptKind::qa: {
            const auto& question = require(slots.question, "question", kind);
            return "<bos> system:\n" + std::string(kQaSystemText) + " <eot> user:\n" + background(slots, kind) +
                   "\nQuestion: " + question + " <eot> assistant:";
        }
        case PromptKind::rs_construction: {
            const auto& question = require(slots.question, "question", kind);
            const auto& document = require(slots.document, "document", kind);
            return std::string(kRsConstructionHead) + "Query: " + question + "\n\nDocument:\n" + document + "\n\n" +
                   std::string(kRsConstructionTail);
        }
    }
    throw TemplateError("unknown prompt kind");
}

std::vector<std::string> template_texts() {
    return {"<bos> user: system: assistant: <eot> Context: Question: Proposed Answer: Background: Document",
            std::string(kAttributionTail),
            std::string(kDenoiseInstruction),
            std::string(kQaSystemText),
            std::string(kNoEvidenceSentence),
            "1 2 3 4 5 6 7 8 9 10"};
}

}  // namespace nrit
