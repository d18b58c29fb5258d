// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/model/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "nrit/errors.hpp"
#include "nrit/text.hpp"

namespace nrit {

namespace {

bool is_special(std::string_view word) {
    return std::find(Tokenizer::kSpecials.begin(), Tokenizer::kSpecials.end(), word) != Tokenizer::kSpecials.end();
}

template <typename Fn>
void for_each_word(std::string_view text, Fn&& fn) {
    for (const std::string& raw : split_whitespace(text)) {
        if (is_special(raw)) {
            fn(raw);
            continue;
        }
        for (const std::string& w : normalized_words(raw)) {
            fn(w);
        }
    }
}

}  // namespace

Tokenizer::Tokenizer() {
    for (std::string_view s : kSpecials) {
        add(std::string(s));
    }
}

void Tokenizer::add(std::string token) {
    if (index_.contains(token)) {
        throw TokenError("duplicate token '" + token + "'");
    }
    index_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(token));
}

Tokenizer Tokenizer::build(std::span<const std::string> texts) {
    std::set<std::string> words;
    for (const std::string& t : texts) {
        for_each_word(t, [&](const std::string& w) {
            if (!is_special(w)) {
                words.insert(w);
            }
        });
    }
    Tokenizer tok;
    for (const std::string& w : words) {
        // Corpus words are lowercase, so they can never equal "YES"/"NO" or
        // the bracketed specials.
        tok.add(w);
    }
    return tok;
}

std::string Tokenizer::normalize_text(std::string_view text) {
    std::vector<std::string> out;
    for_each_word(text, [&](const std::string& w) { out.push_back(w); });
    return join(out);
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for_each_word(text, [&](const std::string& w) {
        auto it = index_.find(w);
        if (it == index_.end()) {
            throw TokenError("unknown word '" + w + "'");
        }
        ids.push_back(it->second);
    });
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) {
            out.push_back(' ');
        }
        out += token(ids[i]);
    }
    return out;
}

int Tokenizer::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) {
        throw TokenError("token '" + std::string(token) + "' not in vocabulary");
    }
    return it->second;
}

bool Tokenizer::contains(std::string_view token) const { return index_.contains(std::string(token)); }

const std::string& Tokenizer::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw TokenError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

void Tokenizer::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write tokenizer file " + path.string());
    }
    for (const std::string& t : tokens_) {
        out << t << '\n';
    }
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read tokenizer file " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    if (lines.size() < kSpecials.size()) {
        throw TokenError("tokenizer file too short: " + path.string());
    }
    for (std::size_t i = 0; i < kSpecials.size(); ++i) {
        if (lines[i] != kSpecials[i]) {
            throw TokenError("tokenizer file must list special tokens first in fixed order");
        }
    }
    Tokenizer tok;
    for (std::size_t i = kSpecials.size(); i < lines.size(); ++i) {
        tok.add(lines[i]);
    }
    return tok;
}

}  // namespace nrit
