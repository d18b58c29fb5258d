// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nrit {

// Whitespace word-level tokenizer. Ids 0..4 are reserved for the special
// tokens in this fixed order; corpus words follow in sorted order.
class Tokenizer {
  public:
    static constexpr int kBos = 0;
    static constexpr int kEot = 1;
    static constexpr int kPad = 2;
    static constexpr int kYes = 3;
    static constexpr int kNo = 4;
    static constexpr std::array<std::string_view, 5> kSpecials{"<bos>", "<eot>", "<pad>", "YES", "NO"};

    Tokenizer();

    // Vocabulary = specials + every normalized word occurring in texts.
    static Tokenizer build(std::span<const std::string> texts);

    // Words that are exactly a special token string map to that special;
    // everything else is normalized. Unknown words throw TokenError.
    [[nodiscard]] std::vector<int> encode(std::string_view text) const;
    [[nodiscard]] std::string decode(std::span<const int> ids) const;
    // Same word treatment as encode(), without the vocabulary lookup.
    [[nodiscard]] static std::string normalize_text(std::string_view text);

    [[nodiscard]] int id(std::string_view token) const;
    [[nodiscard]] bool contains(std::string_view token) const;
    [[nodiscard]] const std::string& token(int id) const;
    [[nodiscard]] std::size_t size() const { return tokens_.size(); }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::filesystem::path& path) const;
    static Tokenizer load(const std::filesystem::path& path);

    bool operator==(const Tokenizer& other) const { return tokens_ == other.tokens_; }

  private:
    void add(std::string token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace nrit
