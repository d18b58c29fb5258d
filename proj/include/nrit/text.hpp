// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nrit {

// Lowercase, strip ASCII punctuation, collapse whitespace.
std::string normalize(std::string_view text);

// normalize() followed by a whitespace split.
std::vector<std::string> normalized_words(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view text);

std::string join(const std::vector<std::string>& words, std::string_view sep = " ");

}  // namespace nrit
