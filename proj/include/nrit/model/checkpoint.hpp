// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "nrit/autodiff/graph.hpp"

namespace nrit {

// Binary layout: "NRIT1", then per tensor: u32 name length, UTF-8 name,
// u32 rank, u32 dims, float64 values. All integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter> tensors);
std::vector<Parameter> load_checkpoint(const std::filesystem::path& path);

std::vector<char> encode_checkpoint(std::span<const Parameter> tensors);
std::vector<Parameter> decode_checkpoint(std::span<const char> bytes);

}  // namespace nrit
