// Copyright (c) 2026, The nrit Authors
// SPDX-License-Identifier: Apache-2.0

#include "nrit/model/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "nrit/errors.hpp"

namespace nrit {

namespace {

constexpr std::string_view kMagic = "NRIT1";

template <typename T>
void put_le(std::vector<char>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>(bits & 0xFFu));
        bits >>= 8;
    }
}

template <typename T>
T get_le(std::span<const char> bytes, std::size_t& pos) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if (pos + sizeof(U) > bytes.size()) {
        throw IoError("checkpoint truncated");
    }
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bits |= static_cast<U>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += sizeof(U);
    return std::bit_cast<T>(bits);
}

}  // namespace

std::vector<char> encode_checkpoint(std::span<const Parameter> tensors) {
    std::vector<char> out(kMagic.begin(), kMagic.end());
    for (const Parameter& p : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape) {
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        for (double v : p.value.data) {
            put_le<double>(out, v);
        }
    }
    return out;
}

std::vector<Parameter> decode_checkpoint(std::span<const char> bytes) {
    if (bytes.size() < kMagic.size() || std::string_view(bytes.data(), kMagic.size()) != kMagic) {
        throw IoError("not an NRIT1 checkpoint");
    }
    std::size_t pos = kMagic.size();
    std::vector<Parameter> out;
    while (pos < bytes.size()) {
        const auto name_len = get_le<std::uint32_t>(bytes, pos);
        if (pos + name_len > bytes.size()) {
            throw IoError("checkpoint truncated in tensor name");
        }
        std::string name(bytes.data() + pos, name_len);
        pos += name_len;
        const auto rank = get_le<std::uint32_t>(bytes, pos);
        if (rank == 0) {
            throw IoError("checkpoint tensor '" + name + "' has rank 0");
        }
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(get_le<std::uint32_t>(bytes, pos));
        }
        Tensor t(shape);
        for (double& v : t.data) {
            v = get_le<double>(bytes, pos);
        }
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter> tensors) {
    const std::vector<char> bytes = encode_checkpoint(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to checkpoint " + path.string());
    }
}

std::vector<Parameter> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read checkpoint " + path.string());
    }
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace nrit
