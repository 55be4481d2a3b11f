// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "qwid/graph.hpp"

namespace qwid {

inline constexpr char kModelMagic[4] = {'Q', 'W', 'I', 'D'};
inline constexpr std::uint16_t kModelVersion = 1;

/// Deterministic little-endian encoding; see docs/model_format.md.
std::string serialize(const LayerGraph& g);
/// Throws BadMagicError, UnsupportedVersionError, TruncatedError or FormatError.
LayerGraph deserialize(const std::string& bytes);

/// Returns the number of bytes written. Throws IoError.
std::uint64_t save(const LayerGraph& g, const std::filesystem::path& path);
LayerGraph load(const std::filesystem::path& path);

/// File length in bytes. Throws IoError if the file cannot be inspected.
std::uint64_t model_size_bytes(const std::filesystem::path& path);

}  // namespace qwid
