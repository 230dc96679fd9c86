#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedguard/model.hpp"

namespace fedguard {

// Checkpoint layout, all integers little-endian:
//   "FGP1"
//   repeated until end of stream: u32 rank, u32 dims[rank], f64 data[prod(dims)]
std::vector<std::uint8_t> encode_params(const ModelParams& params);

// Raw tensors in stream order. Throws FormatError on bad magic or truncation.
std::vector<Tensor> decode_tensors(std::span<const std::uint8_t> bytes);

// Rebuilds (layer, role) tags from `spec`; shapes must match exactly.
ModelParams decode_params(std::span<const std::uint8_t> bytes, const ModelSpec& spec);

void save_params(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path, const ModelSpec& spec);

// FNV-1a over a byte range; used for the paired-run checksums.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::uint64_t params_checksum(const ModelParams& params);

}  // namespace fedguard
