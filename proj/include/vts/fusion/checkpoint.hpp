#pragma once

#include <string>

#include "vts/fusion/params.hpp"

namespace vts {

// Checkpoint layout (all integers little-endian):
//   "VTSM"  u32 version (1)
//   u32 length + architecture encoding (ModelConfig::architecture_encoding)
//   u64 FNV-1a hash of the encoding
//   u32 tensor count, then per tensor in ModelParams order:
//     u32 length + name, u32 rank, u32 dims..., f64 values row-major
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ModelParams& params);
void write_checkpoint(const std::string& path, const ModelParams& params);

/// Decodes a checkpoint. Architecture fields come from the file; all other
/// settings are taken from `base`.
ModelParams decode_checkpoint(std::string_view bytes, const ModelConfig& base, const std::string& what = "checkpoint");
ModelParams read_checkpoint(const std::string& path, const ModelConfig& base);

/// Loads a checkpoint and requires its architecture hash to equal that of
/// `expected`; a mismatch is a ConfigError naming both hashes.
ModelParams load_compatible_checkpoint(const std::string& path, const ModelConfig& expected);

/// Replaces the architecture fields of `base` with those in an encoding.
ModelConfig apply_architecture(ModelConfig base, std::string_view encoding);

std::string hash_hex(std::uint64_t h);

}  // namespace vts
