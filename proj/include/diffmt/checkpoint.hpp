#pragma once

// Binary checkpoint:
//   "CDMT" | u32 version | 7 x i32 ModelConfig (n_layers, n_heads, d_model,
//   d_ff, vocab_size, seq_len, steps) | u32 tensor count | per tensor:
//   u32 name length, name bytes, u32 rows, u32 cols, rows*cols f32.
// All integers and floats little-endian.

#include <string>

#include "diffmt/model.hpp"

namespace diffmt {

inline constexpr char kCheckpointMagic[4] = {'C', 'D', 'M', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  DenoiserParams<float> params;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const DenoiserParams<float>& params);
std::string serialize_checkpoint(const ModelConfig& cfg, const DenoiserParams<float>& params);

/// Validates magic, version and every tensor's name and shape against the
/// stored config. Throws IoError on any mismatch.
Checkpoint load_checkpoint(const std::string& path);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace diffmt
