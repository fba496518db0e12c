#pragma once

#include <string>

#include "sla/model.hpp"

namespace sla {

// Binary checkpoint format, magic "RTCK", little-endian throughout:
//   magic[4], u32 version,
//   u32 config_len, config_len bytes of key=value config text,
//   u32 tensor_count,
//   per tensor: u32 name_len, name bytes, u32 rank, u64 dims..., f64 data...
// Tensors appear in parameters() order; the loader accepts any order but
// rejects missing names, unknown names, and shape mismatches.

// Canonical config serialization (one key=value per line, fixed key order).
std::string config_text(const ModelConfig& config);
ModelConfig parse_config_text(const std::string& text);

void save_checkpoint(const std::string& path, const RewardTransformer& model);
RewardTransformer load_checkpoint(const std::string& path);

}  // namespace sla
