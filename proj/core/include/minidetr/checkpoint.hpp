#pragma once

#include <string>

#include "minidetr/model.hpp"

namespace minidetr {

// Binary checkpoint, little-endian regardless of host:
//   magic "MDTC" | u32 version | u64 config-JSON length | config JSON bytes |
//   u64 tensor count | per tensor: u64 name length, name bytes, u64 ndim,
//   u64 dims..., f64 values (row-major)
void save_checkpoint(const Detector& model, const std::string& path);

// Rebuilds the detector from the embedded config, then loads every named
// tensor; name or shape mismatches are errors.
Detector load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

}  // namespace minidetr
