#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovdlab/nn.hpp"
#include "ovdlab/optim.hpp"

// Binary checkpoint: magic, version, payload length, payload, FNV-1a checksum.
// The payload holds a meta block, one section per parameter store (name,
// config fingerprint, named tensors), and optional optimizer slots.
namespace ovdlab {

struct CheckpointMeta {
  int step = 0;  // 1 = projector alignment, 2 = finetune, 0 = export
  long iteration = 0;
  std::uint64_t seed = 0;
};

struct StoreRef {
  std::string section;
  std::string fingerprint;
  ParamStore* store = nullptr;
};

struct CheckpointInfo {
  CheckpointMeta meta;
  std::vector<std::string> sections;
  std::vector<std::string> fingerprints;
  bool has_optimizer = false;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const std::vector<StoreRef>& stores,
                     const AdamW* optimizer);

// Restores the listed sections (extra sections in the file are ignored) and,
// when given, the optimizer. Every check runs before anything is assigned, so
// a failed load leaves all state untouched. Corruption raises ParseError; a
// missing section or fingerprint/shape mismatch raises CheckpointError.
CheckpointMeta load_checkpoint(const std::string& path, const std::vector<StoreRef>& stores, AdamW* optimizer);

CheckpointInfo inspect_checkpoint(const std::string& path);

}  // namespace ovdlab
