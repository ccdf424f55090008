#pragma once

// HFCK checkpoint container (little-endian):
//   magic "HFCK" | u32 version | u32 config length + UTF-8 config text |
//   u32 tensor count | per tensor: u16 name length, name bytes, u8 ndim,
//   u32 dims..., f32 payload | u64 iteration | u32 rng-blob length + blob.
//
// Tensors hold the model parameters followed by optimizer momentum buffers
// under a "momentum:" name prefix.

#include <filesystem>
#include <string>
#include <vector>

#include "hformer/tensor.hpp"

namespace hformer {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    std::string config_text;  // canonical model.* lines
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    uint64_t iteration = 0;
    std::string rng_state;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hformer
