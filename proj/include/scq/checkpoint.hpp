#pragma once

// Checkpoint files: "SCQC", u32 version = 1, u64 header length, a UTF-8 JSON
// header {"config": ..., "params": [{"name", "shape", "offset"}]}, then the
// parameters as little-endian f64 blobs in manifest order. Offsets count
// bytes from the start of the blob section.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "scq/models.hpp"

namespace scq::ckpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::vector<model::Param> params;
};

std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& config,
                                            const std::vector<model::Param>& params);
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                     const std::vector<model::Param>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scq::ckpt
