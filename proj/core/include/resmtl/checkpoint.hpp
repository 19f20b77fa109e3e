#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include <nlohmann/json.hpp>

#include "resmtl/network.hpp"

namespace resmtl {

/// Checkpoint layout (all integers little-endian):
///
///   offset 0   8 bytes   magic "RESMTLCK"
///   offset 8   u32       format version (kCheckpointVersion)
///   offset 12  u64       byte length L of the JSON header
///   offset 20  L bytes   UTF-8 JSON: {"config": NetConfig,
///                                     "parameters": [{"name","rows","cols"}...],
///                                     "metadata": {...}}
///   then       f64 x P   every parameter value, IEEE-754 little-endian,
///                        tensors in MultiTaskNet::parameters() order, row-major
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  MultiTaskNet net;
  nlohmann::json metadata;
};

void write_checkpoint(std::ostream& out, const MultiTaskNet& net,
                      const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const MultiTaskNet& net,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace resmtl
