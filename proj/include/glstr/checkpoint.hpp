#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glstr/tensor.hpp"

namespace glstr::checkpoint {

/// On-disk layout (little-endian):
///   "GLSTRCK1" | u32 version | u64 json_bytes | json
///   | u64 array_count | per array: u32 name_bytes, name, u32 rank, u64 dims[rank], f64 data[numel]
/// docs/checkpoint_format.md lists the array names.
inline constexpr char kMagic[8] = {'G', 'L', 'S', 'T', 'R', 'C', 'K', '1'};
inline constexpr std::uint32_t kVersion = 1;

struct Archive {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor* find(const std::string& name) const;
};

void write(const std::filesystem::path& path, const Archive& archive);
/// Throws IoError for unreadable or malformed files.
Archive read(const std::filesystem::path& path);

} // namespace glstr::checkpoint
