#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ssd/models.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

/// Checkpoint layout (all integers little-endian):
///
///   magic "SSDC" | u32 version | u32 tensor count
///   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank] | f32 values[prod(dims)]
struct CheckpointEntry {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'D', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Parameters followed by normalization running statistics.
std::vector<CheckpointEntry> export_state(Network& network, const std::string& prefix = "");
/// Loads entries named `prefix + name` into the network; missing or
/// mis-shaped entries are errors.
void import_state(Network& network, std::span<const CheckpointEntry> entries, const std::string& prefix = "");

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
