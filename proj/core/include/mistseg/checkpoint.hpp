#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mistseg/nn.hpp"

namespace mistseg {

inline constexpr char kCheckpointMagic[5] = {'M', 'S', 'T', 'W', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Layout: magic "MSTW1", u32 version, then per tensor: u32 name length,
/// name bytes, u32 rank, rank x u64 dims, little-endian f64 payload.
std::vector<std::uint8_t> encode_checkpoint(const NamedParams& params);
std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedParams& params);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `params` by name. Every parameter must be present
/// with a matching shape; extra records are an error too.
void load_checkpoint(const std::filesystem::path& path, const NamedParams& params);

}  // namespace mistseg
