#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mistseg/tensor.hpp"

namespace mistseg::io {

/// 8-bit image with interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads any PNG, normalized to 8-bit gray or RGB (alpha dropped).
Image8 read_png(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_png(const std::filesystem::path& path, const Image8& image);

std::uint8_t quantize(double v);
inline double dequantize(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

/// Channel-major tensor C x H x W in [0, 1].
Tensor to_tensor(const Image8& image);
/// Inverse of to_tensor; accepts C x H x W or 1 x C x H x W, rounds to 8 bits.
Image8 from_tensor(const Tensor& t);

/// Writes `bytes` to `path` via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mistseg::io
