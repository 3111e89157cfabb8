#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mistseg/scribble.hpp"
#include "mistseg/tensor.hpp"

namespace mistseg::pipeline {

/// One RGB-D training pair with its scribbles. Values lie in [0, 1] and are
/// multiples of 1/255 so that PNG storage is lossless.
struct SampleRecord {
  Tensor rgb;     // 3 x H x W
  Tensor depth;   // 1 x H x W
  ScribbleMask scribble;
  std::optional<Tensor> gt;  // 1 x H x W binary, evaluation only

  std::size_t height() const { return rgb.dim(1); }
  std::size_t width() const { return rgb.dim(2); }
};

/// Shapes (ellipse / rectangle / blob) over a textured background, with a
/// depth map that places each shape in front of a smooth ramp, and random-walk
/// scribbles strictly inside foreground and background.
std::vector<SampleRecord> gen_synthetic(std::size_t n, std::size_t size, std::uint64_t seed);

/// File name for sample `index`: four-digit, zero padded.
std::string sample_file_name(std::size_t index);

/// Scribble PNG encoding: 0 unlabeled, 128 background, 255 foreground.
std::uint8_t encode_label(Label label);
Label decode_label(std::uint8_t value);

/// Writes <root>/{rgb,depth,scribble,gt}/NNNN.png.
void save_dataset(const std::filesystem::path& root, std::span<const SampleRecord> samples);
/// Reads every NNNN.png under <root>/rgb with its siblings; scribble and gt
/// folders are optional.
std::vector<SampleRecord> load_dataset(const std::filesystem::path& root);

/// Single-channel maps (predictions, pseudo labels) as <dir>/NNNN.png.
void save_maps(const std::filesystem::path& dir, std::span<const Tensor> maps);
std::vector<Tensor> load_maps(const std::filesystem::path& dir);

}  // namespace mistseg::pipeline
