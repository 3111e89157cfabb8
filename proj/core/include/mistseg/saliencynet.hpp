#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mistseg/nn.hpp"

namespace mistseg::net {

inline constexpr double kLeakySlope = 0.01;

/// Toy RGB branch: four stages of (stride-2 3x3 conv, 3x3 conv), widths 16, 32, 64, 64.
class EncoderSemantic {
 public:
  static constexpr std::size_t kStageChannels[] = {16, 32, 64, 64};

  EncoderSemantic() = default;
  EncoderSemantic(std::size_t in_channels, Rng& rng);

  std::vector<Tensor> forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  std::vector<Conv2d> entry_;
  std::vector<Conv2d> body_;
};

/// Toy depth branch: five stages of one stride-2 3x3 conv, widths 8, 16, 32, 32, 32.
class EncoderDetail {
 public:
  static constexpr std::size_t kStageChannels[] = {8, 16, 32, 32, 32};

  EncoderDetail() = default;
  EncoderDetail(std::size_t in_channels, Rng& rng);

  std::vector<Tensor> forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  std::vector<Conv2d> convs_;
};

/// Appends a fifth stage: the top stage average-pooled 2x2.
std::vector<Tensor> duplicate_top(std::vector<Tensor> stages);

/// Per stage: channel concatenation followed by one 3x3 conv and leaky ReLU.
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(std::span<const std::size_t> lhs_channels, std::span<const std::size_t> rhs_channels,
               std::span<const std::size_t> out_channels, Rng& rng);

  std::vector<Tensor> forward(std::span<const Tensor> lhs, std::span<const Tensor> rhs) const;
  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  std::vector<Conv2d> convs_;
};

struct DecoderOutput {
  Tensor prediction;  // N x 1 x H x W, in (0, 1)
  Tensor info;        // N x width x H/4 x W/4
};

/// Top-down decoder: a 3x3 lateral conv per stage, bilinear x2 upsampling
/// with skip-add, then a 3x3 conv + sigmoid head at input resolution.
class Decoder {
 public:
  Decoder() = default;
  Decoder(std::span<const std::size_t> stage_channels, std::size_t width, Rng& rng);

  /// `stages` finest first; stage k has spatial size H / 2^(k+1).
  DecoderOutput forward(std::span<const Tensor> stages) const;
  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  std::vector<Conv2d> lateral_;
  Conv2d head_;
};

struct NetConfig {
  std::size_t image_size = 64;
  std::size_t decoder_width = 16;
};

struct StageOneOutput {
  Tensor s_r_init;
  Tensor f_r_info;
  Tensor s_rgbd_init;
  Tensor f_rgbd_info;
};

/// Asymmetric two-branch network: the RGB branch decodes its own four stages;
/// the RGB-D branch decodes the fusion of the (duplicated) RGB stages with
/// the five depth stages.
class SaliencyNet {
 public:
  SaliencyNet() = default;
  SaliencyNet(const NetConfig& config, Rng& rng);

  /// x_r: N x 3 x H x W, x_d: N x 1 x H x W with H, W divisible by 32.
  StageOneOutput forward(const Tensor& x_r, const Tensor& x_d) const;

  NamedParams named_parameters() const;
  std::vector<Tensor> parameters() const { return param_values(named_parameters()); }
  const NetConfig& config() const { return config_; }

  NamedParams rgb_encoder_parameters() const;
  NamedParams depth_encoder_parameters() const;

 private:
  NetConfig config_;
  EncoderSemantic rgb_encoder_;
  EncoderDetail depth_encoder_;
  Decoder rgb_decoder_;
  FusionModule fusion_;
  Decoder rgbd_decoder_;
};

void check_input_pair(const Tensor& x_r, const Tensor& x_d, std::size_t rgb_channels = 3);

}  // namespace mistseg::net
