#include "mistseg/saliencynet.hpp"

#include <stdexcept>
#include <string>

#include "mistseg/errors.hpp"

namespace mistseg::net {

EncoderSemantic::EncoderSemantic(std::size_t in_channels, Rng& rng) {
  std::size_t in = in_channels;
  for (std::size_t c : kStageChannels) {
    entry_.emplace_back(in, c, 3, 2, 1, rng);
    body_.emplace_back(c, c, 3, 1, 1, rng);
    in = c;
  }
}

std::vector<Tensor> EncoderSemantic::forward(const Tensor& x) const {
  std::vector<Tensor> stages;
  Tensor h = x;
  for (std::size_t i = 0; i < entry_.size(); ++i) {
    h = leaky_relu(entry_[i](h), kLeakySlope);
    h = leaky_relu(body_[i](h), kLeakySlope);
    stages.push_back(h);
  }
  return stages;
}

void EncoderSemantic::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < entry_.size(); ++i) {
    entry_[i].collect(out, prefix + ".stage" + std::to_string(i) + ".entry");
    body_[i].collect(out, prefix + ".stage" + std::to_string(i) + ".body");
  }
}

EncoderDetail::EncoderDetail(std::size_t in_channels, Rng& rng) {
  std::size_t in = in_channels;
  for (std::size_t c : kStageChannels) {
    convs_.emplace_back(in, c, 3, 2, 1, rng);
    in = c;
  }
}

std::vector<Tensor> EncoderDetail::forward(const Tensor& x) const {
  std::vector<Tensor> stages;
  Tensor h = x;
  for (const auto& conv : convs_) {
    h = leaky_relu(conv(h), kLeakySlope);
    stages.push_back(h);
  }
  return stages;
}

void EncoderDetail::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + ".stage" + std::to_string(i));
}

std::vector<Tensor> duplicate_top(std::vector<Tensor> stages) {
  if (stages.empty()) throw std::invalid_argument("duplicate_top: no stages");
  const Tensor& top = stages.back();
  if (top.rank() != 4 || top.dim(2) < 2 || top.dim(3) < 2) {
    throw ShapeError("duplicate_top: top stage " + shape_str(top.shape()) + " is too small to pool");
  }
  stages.push_back(avg_pool2d(top, 2, 2));
  return stages;
}

FusionModule::FusionModule(std::span<const std::size_t> lhs_channels, std::span<const std::size_t> rhs_channels,
                           std::span<const std::size_t> out_channels, Rng& rng) {
  if (lhs_channels.size() != rhs_channels.size() || lhs_channels.size() != out_channels.size()) {
    throw std::invalid_argument("FusionModule: stage counts differ");
  }
  for (std::size_t i = 0; i < lhs_channels.size(); ++i) {
    convs_.emplace_back(lhs_channels[i] + rhs_channels[i], out_channels[i], 3, 1, 1, rng);
  }
}

std::vector<Tensor> FusionModule::forward(std::span<const Tensor> lhs, std::span<const Tensor> rhs) const {
  if (lhs.size() != convs_.size() || rhs.size() != convs_.size()) {
    throw ShapeError("FusionModule: expected " + std::to_string(convs_.size()) + " stages per branch, got " +
                     std::to_string(lhs.size()) + " and " + std::to_string(rhs.size()));
  }
  std::vector<Tensor> fused;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    fused.push_back(leaky_relu(convs_[i](concat({lhs[i], rhs[i]}, 1)), kLeakySlope));
  }
  return fused;
}

void FusionModule::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + ".stage" + std::to_string(i));
}

Decoder::Decoder(std::span<const std::size_t> stage_channels, std::size_t width, Rng& rng) {
  if (stage_channels.size() < 2) throw std::invalid_argument("Decoder: needs at least two stages");
  for (std::size_t c : stage_channels) lateral_.emplace_back(c, width, 3, 1, 1, rng);
  head_ = Conv2d(width, 1, 3, 1, 1, rng);
}

DecoderOutput Decoder::forward(std::span<const Tensor> stages) const {
  if (stages.size() != lateral_.size()) {
    throw ShapeError("Decoder: expected " + std::to_string(lateral_.size()) + " stages, got " +
                     std::to_string(stages.size()));
  }
  DecoderOutput out;
  std::size_t k = stages.size() - 1;
  Tensor x = leaky_relu(lateral_[k](stages[k]), kLeakySlope);
  while (k-- > 0) {
    x = add(upsample2x(x), leaky_relu(lateral_[k](stages[k]), kLeakySlope));
    if (k == 1) out.info = x;
  }
  out.prediction = sigmoid(head_(upsample2x(x)));
  return out;
}

void Decoder::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < lateral_.size(); ++i) lateral_[i].collect(out, prefix + ".lateral" + std::to_string(i));
  head_.collect(out, prefix + ".head");
}

void check_input_pair(const Tensor& x_r, const Tensor& x_d, std::size_t rgb_channels) {
  if (x_r.rank() != 4 || x_r.dim(1) != rgb_channels) {
    throw ShapeError("RGB input must be N x " + std::to_string(rgb_channels) + " x H x W, got " + shape_str(x_r.shape()));
  }
  if (x_d.rank() != 4 || x_d.dim(1) != 1) throw ShapeError("depth input must be N x 1 x H x W, got " + shape_str(x_d.shape()));
  if (x_d.dim(0) != x_r.dim(0) || x_d.dim(2) != x_r.dim(2) || x_d.dim(3) != x_r.dim(3)) {
    throw ShapeError("RGB " + shape_str(x_r.shape()) + " and depth " + shape_str(x_d.shape()) + " are not aligned");
  }
  if (x_r.dim(2) % 32 != 0) throw ShapeError("input height (dimension 2) must be divisible by 32, got " + std::to_string(x_r.dim(2)));
  if (x_r.dim(3) % 32 != 0) throw ShapeError("input width (dimension 3) must be divisible by 32, got " + std::to_string(x_r.dim(3)));
}

SaliencyNet::SaliencyNet(const NetConfig& config, Rng& rng) : config_(config) {
  if (config.image_size == 0 || config.image_size % 32 != 0) {
    throw std::invalid_argument("SaliencyNet: image size must be a positive multiple of 32");
  }
  rgb_encoder_ = EncoderSemantic(3, rng);
  depth_encoder_ = EncoderDetail(1, rng);
  rgb_decoder_ = Decoder(EncoderSemantic::kStageChannels, config.decoder_width, rng);
  const std::size_t rgb5[] = {16, 32, 64, 64, 64};
  fusion_ = FusionModule(rgb5, EncoderDetail::kStageChannels, EncoderDetail::kStageChannels, rng);
  rgbd_decoder_ = Decoder(EncoderDetail::kStageChannels, config.decoder_width, rng);
}

StageOneOutput SaliencyNet::forward(const Tensor& x_r, const Tensor& x_d) const {
  check_input_pair(x_r, x_d);
  const auto f_r = rgb_encoder_.forward(x_r);
  const auto f_d = depth_encoder_.forward(x_d);
  auto rgb = rgb_decoder_.forward(f_r);
  const auto f_r5 = duplicate_top(f_r);
  const auto f_rgbd = fusion_.forward(f_r5, f_d);
  auto rgbd = rgbd_decoder_.forward(f_rgbd);
  return {rgb.prediction, rgb.info, rgbd.prediction, rgbd.info};
}

NamedParams SaliencyNet::named_parameters() const {
  NamedParams out;
  rgb_encoder_.collect(out, "stage1.rgb_encoder");
  depth_encoder_.collect(out, "stage1.depth_encoder");
  rgb_decoder_.collect(out, "stage1.rgb_decoder");
  fusion_.collect(out, "stage1.fusion");
  rgbd_decoder_.collect(out, "stage1.rgbd_decoder");
  return out;
}

NamedParams SaliencyNet::rgb_encoder_parameters() const {
  NamedParams out;
  rgb_encoder_.collect(out, "stage1.rgb_encoder");
  return out;
}

NamedParams SaliencyNet::depth_encoder_parameters() const {
  NamedParams out;
  depth_encoder_.collect(out, "stage1.depth_encoder");
  return out;
}

}  // namespace mistseg::net
