#pragma once

#include <cstddef>
#include <vector>

#include "mistseg/poecvae.hpp"
#include "mistseg/saliencynet.hpp"

namespace mistseg::net {

struct RefineConfig {
  std::size_t image_size = 64;
  std::size_t decoder_width = 16;
  std::size_t latent_dim = 8;
};

/// Second-stage network: two semantic-style encoders fused per stage, a
/// latent code injected at the top stage, and prior/posterior expert pairs.
class CvaeRefineNet {
 public:
  CvaeRefineNet() = default;
  CvaeRefineNet(const RefineConfig& config, Rng& rng);

  std::vector<Tensor> fused_features(const Tensor& x_r, const Tensor& x_d) const;
  /// Prediction in (0, 1) from fused features and a latent sample (N x L).
  Tensor decode(const std::vector<Tensor>& fused, const Tensor& z) const;

  DiagGaussian prior(const Tensor& x_r, const Tensor& x_d) const;
  DiagGaussian posterior(const Tensor& x_r, const Tensor& x_d, const Tensor& y) const;

  /// Inference: z drawn from the joint prior with the given standard-normal noise.
  Tensor predict(const Tensor& x_r, const Tensor& x_d, const Tensor& noise) const;

  NamedParams named_parameters() const;
  std::vector<Tensor> parameters() const { return param_values(named_parameters()); }
  const RefineConfig& config() const { return config_; }

 private:
  RefineConfig config_;
  EncoderSemantic rgb_encoder_;
  EncoderSemantic depth_encoder_;
  FusionModule fusion_;
  poe::LatentInjector injector_;
  Decoder decoder_;
  poe::ModalityExperts prior_experts_;
  poe::ModalityExperts posterior_experts_;
};

}  // namespace mistseg::net
