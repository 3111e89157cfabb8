#include "mistseg/refine_net.hpp"

#include <stdexcept>

namespace mistseg::net {

CvaeRefineNet::CvaeRefineNet(const RefineConfig& config, Rng& rng) : config_(config) {
  if (config.image_size == 0 || config.image_size % 32 != 0) {
    throw std::invalid_argument("CvaeRefineNet: image size must be a positive multiple of 32");
  }
  if (config.latent_dim == 0) throw std::invalid_argument("CvaeRefineNet: latent dimension must be positive");
  rgb_encoder_ = EncoderSemantic(3, rng);
  depth_encoder_ = EncoderSemantic(1, rng);
  fusion_ = FusionModule(EncoderSemantic::kStageChannels, EncoderSemantic::kStageChannels,
                         EncoderSemantic::kStageChannels, rng);
  injector_ = poe::LatentInjector(EncoderSemantic::kStageChannels[3], config.latent_dim, rng);
  decoder_ = Decoder(EncoderSemantic::kStageChannels, config.decoder_width, rng);
  prior_experts_ = {poe::ExpertNet(3, config.image_size, config.latent_dim, rng),
                    poe::ExpertNet(1, config.image_size, config.latent_dim, rng)};
  posterior_experts_ = {poe::ExpertNet(4, config.image_size, config.latent_dim, rng),
                        poe::ExpertNet(2, config.image_size, config.latent_dim, rng)};
}

std::vector<Tensor> CvaeRefineNet::fused_features(const Tensor& x_r, const Tensor& x_d) const {
  check_input_pair(x_r, x_d);
  const auto f_r = rgb_encoder_.forward(x_r);
  const auto f_d = depth_encoder_.forward(x_d);
  return fusion_.forward(f_r, f_d);
}

Tensor CvaeRefineNet::decode(const std::vector<Tensor>& fused, const Tensor& z) const {
  std::vector<Tensor> stages = fused;
  stages.back() = injector_(stages.back(), z);
  return decoder_.forward(stages).prediction;
}

DiagGaussian CvaeRefineNet::prior(const Tensor& x_r, const Tensor& x_d) const {
  return poe::joint_prior(x_r, x_d, prior_experts_);
}

DiagGaussian CvaeRefineNet::posterior(const Tensor& x_r, const Tensor& x_d, const Tensor& y) const {
  return poe::joint_posterior(x_r, x_d, y, posterior_experts_);
}

Tensor CvaeRefineNet::predict(const Tensor& x_r, const Tensor& x_d, const Tensor& noise) const {
  const auto fused = fused_features(x_r, x_d);
  const auto z = poe::reparameterize(prior(x_r, x_d), noise, poe::LatentSample::Source::Prior);
  return decode(fused, z.z);
}

NamedParams CvaeRefineNet::named_parameters() const {
  NamedParams out;
  rgb_encoder_.collect(out, "stage2.rgb_encoder");
  depth_encoder_.collect(out, "stage2.depth_encoder");
  fusion_.collect(out, "stage2.fusion");
  injector_.collect(out, "stage2.injector");
  decoder_.collect(out, "stage2.decoder");
  prior_experts_.collect(out, "stage2.prior");
  posterior_experts_.collect(out, "stage2.posterior");
  return out;
}

}  // namespace mistseg::net
