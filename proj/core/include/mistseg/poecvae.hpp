#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mistseg/miclub.hpp"
#include "mistseg/nn.hpp"

namespace mistseg::poe {

inline constexpr double kLogVarClamp = 8.0;
inline constexpr double kDefaultLambda = 1.0;
inline constexpr double kDefaultBeta = 5.0;

struct LatentSample {
  enum class Source { Prior, Posterior };
  Tensor z;  // N x L
  Source source = Source::Prior;
};

/// Precision-weighted product of diagonal Gaussian experts. With
/// `include_standard_prior` an N(0, I) expert joins the product; with no
/// experts the result is that prior, shaped by `latent_shape`.
DiagGaussian poe_combine(std::span<const DiagGaussian> experts, bool include_standard_prior,
                         const Shape& latent_shape = {});

/// KL(q || p) summed over latent dimensions, averaged over the batch.
Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p);

/// z = mu + exp(log_var / 2) * noise.
LatentSample reparameterize(const DiagGaussian& g, const Tensor& noise,
                            LatentSample::Source source = LatentSample::Source::Posterior);

/// Five stride-2 4x4 convolutions (16, 32, 32, 64, 64 channels) with
/// instance-statistics affine normalization and leaky ReLU, then two linear
/// heads for mu and log_var.
class ExpertNet {
 public:
  ExpertNet() = default;
  ExpertNet(std::size_t in_channels, std::size_t image_size, std::size_t latent_dim, Rng& rng);

  DiagGaussian forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
  std::size_t in_channels() const { return convs_.front().in_channels(); }
  std::size_t latent_dim() const { return mu_head_.bias.numel(); }

 private:
  std::vector<Conv2d> convs_;
  std::vector<AffineNorm> norms_;
  Linear mu_head_;
  Linear logvar_head_;
};

/// One expert per modality.
struct ModalityExperts {
  ExpertNet rgb;
  ExpertNet depth;

  void collect(NamedParams& out, const std::string& prefix) const;
};

/// p(z) * q(z|x_r) * q(z|x_d).
DiagGaussian joint_prior(const Tensor& x_r, const Tensor& x_d, const ModalityExperts& prior_nets);

/// p(z) * q(z|x_r, y) * q(z|x_d, y); y is concatenated to each modality along channels.
DiagGaussian joint_posterior(const Tensor& x_r, const Tensor& x_d, const Tensor& y, const ModalityExperts& posterior_nets);

/// Linear ramp from 0 to 1 over the first `fraction` of all iterations.
double linear_anneal(long iteration, long total_iterations, double fraction = 0.2);

/// lambda * recon + beta * anneal * KL(q_post || p_prior).
Tensor elbo_loss(const Tensor& recon_loss, const DiagGaussian& q_post, const DiagGaussian& p_prior,
                 double lambda = kDefaultLambda, double beta = kDefaultBeta, double anneal = 1.0);
Tensor elbo_loss(const Tensor& recon_loss, const Tensor& kl, double lambda = kDefaultLambda,
                 double beta = kDefaultBeta, double anneal = 1.0);

/// Tiles z over the top-level feature, concatenates along channels and maps
/// back to the feature's channel count with a 3x3 convolution.
class LatentInjector {
 public:
  LatentInjector() = default;
  LatentInjector(std::size_t channels, std::size_t latent_dim, Rng& rng);

  Tensor operator()(const Tensor& top_feature, const Tensor& z) const;
  void collect(NamedParams& out, const std::string& prefix) const;
  Conv2d& conv() { return conv_; }

 private:
  Conv2d conv_;
};

}  // namespace mistseg::poe
