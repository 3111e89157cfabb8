#pragma once

#include <cstddef>
#include <cstdint>

#include "mistseg/nn.hpp"
#include "mistseg/optim.hpp"

namespace mistseg {

/// Diagonal Gaussian, batched: mu and log_var are N x D.
struct DiagGaussian {
  Tensor mu;
  Tensor log_var;

  std::size_t batch() const { return mu.dim(0); }
  std::size_t dim() const { return mu.dim(1); }
};

/// Per-row log density, returns a length-N tensor.
Tensor gaussian_log_prob(const DiagGaussian& g, const Tensor& y);

}  // namespace mistseg

namespace mistseg::mi {

inline constexpr double kLogVarScale = 4.0;

/// Variational conditional q(y|x) = N(mu(x), exp(log_var(x))).
///
/// Both heads are two fully connected layers around a ReLU; the log-variance
/// head ends in tanh scaled by kLogVarScale, so log_var stays in [-4, 4].
class ApproxNet {
 public:
  ApproxNet() = default;
  /// Hidden width defaults to 2 * x_dim.
  ApproxNet(std::size_t x_dim, std::size_t y_dim, Rng& rng, std::size_t hidden = 0);

  /// With `track_params` false the weights enter the graph as constants, so
  /// gradients reach `x` but never the approximation network itself.
  DiagGaussian forward(const Tensor& x, bool track_params = true) const;

  NamedParams named_parameters(const std::string& prefix = "q") const;
  std::size_t x_dim() const { return mu1_.weight.dim(0); }
  std::size_t y_dim() const { return mu2_.weight.dim(1); }

 private:
  Linear mu1_, mu2_, lv1_, lv2_;
};

/// Global average pool of an information feature map (N x C x H x W -> N x C).
Tensor pool_feature(const Tensor& f_info);

/// Sampled vCLUB estimate (1/N) sum_i [log q(y_i|x_i) - log q(y_{(i+1) mod N}|x_i)].
Tensor vclub_sampled(const Tensor& x, const Tensor& y, const ApproxNet& q, bool track_q_params = false);

/// One likelihood-maximizing step on q using detached copies of the batch.
/// Returns the negative mean log-likelihood before the step.
double train_q_step(const Tensor& x, const Tensor& y, const ApproxNet& q, Adam& optimizer);

/// tanh of the pooled feature. q's log-variance is bounded, so unbounded
/// inputs would let the main network inflate features until q cannot fit.
Tensor estimator_input(const Tensor& f_info);

/// vCLUB between squashed pooled RGB-D (x) and RGB (y) information features.
/// Gradients reach both feature branches and never q.
Tensor mi_regularizer(const Tensor& f_rgbd_info, const Tensor& f_r_info, const ApproxNet& q);

}  // namespace mistseg::mi

namespace mistseg::mi {

struct GaussianDemoOptions {
  std::size_t batch = 512;
  int steps = 1500;
  double lr = 5e-3;
  std::size_t eval_samples = 10000;
};

/// Trains q on x ~ N(0,1), y = rho x + sqrt(1 - rho^2) e and returns the
/// sampled vCLUB estimate over a fresh evaluation batch.
double estimate_gaussian_mi(double rho, std::uint64_t seed, const GaussianDemoOptions& options = {});

/// -0.5 ln(1 - rho^2).
double gaussian_mi(double rho);

}  // namespace mistseg::mi
