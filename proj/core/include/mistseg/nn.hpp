#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mistseg/ops.hpp"
#include "mistseg/random.hpp"

namespace mistseg {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

std::vector<Tensor> param_values(const NamedParams& named);

/// Trainable 2-D convolution with bias. Weights use He-uniform initialization.
struct Conv2d {
  Tensor weight;  // out x in x k x k
  Tensor bias;    // out
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(NamedParams& out, const std::string& prefix) const;
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
};

/// Fully connected layer, weight stored input-major (in x out).
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(NamedParams& out, const std::string& prefix) const;
};

/// Instance statistics with a learned per-channel scale and shift.
struct AffineNorm {
  Tensor gamma;
  Tensor beta;

  AffineNorm() = default;
  explicit AffineNorm(std::size_t channels);

  Tensor operator()(const Tensor& x) const { return instance_norm(x, gamma, beta); }
  void collect(NamedParams& out, const std::string& prefix) const;
};

std::size_t parameter_count(const NamedParams& named);

}  // namespace mistseg
