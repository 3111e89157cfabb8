#include "mistseg/nn.hpp"

#include <cmath>

namespace mistseg {

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return rng.uniform_tensor(std::move(shape), -bound, bound).set_requires_grad(true);
}

}  // namespace

std::vector<Tensor> param_values(const NamedParams& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

std::size_t parameter_count(const NamedParams& named) {
  std::size_t n = 0;
  for (const auto& [name, t] : named) n += t.numel();
  return n;
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_, Rng& rng)
    : weight(he_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng)),
      bias(Tensor::zeros({out}).set_requires_grad(true)),
      stride(stride_),
      padding(padding_) {}

void Conv2d::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(he_uniform({in, out}, in, rng)), bias(Tensor::zeros({out}).set_requires_grad(true)) {}

void Linear::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

AffineNorm::AffineNorm(std::size_t channels)
    : gamma(Tensor::ones({channels}).set_requires_grad(true)),
      beta(Tensor::zeros({channels}).set_requires_grad(true)) {}

void AffineNorm::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

}  // namespace mistseg
