#include "mistseg/poecvae.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mistseg/errors.hpp"

namespace mistseg::poe {

DiagGaussian poe_combine(std::span<const DiagGaussian> experts, bool include_standard_prior, const Shape& latent_shape) {
  if (experts.empty() && !include_standard_prior) {
    throw std::invalid_argument("poe_combine: no experts and no standard prior");
  }
  if (experts.empty()) {
    if (latent_shape.empty()) throw std::invalid_argument("poe_combine: prior-only product needs a latent shape");
    return {Tensor::zeros(latent_shape), Tensor::zeros(latent_shape)};
  }
  const Shape& shape = experts.front().mu.shape();
  for (const auto& e : experts) {
    if (e.mu.shape() != shape || e.log_var.shape() != shape) {
      throw ShapeError("poe_combine: expert shape " + shape_str(e.mu.shape()) + " differs from " + shape_str(shape));
    }
  }
  Tensor precision = include_standard_prior ? Tensor::ones(shape) : Tensor::zeros(shape);
  Tensor weighted = Tensor::zeros(shape);
  for (const auto& e : experts) {
    Tensor t = exp(mul_scalar(e.log_var, -1.0));
    precision = add(precision, t);
    weighted = add(weighted, mul(e.mu, t));
  }
  DiagGaussian out;
  out.mu = div(weighted, precision);
  out.log_var = mul_scalar(log(precision), -1.0);
  return out;
}

Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mu.shape() != p.mu.shape() || q.log_var.shape() != p.log_var.shape() || q.mu.shape() != q.log_var.shape()) {
    throw ShapeError("kl_diag: dimension mismatch between " + shape_str(q.mu.shape()) + " and " + shape_str(p.mu.shape()));
  }
  // Each bracket is exactly zero when the parameters match.
  Tensor ratio = div(add(exp(q.log_var), square(sub(q.mu, p.mu))), exp(p.log_var));
  Tensor per_dim = mul_scalar(add(add_scalar(ratio, -1.0), sub(p.log_var, q.log_var)), 0.5);
  const double batch = q.mu.rank() >= 2 ? static_cast<double>(q.mu.dim(0)) : 1.0;
  return mul_scalar(sum(per_dim), 1.0 / batch);
}

LatentSample reparameterize(const DiagGaussian& g, const Tensor& noise, LatentSample::Source source) {
  if (noise.shape() != g.mu.shape()) {
    throw ShapeError("reparameterize: noise " + shape_str(noise.shape()) + " vs mean " + shape_str(g.mu.shape()));
  }
  return {add(g.mu, mul(exp(mul_scalar(g.log_var, 0.5)), noise)), source};
}

ExpertNet::ExpertNet(std::size_t in_channels, std::size_t image_size, std::size_t latent_dim, Rng& rng) {
  static constexpr std::size_t kChannels[] = {16, 32, 32, 64, 64};
  if (image_size % 32 != 0 || image_size == 0) throw std::invalid_argument("ExpertNet: image size must be a multiple of 32");
  std::size_t in = in_channels;
  for (std::size_t c : kChannels) {
    convs_.emplace_back(in, c, 4, 2, 1, rng);
    norms_.emplace_back(c);
    in = c;
  }
  const std::size_t side = image_size / 32;
  const std::size_t flat = in * side * side;
  mu_head_ = Linear(flat, latent_dim, rng);
  logvar_head_ = Linear(flat, latent_dim, rng);
  // Start near the standard normal so the annealed KL ramps from a sane value.
  for (double& w : logvar_head_.weight.mutable_data()) w *= 0.1;
}

DiagGaussian ExpertNet::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels()) {
    throw ShapeError("ExpertNet: expected N x " + std::to_string(in_channels()) + " x H x W, got " + shape_str(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) h = leaky_relu(norms_[i](convs_[i](h)), 0.01);
  const std::size_t n = h.dim(0);
  Tensor flat = reshape(h, Shape{n, h.numel() / n});
  if (flat.dim(1) != mu_head_.weight.dim(0)) {
    throw ShapeError("ExpertNet: flattened feature has " + std::to_string(flat.dim(1)) + " entries, heads expect " +
                     std::to_string(mu_head_.weight.dim(0)));
  }
  return {mu_head_(flat), clamp(logvar_head_(flat), -kLogVarClamp, kLogVarClamp)};
}

void ExpertNet::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(out, prefix + ".conv" + std::to_string(i));
    norms_[i].collect(out, prefix + ".norm" + std::to_string(i));
  }
  mu_head_.collect(out, prefix + ".mu");
  logvar_head_.collect(out, prefix + ".logvar");
}

void ModalityExperts::collect(NamedParams& out, const std::string& prefix) const {
  rgb.collect(out, prefix + ".rgb");
  depth.collect(out, prefix + ".depth");
}

DiagGaussian joint_prior(const Tensor& x_r, const Tensor& x_d, const ModalityExperts& prior_nets) {
  const DiagGaussian experts[] = {prior_nets.rgb.forward(x_r), prior_nets.depth.forward(x_d)};
  return poe_combine(experts, true);
}

DiagGaussian joint_posterior(const Tensor& x_r, const Tensor& x_d, const Tensor& y, const ModalityExperts& posterior_nets) {
  if (y.rank() != 4 || x_r.rank() != 4 || x_d.rank() != 4 || y.dim(0) != x_r.dim(0) || y.dim(2) != x_r.dim(2) ||
      y.dim(3) != x_r.dim(3) || x_d.dim(2) != x_r.dim(2) || x_d.dim(3) != x_r.dim(3)) {
    throw ShapeError("joint_posterior: label " + shape_str(y.shape()) + " is not aligned with inputs " +
                     shape_str(x_r.shape()) + " / " + shape_str(x_d.shape()));
  }
  const DiagGaussian experts[] = {posterior_nets.rgb.forward(concat({x_r, y}, 1)),
                                  posterior_nets.depth.forward(concat({x_d, y}, 1))};
  return poe_combine(experts, true);
}

double linear_anneal(long iteration, long total_iterations, double fraction) {
  const double ramp = fraction * static_cast<double>(total_iterations);
  if (ramp <= 0.0) return 1.0;
  return std::min(1.0, static_cast<double>(iteration) / ramp);
}

Tensor elbo_loss(const Tensor& recon_loss, const Tensor& kl, double lambda, double beta, double anneal) {
  if (anneal < 0.0 || anneal > 1.0) throw std::invalid_argument("elbo_loss: anneal must lie in [0, 1]");
  return add(mul_scalar(recon_loss, lambda), mul_scalar(kl, beta * anneal));
}

Tensor elbo_loss(const Tensor& recon_loss, const DiagGaussian& q_post, const DiagGaussian& p_prior, double lambda,
                 double beta, double anneal) {
  return elbo_loss(recon_loss, kl_diag(q_post, p_prior), lambda, beta, anneal);
}

LatentInjector::LatentInjector(std::size_t channels, std::size_t latent_dim, Rng& rng)
    : conv_(channels + latent_dim, channels, 3, 1, 1, rng) {}

Tensor LatentInjector::operator()(const Tensor& top_feature, const Tensor& z) const {
  if (top_feature.rank() != 4 || z.rank() != 2 || z.dim(0) != top_feature.dim(0)) {
    throw ShapeError("inject_latent: feature " + shape_str(top_feature.shape()) + " and latent " + shape_str(z.shape()) +
                     " disagree on the batch dimension");
  }
  Tensor tiled = tile_spatial(z, top_feature.dim(2), top_feature.dim(3));
  return conv_(concat({top_feature, tiled}, 1));
}

void LatentInjector::collect(NamedParams& out, const std::string& prefix) const { conv_.collect(out, prefix + ".conv"); }

}  // namespace mistseg::poe
