#include "mistseg/miclub.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "mistseg/errors.hpp"

namespace mistseg {

Tensor gaussian_log_prob(const DiagGaussian& g, const Tensor& y) {
  if (g.mu.shape() != y.shape() || g.log_var.shape() != y.shape()) {
    throw ShapeError("gaussian_log_prob: sample " + shape_str(y.shape()) + " vs mean " + shape_str(g.mu.shape()) +
                     " vs log-variance " + shape_str(g.log_var.shape()));
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor quad = div(square(sub(y, g.mu)), mul_scalar(exp(g.log_var), 2.0));
  Tensor per_dim = mul_scalar(add_scalar(add(mul_scalar(g.log_var, 0.5), quad), half_log_2pi), -1.0);
  return y.rank() == 2 ? sum_dim(per_dim, 1) : reshape(sum(per_dim), Shape{1});
}

}  // namespace mistseg

namespace mistseg::mi {

namespace {

Linear frozen(const Linear& l) {
  Linear out;
  out.weight = l.weight.detach();
  out.bias = l.bias.detach();
  return out;
}

void require_batch(const char* op, const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected N x D batches, got " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  if (x.dim(0) != y.dim(0)) {
    throw ShapeError(std::string(op) + ": batch dimension 0 differs (" + std::to_string(x.dim(0)) + " vs " +
                     std::to_string(y.dim(0)) + ")");
  }
  if (x.dim(0) == 0) throw ShapeError(std::string(op) + ": empty batch");
}

}  // namespace

ApproxNet::ApproxNet(std::size_t x_dim, std::size_t y_dim, Rng& rng, std::size_t hidden) {
  if (x_dim == 0 || y_dim == 0) throw std::invalid_argument("ApproxNet: feature dimension must be at least 1");
  if (hidden == 0) hidden = 2 * x_dim;
  mu1_ = Linear(x_dim, hidden, rng);
  mu2_ = Linear(hidden, y_dim, rng);
  lv1_ = Linear(x_dim, hidden, rng);
  lv2_ = Linear(hidden, y_dim, rng);
}

DiagGaussian ApproxNet::forward(const Tensor& x, bool track_params) const {
  if (x.rank() != 2 || x.dim(1) != x_dim()) {
    throw ShapeError("ApproxNet: input must be N x " + std::to_string(x_dim()) + ", got " + shape_str(x.shape()));
  }
  const Linear m1 = track_params ? mu1_ : frozen(mu1_);
  const Linear m2 = track_params ? mu2_ : frozen(mu2_);
  const Linear l1 = track_params ? lv1_ : frozen(lv1_);
  const Linear l2 = track_params ? lv2_ : frozen(lv2_);
  DiagGaussian g;
  g.mu = m2(relu(m1(x)));
  g.log_var = mul_scalar(tanh(l2(relu(l1(x)))), kLogVarScale);
  return g;
}

NamedParams ApproxNet::named_parameters(const std::string& prefix) const {
  NamedParams out;
  mu1_.collect(out, prefix + ".mu.0");
  mu2_.collect(out, prefix + ".mu.1");
  lv1_.collect(out, prefix + ".logvar.0");
  lv2_.collect(out, prefix + ".logvar.1");
  return out;
}

Tensor pool_feature(const Tensor& f_info) {
  if (f_info.rank() == 3) return global_avg_pool(reshape(f_info, Shape{1, f_info.dim(0), f_info.dim(1), f_info.dim(2)}));
  return global_avg_pool(f_info);
}

Tensor vclub_sampled(const Tensor& x, const Tensor& y, const ApproxNet& q, bool track_q_params) {
  require_batch("vclub_sampled", x, y);
  const std::size_t n = x.dim(0);
  std::vector<std::size_t> shift(n);
  for (std::size_t i = 0; i < n; ++i) shift[i] = (i + 1) % n;
  const DiagGaussian g = q.forward(x, track_q_params);
  Tensor positive = gaussian_log_prob(g, y);
  Tensor negative = gaussian_log_prob(g, gather_rows(y, shift));
  return mean(sub(positive, negative));
}

double train_q_step(const Tensor& x, const Tensor& y, const ApproxNet& q, Adam& optimizer) {
  require_batch("train_q_step", x, y);
  if (x.dim(1) == 0 || y.dim(1) == 0) throw std::invalid_argument("train_q_step: feature dimension must be at least 1");
  optimizer.zero_grad();
  Tensor nll = mul_scalar(mean(gaussian_log_prob(q.forward(x.detach(), true), y.detach())), -1.0);
  backward(nll);
  optimizer.step();
  return nll.item();
}

Tensor estimator_input(const Tensor& f_info) { return tanh(pool_feature(f_info)); }

Tensor mi_regularizer(const Tensor& f_rgbd_info, const Tensor& f_r_info, const ApproxNet& q) {
  return vclub_sampled(estimator_input(f_rgbd_info), estimator_input(f_r_info), q, false);
}

namespace {

void correlated_pairs(double rho, std::size_t n, Rng& rng, Tensor& x, Tensor& y) {
  x = rng.normal_tensor({n, 1});
  y = Tensor({n, 1});
  const double noise = std::sqrt(1.0 - rho * rho);
  auto xd = x.data();
  auto yd = y.mutable_data();
  for (std::size_t i = 0; i < n; ++i) yd[i] = rho * xd[i] + noise * rng.normal();
}

}  // namespace

double estimate_gaussian_mi(double rho, std::uint64_t seed, const GaussianDemoOptions& options) {
  if (!(rho > -1.0 && rho < 1.0)) throw std::invalid_argument("estimate_gaussian_mi: rho must lie in (-1, 1)");
  Rng root(seed);
  Rng init = root.fork(1);
  Rng data = root.fork(2);
  ApproxNet q(1, 1, init);
  Adam opt(param_values(q.named_parameters()), {.lr = options.lr});
  Tensor x, y;
  for (int step = 0; step < options.steps; ++step) {
    correlated_pairs(rho, options.batch, data, x, y);
    train_q_step(x, y, q, opt);
  }
  NoGradGuard no_grad;
  correlated_pairs(rho, options.eval_samples, data, x, y);
  return vclub_sampled(x, y, q).item();
}

double gaussian_mi(double rho) { return -0.5 * std::log1p(-rho * rho); }

}  // namespace mistseg::mi
