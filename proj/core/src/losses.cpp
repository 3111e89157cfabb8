#include "mistseg/losses.hpp"

#include <iostream>

#include "mistseg/errors.hpp"
#include "mistseg/ops.hpp"

namespace mistseg::pipeline {

namespace {

Tensor as_nchw(const Tensor& t, const char* op) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3) return reshape(t, Shape{1, t.dim(0), t.dim(1), t.dim(2)});
  throw ShapeError(std::string(op) + ": expected N x 1 x H x W or 1 x H x W, got " + shape_str(t.shape()));
}

}  // namespace

Tensor partial_ce(const Tensor& s, std::span<const Label> labels) {
  if (s.numel() != labels.size()) {
    throw ShapeError("partial_ce: prediction " + shape_str(s.shape()) + " vs mask of " + std::to_string(labels.size()) +
                     " pixels");
  }
  std::vector<double> pos(labels.size(), 0.0), neg(labels.size(), 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::Foreground) pos[i] = 1.0, ++n;
    if (labels[i] == Label::Background) neg[i] = 1.0, ++n;
  }
  if (n == 0) {
    std::cerr << "warning: partial_ce called on a mask without labeled pixels\n";
    return Tensor::scalar(0.0);
  }
  const double scale = -1.0 / static_cast<double>(n);
  Tensor p = clamp(s, kProbEps, 1.0 - kProbEps);
  Tensor ll = add(mul(log(p), Tensor(s.shape(), std::move(pos))), mul(log(1.0 - p), Tensor(s.shape(), std::move(neg))));
  return mul_scalar(sum(ll), scale);
}

Tensor partial_ce(const Tensor& s, const ScribbleMask& mask) { return partial_ce(s, std::span<const Label>(mask.labels)); }

Tensor structure_weights(const Tensor& target) {
  NoGradGuard no_grad;
  Tensor t = as_nchw(target.detach(), "structure_weights");
  // Window mean over in-image pixels only.
  Tensor pooled = div(avg_pool2d(t, 15, 1, 7), avg_pool2d(Tensor::ones(t.shape()), 15, 1, 7));
  return add_scalar(mul_scalar(abs(sub(pooled, t)), 5.0), 1.0);
}

Tensor structure_aware_loss(const Tensor& s, const Tensor& target) {
  if (s.numel() != target.numel()) {
    throw ShapeError("structure_aware_loss: prediction " + shape_str(s.shape()) + " vs target " + shape_str(target.shape()));
  }
  Tensor pred = as_nchw(s, "structure_aware_loss");
  Tensor t = reshape(target.detach(), pred.shape());
  Tensor w = structure_weights(t);
  const std::size_t n = pred.dim(0);
  const std::size_t per = pred.numel() / n;

  Tensor p = clamp(pred, kProbEps, 1.0 - kProbEps);
  Tensor bce = -add(mul(t, log(p)), mul(1.0 - t, log(1.0 - p)));
  auto per_sample = [&](const Tensor& x) { return sum_dim(reshape(x, Shape{n, per}), 1); };
  Tensor w_sum = per_sample(w);
  Tensor wbce = div(per_sample(mul(w, bce)), w_sum);
  Tensor inter = per_sample(mul(mul(pred, t), w));
  Tensor uni = per_sample(mul(add(pred, t), w));
  Tensor wiou = 1.0 - div(inter + 1.0, sub(uni, inter) + 1.0);
  return mean(add(wbce, wiou));
}

}  // namespace mistseg::pipeline
