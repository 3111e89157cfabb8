#pragma once

#include <span>
#include <vector>

#include "mistseg/tensor.hpp"

namespace mistseg {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

/// One bias-corrected Adam update of every parameter from its gradient buffer.
/// A parameter without a gradient is treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options);

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step();
  void zero_grad();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  const AdamState& state() const { return state_; }
  std::span<const Tensor> params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  AdamState state_;
};

/// Step schedule: lr0 * rate^floor(epoch / step_size).
double step_decay_lr(double lr0, int epoch, int step_size, double rate);

}  // namespace mistseg
