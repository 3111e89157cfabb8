#include "mistseg/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "mistseg/errors.hpp"

namespace mistseg {

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& o) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state holds a different parameter count");
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel()) throw ShapeError("adam_step: state shape mismatch for parameter " + std::to_string(k));
    auto data = p.mutable_data();
    const bool has = p.has_grad();
    std::span<const double> g = has ? p.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {}

void Adam::step() { adam_step(params_, state_, options_); }

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double step_decay_lr(double lr0, int epoch, int step_size, double rate) {
  if (step_size <= 0) throw std::invalid_argument("decay step must be positive");
  return lr0 * std::pow(rate, static_cast<double>(epoch / step_size));
}

}  // namespace mistseg
