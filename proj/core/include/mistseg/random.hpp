#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mistseg/tensor.hpp"

namespace mistseg {

/// Seeded generator with platform-independent uniform and normal draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer in [lo, hi].
  long uniform_int(long lo, long hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Tensor normal_tensor(Shape shape);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

  /// Independent child stream, e.g. one per sample.
  Rng fork(std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(i) - 1));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace mistseg
