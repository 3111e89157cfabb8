#include "mistseg/random.hpp"

#include <cmath>
#include <numbers>

namespace mistseg {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

long Rng::uniform_int(long lo, long hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return lo + static_cast<long>(r % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Tensor Rng::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = normal();
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = uniform(lo, hi);
  return t;
}

Rng Rng::fork(std::uint64_t stream) {
  // splitmix64 of (draw ^ stream) decorrelates sibling streams.
  std::uint64_t z = engine_() ^ (stream * 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

}  // namespace mistseg
