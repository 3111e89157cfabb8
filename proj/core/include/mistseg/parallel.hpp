#pragma once

#include <cstddef>
#include <functional>

namespace mistseg {

/// Worker cap: MISTSEG_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// visited exactly once; the first exception is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mistseg
