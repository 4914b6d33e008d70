#pragma once

#include <cstddef>
#include <functional>

namespace mit {

/// Worker cap: MIT_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
std::size_t worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads. Rethrows the
/// exception of the lowest failing index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mit
