#pragma once

#include <cstddef>
#include <functional>

namespace tractcloud {

/// Worker cap for parallel_for; 0 means hardware concurrency.
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Runs fn(i) for i in [0, n) on up to max_threads() workers. Results must
/// not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tractcloud
