#pragma once

#include <cstddef>
#include <functional>

namespace rpointhop {

/// Worker count: RPH_THREADS when set and positive, otherwise hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Each index is visited exactly once; callers
/// must only write to per-index slots so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace rpointhop
