#pragma once

#include <cstddef>
#include <functional>

namespace musicdiff {

// Number of worker threads to use, capped by the MUSICDIFF_THREADS
// environment variable (default: hardware concurrency).
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Items may execute on different threads, but any
// reduction the caller performs afterwards over per-index slots is in index
// order, so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace musicdiff
