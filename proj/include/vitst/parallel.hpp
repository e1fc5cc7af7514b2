#pragma once

#include <cstddef>
#include <functional>

namespace vitst {

// Global worker cap, set once from the CLI --threads flag. Default 1.
void set_max_threads(int n);
int max_threads();

// Runs fn(i) for i in [0, n). With more than one worker the index range is
// split into contiguous chunks, one per worker, and each index is still
// processed by exactly one thread, so any computation whose per-index work
// writes only to index-owned outputs produces bit-identical results at every
// thread count.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace vitst
