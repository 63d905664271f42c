#pragma once

#include <cstddef>
#include <functional>

namespace ptn {

/// Number of worker threads used for intra-op loops (default 1).
void set_num_threads(int threads);
int num_threads();

/// Runs fn(i) for i in [0, n). Iterations are split into contiguous chunks;
/// callers must only write to per-index outputs so the result does not depend
/// on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Keeps freed activation memory in the heap between training steps (glibc only;
/// a no-op elsewhere). Fresh pages are far slower than reused ones.
void keep_heap_memory();

}  // namespace ptn
