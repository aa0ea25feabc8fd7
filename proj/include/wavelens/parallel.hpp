#pragma once

#include <cstddef>
#include <functional>

namespace wavelens {

// Process-wide worker count for parallel_for. 0 means "hardware concurrency".
void set_thread_count(int n);
int thread_count();

// Runs fn(begin, end) over static contiguous chunks of [0, n). Chunk boundaries
// depend only on n and the worker count, and every chunk writes disjoint state,
// so results must not depend on scheduling. Callers that accumulate shared
// state are responsible for a deterministic reduction order.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace wavelens
