#pragma once

#include <cstddef>
#include <functional>

namespace shapkit {

// Worker cap: SHAPKIT_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across worker_count() threads using a static
// contiguous partition. Callers write results by index so the outcome does
// not depend on scheduling. Exceptions from workers are rethrown (first by
// index order) after all workers join. Calls made from inside a worker run
// inline on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace shapkit

namespace shapkit {

// Splits [0, n) into fixed chunks of chunk_size (independent of the worker
// count) and runs fn(chunk_index, begin, end) for each, possibly in parallel.
void parallel_chunks(
    std::size_t n, std::size_t chunk_size,
    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace shapkit
