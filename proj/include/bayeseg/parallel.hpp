#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace bayeseg {

/// Worker threads used by parallel_chunks. 0 = hardware concurrency.
/// BAYESEG_THREADS overrides the default at startup.
void set_thread_count(int n);
int thread_count();

/// Splits [0, n) into fixed-size chunks (grain independent of thread count)
/// and runs fn(chunk_index, begin, end) for each. Chunk geometry, and hence
/// any per-chunk reduction order, is identical for every thread count.
void parallel_chunks(std::size_t n, std::size_t grain,
                     const std::function<void(std::size_t, std::size_t,
                                              std::size_t)>& fn);

std::size_t chunk_count(std::size_t n, std::size_t grain);

/// Ordered reduction helper: runs fn per chunk storing partial sums, then
/// accumulates partials in chunk order.
double parallel_sum(std::size_t n, std::size_t grain,
                    const std::function<double(std::size_t, std::size_t)>& fn);

}  // namespace bayeseg
