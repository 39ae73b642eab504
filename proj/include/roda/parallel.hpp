#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace roda {

// Thread budget: RODA_THREADS env var, 0 or unset means auto. Cached on first use.
int thread_budget();

// Test hook: force a budget (n <= 0 restores env/auto behavior).
void set_thread_budget_override(int n);

// Runs fn(begin, end) over disjoint chunks of [0, n). Chunk boundaries depend
// only on `chunk`, never on the thread count, so any function whose result is
// written per-index is bit-identical for every RODA_THREADS value.
void parallel_chunks(size_t n, size_t chunk,
                     const std::function<void(size_t, size_t)>& fn);

// Deterministic parallel sum: per-chunk partial sums are combined sequentially
// in chunk order, so the floating-point result does not depend on the thread
// count. fn(begin, end) returns the partial sum for one chunk.
double parallel_sum_chunks(size_t n, size_t chunk,
                           const std::function<double(size_t, size_t)>& fn);

// Deterministic parallel max over per-chunk partial maxima.
double parallel_max_chunks(size_t n, size_t chunk,
                           const std::function<double(size_t, size_t)>& fn);

}  // namespace roda
