#include "roda/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace roda {

namespace {

int g_override = 0;

int detect_budget() {
    const char* env = std::getenv("RODA_THREADS");
    if (env && *env) {
        long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<int>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (hw > 16) hw = 16;
    return static_cast<int>(hw);
}

// Executes chunk tasks on up to `threads` workers pulling from a shared
// counter. Each chunk is processed entirely by one worker.
template <typename ChunkFn>
void run_chunked(size_t n_chunks, int threads, ChunkFn&& fn) {
    if (n_chunks == 0) return;
    if (threads <= 1 || n_chunks == 1) {
        for (size_t c = 0; c < n_chunks; ++c) fn(c);
        return;
    }
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            size_t c = next.fetch_add(1);
            if (c >= n_chunks) break;
            fn(c);
        }
    };
    size_t n_workers = static_cast<size_t>(threads);
    if (n_workers > n_chunks) n_workers = n_chunks;
    std::vector<std::thread> pool;
    pool.reserve(n_workers - 1);
    for (size_t t = 1; t < n_workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

}  // namespace

int thread_budget() {
    if (g_override > 0) return g_override;
    static int cached = detect_budget();
    return cached;
}

void set_thread_budget_override(int n) { g_override = n > 0 ? n : 0; }

void parallel_chunks(size_t n, size_t chunk,
                     const std::function<void(size_t, size_t)>& fn) {
    if (n == 0) return;
    if (chunk == 0) chunk = 1;
    size_t n_chunks = (n + chunk - 1) / chunk;
    run_chunked(n_chunks, thread_budget(), [&](size_t c) {
        size_t b = c * chunk;
        size_t e = b + chunk < n ? b + chunk : n;
        fn(b, e);
    });
}

double parallel_sum_chunks(size_t n, size_t chunk,
                           const std::function<double(size_t, size_t)>& fn) {
    if (n == 0) return 0.0;
    if (chunk == 0) chunk = 1;
    size_t n_chunks = (n + chunk - 1) / chunk;
    std::vector<double> partial(n_chunks, 0.0);
    run_chunked(n_chunks, thread_budget(), [&](size_t c) {
        size_t b = c * chunk;
        size_t e = b + chunk < n ? b + chunk : n;
        partial[c] = fn(b, e);
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double parallel_max_chunks(size_t n, size_t chunk,
                           const std::function<double(size_t, size_t)>& fn) {
    if (n == 0) return 0.0;
    if (chunk == 0) chunk = 1;
    size_t n_chunks = (n + chunk - 1) / chunk;
    std::vector<double> partial(n_chunks, 0.0);
    run_chunked(n_chunks, thread_budget(), [&](size_t c) {
        size_t b = c * chunk;
        size_t e = b + chunk < n ? b + chunk : n;
        partial[c] = fn(b, e);
    });
    double best = partial[0];
    for (double p : partial)
        if (p > best) best = p;
    return best;
}

}  // namespace roda
