#include "infil/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace infil {

namespace {

int resolve_default_threads() {
    if (const char* env = std::getenv("INFILMAP_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

std::atomic<int> g_threads{0};

}  // namespace

void set_thread_count(int n) { g_threads.store(n > 0 ? n : 0); }

int thread_count() {
    int n = g_threads.load();
    if (n > 0) return n;
    n = resolve_default_threads();
    g_threads.store(n);
    return n;
}

void parallel_for_chunks(std::int64_t begin, std::int64_t end,
                         std::int64_t chunk,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (end <= begin) return;
    if (chunk < 1) chunk = 1;
    const std::int64_t total = end - begin;
    const std::int64_t nchunks = (total + chunk - 1) / chunk;
    int workers = std::min<std::int64_t>(thread_count(), nchunks);

    if (workers <= 1) {
        for (std::int64_t c = 0; c < nchunks; ++c) {
            std::int64_t lo = begin + c * chunk;
            fn(lo, std::min(lo + chunk, end));
        }
        return;
    }

    std::atomic<std::int64_t> cursor{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            std::int64_t c = cursor.fetch_add(1);
            if (c >= nchunks) return;
            std::int64_t lo = begin + c * chunk;
            try {
                fn(lo, std::min(lo + chunk, end));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    if (first_error) std::rethrow_exception(first_error);
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn) {
    const std::int64_t total = end - begin;
    std::int64_t chunk = std::max<std::int64_t>(1, total / (8 * thread_count()));
    parallel_for_chunks(begin, end, chunk, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
}

}  // namespace infil
