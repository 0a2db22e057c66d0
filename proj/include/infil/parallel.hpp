#pragma once

#include <cstdint>
#include <functional>

namespace infil {

// Worker count used by parallel_for. Setting 0 re-resolves from the
// INFILMAP_THREADS environment variable, falling back to the hardware count.
void set_thread_count(int n);
int thread_count();

// Runs fn(chunk_begin, chunk_end) over a partition of [begin, end) into
// fixed-size chunks. Workers pull chunks through an atomic cursor; each index
// lands in exactly one chunk and callers must write only to disjoint state,
// so results are independent of the thread count and of the schedule.
void parallel_for_chunks(std::int64_t begin, std::int64_t end,
                         std::int64_t chunk,
                         const std::function<void(std::int64_t, std::int64_t)>& fn);

// Element-wise convenience wrapper around parallel_for_chunks.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn);

}  // namespace infil
