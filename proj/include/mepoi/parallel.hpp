#pragma once

#include <cstdint>
#include <functional>

namespace mepoi {

// Global worker-thread cap. Defaults to 1: every numeric path is
// single-threaded unless a caller opts in.
int thread_count();
void set_thread_count(int n);

// Splits [0, n) into one contiguous chunk per worker and runs `chunk(lo, hi)`
// on each. Chunk boundaries depend only on n and the configured thread count,
// and each chunk writes disjoint output, so results are reproducible for a
// fixed setting.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& chunk);

}  // namespace mepoi
