#include "mepoi/parallel.hpp"

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mepoi {

namespace {
std::atomic<int> g_threads{1};
}

int thread_count() { return g_threads.load(std::memory_order_relaxed); }

void set_thread_count(int n) { g_threads.store(std::max(1, n), std::memory_order_relaxed); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& chunk) {
  if (n <= 0) return;
  int workers = static_cast<int>(std::min<std::int64_t>(thread_count(), n));
  if (workers <= 1) {
    chunk(0, n);
    return;
  }
  const std::int64_t per = (n + workers - 1) / workers;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(workers)
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = w * per;
    const std::int64_t hi = std::min<std::int64_t>(n, lo + per);
    if (lo < hi) chunk(lo, hi);
  }
#else
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = w * per;
    const std::int64_t hi = std::min<std::int64_t>(n, lo + per);
    if (lo < hi) chunk(lo, hi);
  }
#endif
}

}  // namespace mepoi
