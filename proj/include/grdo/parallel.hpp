#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace grdo {

// Process-wide worker cap. Defaults to GRDO_THREADS or the hardware count.
// All parallel loops in this library partition work statically and reduce in
// a fixed order, so results are bitwise independent of this setting.
inline int& thread_count() {
  static int count = [] {
    if (const char* env = std::getenv("GRDO_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return count;
}

// Static-partition parallel loop: fn(i) for i in [0, n). Each index must
// touch only its own output slots.
template <class Fn>
void parallel_for(size_t n, Fn&& fn) {
  const int workers = std::min<size_t>(thread_count(), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const size_t lo = w * chunk;
    const size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace grdo
