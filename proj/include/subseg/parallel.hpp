#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace subseg {

/// Thread count for intra-op parallelism: SUBSEG_THREADS when set, else the
/// hardware concurrency.
inline int max_threads() {
  static const int n = [] {
    if (const char* env = std::getenv("SUBSEG_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

/// Runs fn(lo, hi) over a static split of [0, n). Every index is processed by
/// exactly one thread with a fixed inner order, so results are bit-identical
/// for any thread count. Threads are spawned per call and joined before
/// returning; kernels here are coarse enough that spawn cost is noise.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int nt = static_cast<int>(std::min<int64_t>(max_threads(), n));
  if (nt <= 1) {
    fn(0, n);
    return;
  }
  const int64_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<size_t>(nt - 1));
  for (int t = 1; t < nt; ++t) {
    const int64_t lo = t * chunk;
    const int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(0, std::min<int64_t>(n, chunk));
  for (auto& w : workers) w.join();
}

}  // namespace subseg
