#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace rank1sense {

/// Worker cap: RANK1SENSE_THREADS if set (>= 1), otherwise hardware threads.
inline int max_threads() {
  if (const char* env = std::getenv("RANK1SENSE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

/// Runs body(i) for i in [0, n). Each index is processed exactly once; the
/// caller owns result placement (write to slot i), so output order never
/// depends on scheduling.
inline void parallel_for(int n, const std::function<void(int)>& body) {
  const int workers = std::min(max_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace rank1sense
