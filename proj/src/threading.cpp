#include "vci/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace vci {

int worker_threads() {
  static const int cached = [] {
    const char* env = std::getenv("VCI_THREADS");
    if (env == nullptr) return 1;
    int n = std::atoi(env);
    return n >= 1 ? n : 1;
  }();
  return cached;
}

void parallel_for(long n, double work_per_item,
                  const std::function<void(long, long)>& fn) {
  if (n <= 0) return;
  long threads = std::min<long>(worker_threads(), n);
  // below ~1e6 flops the spawn/join overhead outweighs any speedup
  if (static_cast<double>(n) * work_per_item < 1e6) threads = 1;
  if (threads <= 1) {
    fn(0, n);
    return;
  }
  const long chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (long t = 0; t < threads; ++t) {
    const long begin = t * chunk;
    const long end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace vci
