#pragma once

#include <functional>

namespace vci {

// Worker-thread cap from the VCI_THREADS environment variable; absent or
// invalid means 1 (single-threaded, determinism-first default). Read once.
int worker_threads();

// Runs fn(begin, end) over a static partition of [0, n) across the worker
// threads. Callers must only write to disjoint, index-owned outputs so the
// result is identical for any thread count. `work_per_item` is a rough flop
// estimate per index; small jobs run serially since spawning threads costs
// far more than the work itself.
void parallel_for(long n, double work_per_item,
                  const std::function<void(long, long)>& fn);

}  // namespace vci
