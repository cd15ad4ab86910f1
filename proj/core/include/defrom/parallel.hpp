#pragma once

#include <cstddef>
#include <functional>

namespace defrom {

// Global cap on worker threads. n <= 0 restores the hardware default.
// The environment variable DEFLATE_ROM_THREADS, when set, provides the
// initial value of the cap.
void set_max_threads(int n);
int max_threads();

// Runs fn(i) for every i in [begin, end), possibly on several threads.
// The partition into chunks is a pure function of the range and the thread
// cap, and every result must be written to a slot owned by index i, so the
// outcome is identical for any thread count. Reductions must be performed
// serially by the caller afterwards. The first exception thrown by fn is
// rethrown on the calling thread once all workers have joined.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn);

}  // namespace defrom
