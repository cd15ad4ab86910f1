#include "defrom/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace defrom {

namespace {

int hardware_default() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

int initial_cap() {
  if (const char* env = std::getenv("DEFLATE_ROM_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return hardware_default();
}

std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{initial_cap()};
  return cap;
}

}  // namespace

void set_max_threads(int n) {
  thread_cap().store(n > 0 ? n : hardware_default());
}

int max_threads() { return thread_cap().load(); }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn) {
  if (begin >= end) return;
  const std::size_t count = end - begin;
  const int cap = max_threads();
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(cap, 1)), count);

  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }

  std::mutex error_mutex;
  std::exception_ptr first_error;
  // Contiguous blocks; the first (count % workers) blocks get one extra item.
  const std::size_t base = count / workers;
  const std::size_t extra = count % workers;

  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t cursor = begin;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t len = base + (w < extra ? 1 : 0);
    const std::size_t lo = cursor;
    const std::size_t hi = lo + len;
    cursor = hi;
    pool.emplace_back([&, lo, hi]() {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace defrom
