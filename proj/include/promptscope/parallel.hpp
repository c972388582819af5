#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace promptscope {

struct ParallelOptions {
  /// Worker count; 0 means std::thread::hardware_concurrency().
  std::size_t threads = 0;

  std::size_t resolved() const noexcept {
    if (threads != 0) return threads;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }
};

/// Splits [0, count) into at most `workers` contiguous chunks and runs
/// fn(chunk_index, begin, end) on each. Returns the number of chunks used.
/// The first exception thrown by any chunk is rethrown after all join.
template <typename Fn>
std::size_t parallel_chunks(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    fn(std::size_t{0}, std::size_t{0}, count);
    return 1;
  }
  const std::size_t base = count / workers;
  const std::size_t extra = count % workers;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    std::size_t begin = 0;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t end = begin + base + (w < extra ? 1 : 0);
      pool.emplace_back([&, w, begin, end] {
        try {
          fn(w, begin, end);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
      begin = end;
    }
  }
  if (failure) std::rethrow_exception(failure);
  return workers;
}

}  // namespace promptscope
