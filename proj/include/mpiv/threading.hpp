#pragma once

#include <cstdint>
#include <functional>

namespace mpiv {

// Fork-join worker pool with static chunking. Work items never share output
// elements, so results are identical for any thread count; the pool only
// changes wall-clock time.
class ThreadPool {
 public:
  explicit ThreadPool(int threads);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int thread_count() const { return threads_; }

  // Runs body(begin, end) over disjoint chunks of [begin, end).
  void parallel_for(int64_t begin, int64_t end,
                    const std::function<void(int64_t, int64_t)>& body);

 private:
  struct Impl;
  Impl* impl_;
  int threads_;
};

// Process-wide pool. Defaults to the hardware thread count; the CLI calls
// set_global_threads() before any work is issued.
ThreadPool& global_pool();
void set_global_threads(int threads);

}  // namespace mpiv
