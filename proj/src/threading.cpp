#include "mpiv/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace mpiv {

namespace {
// Set while a thread is executing pool work; nested parallel_for calls from
// such a thread run inline instead of re-entering the pool.
thread_local bool tl_in_pool_work = false;
}  // namespace

struct ThreadPool::Impl {
  std::vector<std::thread> workers;
  std::mutex mutex;
  std::condition_variable cv_work;
  std::condition_variable cv_done;
  bool stop = false;

  // Current job, valid while busy > 0 or generation is fresh.
  const std::function<void(int64_t, int64_t)>* body = nullptr;
  int64_t begin = 0, end = 0, chunk = 1;
  std::atomic<int64_t> next{0};
  int busy = 0;
  uint64_t generation = 0;

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      std::unique_lock lock(mutex);
      cv_work.wait(lock, [&] { return stop || generation != seen; });
      if (stop) return;
      seen = generation;
      ++busy;
      lock.unlock();

      run_chunks();

      lock.lock();
      if (--busy == 0) cv_done.notify_all();
    }
  }

  void run_chunks() {
    tl_in_pool_work = true;
    for (;;) {
      int64_t lo = next.fetch_add(chunk);
      if (lo >= end) break;
      int64_t hi = std::min(end, lo + chunk);
      (*body)(lo, hi);
    }
    tl_in_pool_work = false;
  }
};

ThreadPool::ThreadPool(int threads) : impl_(new Impl), threads_(std::max(1, threads)) {
  for (int i = 0; i + 1 < threads_; ++i)
    impl_->workers.emplace_back([this] { impl_->worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard lock(impl_->mutex);
    impl_->stop = true;
  }
  impl_->cv_work.notify_all();
  for (auto& w : impl_->workers) w.join();
  delete impl_;
}

void ThreadPool::parallel_for(int64_t begin, int64_t end,
                              const std::function<void(int64_t, int64_t)>& body) {
  int64_t n = end - begin;
  if (n <= 0) return;
  if (threads_ == 1 || n == 1 || tl_in_pool_work) {
    body(begin, end);
    return;
  }
  // ~4 chunks per thread amortizes imbalance without oversubscribing.
  int64_t chunk = std::max<int64_t>(1, n / (static_cast<int64_t>(threads_) * 4));
  {
    std::lock_guard lock(impl_->mutex);
    impl_->body = &body;
    impl_->begin = begin;
    impl_->end = end;
    impl_->chunk = chunk;
    impl_->next.store(begin);
    ++impl_->generation;
  }
  impl_->cv_work.notify_all();
  impl_->run_chunks();  // caller participates
  std::unique_lock lock(impl_->mutex);
  impl_->cv_done.wait(lock, [&] { return impl_->busy == 0; });
}

namespace {
std::unique_ptr<ThreadPool> g_pool;
std::mutex g_pool_mutex;
}  // namespace

ThreadPool& global_pool() {
  std::lock_guard lock(g_pool_mutex);
  if (!g_pool) {
    unsigned hw = std::thread::hardware_concurrency();
    g_pool = std::make_unique<ThreadPool>(hw == 0 ? 1 : static_cast<int>(hw));
  }
  return *g_pool;
}

void set_global_threads(int threads) {
  std::lock_guard lock(g_pool_mutex);
  g_pool = std::make_unique<ThreadPool>(threads);
}

}  // namespace mpiv
