#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace depthup {

// Shared worker pool for row/slab parallel loops inside tensor ops.
//
// Determinism contract: parallel_for(n, f) calls f(i) exactly once for every
// i in [0, n); each call is self-contained and writes a disjoint region, so
// results are bit-identical for any thread count, including 1 (inline).
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // Total concurrency including the calling thread. 1 = fully inline.
  void set_threads(int n) {
    if (n <= 0) n = int(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    std::lock_guard<std::mutex> lk(resize_mutex_);
    if (n == threads_) return;
    stop_workers();
    threads_ = n;
    start_workers(n - 1);
  }

  int threads() const { return threads_; }

  void parallel_for(int n, const std::function<void(int)>& f) {
    if (n <= 0) return;
    if (threads_ == 1 || n == 1 || in_worker_ || workers_.empty() || busy_.exchange(true)) {
      // inline path: pool disabled, nested call, or pool already in use
      for (int i = 0; i < n; ++i) f(i);
      return;
    }
    job_ = &f;
    total_ = n;
    next_.store(0);
    pending_.store(int(workers_.size()));
    {
      std::lock_guard<std::mutex> lk(mutex_);
      ++generation_;
    }
    cv_work_.notify_all();
    work_loop(f, n);  // caller participates
    // wait for every worker to retire this generation
    std::unique_lock<std::mutex> lk(mutex_);
    cv_done_.wait(lk, [&] { return pending_.load() == 0; });
    job_ = nullptr;
    busy_.store(false);
  }

  ~ThreadPool() { stop_workers(); }

 private:
  ThreadPool() {
    threads_ = int(std::thread::hardware_concurrency());
    if (threads_ < 1) threads_ = 1;
    start_workers(threads_ - 1);
  }

  void start_workers(int count) {
    stop_ = false;
    for (int i = 0; i < count; ++i) {
      workers_.emplace_back([this] {
        in_worker_ = true;
        uint64_t seen = 0;
        for (;;) {
          const std::function<void(int)>* job = nullptr;
          int total = 0;
          {
            std::unique_lock<std::mutex> lk(mutex_);
            cv_work_.wait(lk, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            job = job_;
            total = total_;
          }
          if (job) work_loop(*job, total);
          if (pending_.fetch_sub(1) == 1) {
            std::lock_guard<std::mutex> lk(mutex_);
            cv_done_.notify_all();
          }
        }
      });
    }
  }

  void work_loop(const std::function<void(int)>& f, int n) {
    int chunk = n / (threads_ * 4);
    if (chunk < 1) chunk = 1;
    for (;;) {
      int begin = next_.fetch_add(chunk);
      if (begin >= n) break;
      int end = begin + chunk;
      if (end > n) end = n;
      for (int i = begin; i < end; ++i) f(i);
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_work_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
  }

  // caller-side pending count includes caller; decremented by workers only
  std::vector<std::thread> workers_;
  std::mutex mutex_, resize_mutex_;
  std::condition_variable cv_work_, cv_done_;
  const std::function<void(int)>* job_ = nullptr;
  int total_ = 0;
  std::atomic<int> next_{0};
  std::atomic<int> pending_{0};
  std::atomic<bool> busy_{false};
  uint64_t generation_ = 0;
  bool stop_ = false;
  int threads_ = 1;
  static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

inline void set_threads(int n) { ThreadPool::instance().set_threads(n); }
inline int thread_count() { return ThreadPool::instance().threads(); }

inline void parallel_for(int n, const std::function<void(int)>& f) {
  ThreadPool::instance().parallel_for(n, f);
}

// RAII guard for temporarily switching the pool size (e.g. the sequential
// streaming reference path).
class ThreadGuard {
 public:
  explicit ThreadGuard(int n) : saved_(thread_count()) { set_threads(n); }
  ~ThreadGuard() { set_threads(saved_); }
  ThreadGuard(const ThreadGuard&) = delete;
  ThreadGuard& operator=(const ThreadGuard&) = delete;

 private:
  int saved_;
};

}  // namespace depthup
