#pragma once

// Fixed pool of worker threads for per-node work inside one synchronous round.
// Nodes are split into static contiguous chunks and each node's update only
// reads the previous round, so the thread count never changes results.

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gtsvrg {

class NodePool {
 public:
  explicit NodePool(int threads) : threads_(std::max(1, threads)) {
    for (int w = 1; w < threads_; ++w) workers_.emplace_back([this, w] { worker_loop(w); });
  }

  NodePool(const NodePool&) = delete;
  NodePool& operator=(const NodePool&) = delete;

  ~NodePool() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
      ++generation_;
    }
    start_.notify_all();
    for (auto& t : workers_) t.join();
  }

  int threads() const { return threads_; }

  /// Calls body(begin, end) over a static partition of [0, count). Blocks
  /// until every chunk is done; rethrows the first exception raised.
  void run(int count, const std::function<void(int, int)>& body) {
    if (threads_ == 1 || count <= 1) {
      body(0, count);
      return;
    }
    {
      std::lock_guard lock(mutex_);
      body_ = &body;
      count_ = count;
      pending_ = threads_ - 1;
      error_ = nullptr;
      ++generation_;
    }
    start_.notify_all();
    std::exception_ptr local;
    try {
      auto [b, e] = chunk(0, count);
      body(b, e);
    } catch (...) {
      local = std::current_exception();
    }
    std::unique_lock lock(mutex_);
    done_.wait(lock, [this] { return pending_ == 0; });
    body_ = nullptr;
    if (local) std::rethrow_exception(local);
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::pair<int, int> chunk(int worker, int count) const {
    const int base = count / threads_;
    const int extra = count % threads_;
    const int begin = worker * base + std::min(worker, extra);
    return {begin, begin + base + (worker < extra ? 1 : 0)};
  }

  void worker_loop(int worker) {
    std::size_t seen = 0;
    for (;;) {
      const std::function<void(int, int)>* body = nullptr;
      int count = 0;
      {
        std::unique_lock lock(mutex_);
        start_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stopping_) return;
        body = body_;
        count = count_;
      }
      std::exception_ptr err;
      try {
        auto [b, e] = chunk(worker, count);
        if (b < e) (*body)(b, e);
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard lock(mutex_);
        if (err && !error_) error_ = err;
        --pending_;
      }
      done_.notify_one();
    }
  }

  int threads_;
  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable start_;
  std::condition_variable done_;
  const std::function<void(int, int)>* body_ = nullptr;
  int count_ = 0;
  int pending_ = 0;
  std::size_t generation_ = 0;
  bool stopping_ = false;
  std::exception_ptr error_;
};

}  // namespace gtsvrg
