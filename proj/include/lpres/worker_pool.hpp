#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace lpres {

/// Fixed set of worker threads that execute indexed tasks in lock-step.
///
/// run(n, fn) calls fn(i) for i in [0, n), task i on worker i mod workers,
/// and returns once every task has finished (the barrier). With one worker
/// the tasks run inline on the calling thread in index order. A task that
/// throws is reported as a StageError naming the lowest failing index.
class WorkerPool {
 public:
  explicit WorkerPool(int workers);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int workers() const { return workers_; }
  void run(int tasks, const std::function<void(int)>& fn);

 private:
  void worker_loop(int id);

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  int tasks_ = 0;
  bool stopping_ = false;
  const std::function<void(int)>* job_ = nullptr;
  std::vector<std::exception_ptr> errors_;
};

}  // namespace lpres
