#include "lpres/worker_pool.hpp"

#include "lpres/errors.hpp"

namespace lpres {

namespace {

[[noreturn]] void rethrow_as_stage_error(int index, const std::exception_ptr& error) {
  try {
    std::rethrow_exception(error);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(index, e.what());
  } catch (...) {
    throw StageError(index, "unknown failure");
  }
}

}  // namespace

WorkerPool::WorkerPool(int workers) : workers_(workers < 1 ? 1 : workers) {
  if (workers_ == 1) return;
  threads_.reserve(static_cast<std::size_t>(workers_));
  for (int id = 0; id < workers_; ++id) threads_.emplace_back([this, id] { worker_loop(id); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::run(int tasks, const std::function<void(int)>& fn) {
  if (tasks <= 0) return;
  errors_.assign(static_cast<std::size_t>(tasks), nullptr);
  if (workers_ == 1) {
    for (int i = 0; i < tasks; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors_[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  } else {
    std::unique_lock lock(mutex_);
    job_ = &fn;
    tasks_ = tasks;
    pending_ = workers_;
    ++generation_;
    start_cv_.notify_all();
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }
  for (int i = 0; i < tasks; ++i) {
    if (errors_[static_cast<std::size_t>(i)]) rethrow_as_stage_error(i, errors_[static_cast<std::size_t>(i)]);
  }
}

void WorkerPool::worker_loop(int id) {
  std::uint64_t seen = 0;
  for (;;) {
    const std::function<void(int)>* job = nullptr;
    int tasks = 0;
    {
      std::unique_lock lock(mutex_);
      start_cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
      if (stopping_) return;
      seen = generation_;
      job = job_;
      tasks = tasks_;
    }
    for (int i = id; i < tasks; i += workers_) {
      try {
        (*job)(i);
      } catch (...) {
        errors_[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
    {
      std::lock_guard lock(mutex_);
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }
}

}  // namespace lpres
