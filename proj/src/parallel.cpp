#include "idforge/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace idforge {

namespace {

std::atomic<std::size_t> g_override{0};

std::size_t env_worker_count() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IDFORGE_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) hw = std::min<std::size_t>(hw, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      // ignore malformed values
    }
  }
  return hw;
}

}  // namespace

std::size_t worker_count() {
  const std::size_t forced = g_override.load();
  return forced != 0 ? forced : env_worker_count();
}

void set_worker_count(std::size_t workers) { g_override.store(workers); }

void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& body) {
  if (tasks == 0) return;
  const std::size_t workers = std::min(worker_count(), tasks);
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) body(t);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_task = tasks;
  std::exception_ptr error;

  auto run = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks) return;
      try {
        body(t);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (t < error_task) {
          error_task = t;
          error = std::current_exception();
        }
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace idforge
