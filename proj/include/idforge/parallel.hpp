#pragma once

#include <cstddef>
#include <functional>

namespace idforge {

/// Worker count: hardware concurrency, capped by IDFORGE_THREADS when set.
std::size_t worker_count();

/// Override for tests; 0 restores the environment-derived default.
void set_worker_count(std::size_t workers);

/// Runs body(task) for task in [0, tasks). Tasks are handed out dynamically, so
/// bodies must write only to task-owned output slots. Rethrows the first
/// exception (lowest task index) after all workers join.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& body);

}  // namespace idforge
