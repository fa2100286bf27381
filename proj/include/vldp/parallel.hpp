#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace vldp {

/// Worker count from VLDP_WORKERS, falling back to 1.
inline int default_workers() {
  if (const char* env = std::getenv("VLDP_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Runs task(i) for i in [0, n) on up to `workers` threads and returns the
/// results in index order. Tasks are assigned round-robin, so the result
/// vector does not depend on the worker count.
template <class Result, class Task>
std::vector<Result> ordered_map(std::size_t n, int workers, Task&& task) {
  std::vector<Result> out(n);
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(workers > 0 ? workers : 1, n));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = task(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t id = 0; id < w; ++id) {
    pool.emplace_back([&, id] {
      try {
        for (std::size_t i = id; i < n; i += w) out[i] = task(i);
      } catch (...) {
        errors[id] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace vldp
