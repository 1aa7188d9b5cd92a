#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace herdlife {

/// Worker count from HERDLIFE_THREADS; unset uses the hardware count, 0 or 1 means run inline.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("HERDLIFE_THREADS")) {
    try {
      const long n = std::stol(env);
      return n <= 1 ? 1 : static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      return 1;
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs task(i) for i in [0, count). Each index is handled exactly once, so results
/// written to slot i do not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& task, std::size_t threads = thread_count()) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  threads = std::min(threads, count);
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) task(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace herdlife
