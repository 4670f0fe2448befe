#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace atriamap {

/// Global cap on worker threads (`--threads`, ATRIAMAP_THREADS). 0 means
/// hardware concurrency.
void set_max_threads(unsigned n);
unsigned max_threads();

namespace detail {
inline thread_local bool t_in_worker = false;
}

/// Runs f(i) for i in [0, n). Work is split into contiguous chunks; callers
/// write results into slot i so the outcome does not depend on thread count.
/// Calls made from inside a worker run serially.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = detail::t_in_worker ? 1 : std::min<std::size_t>(max_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      detail::t_in_worker = true;
      try {
        const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace atriamap
