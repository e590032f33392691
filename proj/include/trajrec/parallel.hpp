#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace trajrec::par {

// Runtime switch between the OpenMP kernels and their serial reference
// path. Tests flip this to check that both paths agree.
bool enabled();
void set_enabled(bool on);

int max_threads();
int thread_index();

// Static schedule so the element-to-thread assignment is reproducible
// for a fixed thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn);

// Exceptions must not escape an OpenMP region; this variant captures
// the first one and rethrows it after the join.
template <typename Fn>
void parallel_for_rethrow(std::size_t n, Fn&& fn) {
  std::exception_ptr err;
  std::mutex err_mutex;
  parallel_for(n, [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
#ifdef _OPENMP
  if (enabled() && n > 1 && max_threads() > 1) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      fn(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace trajrec::par
