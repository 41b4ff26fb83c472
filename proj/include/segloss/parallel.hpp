#pragma once

#include <cstdint>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace segloss {

// Worker-count knobs for the OpenMP kernels. Every kernel computes each
// output element on exactly one thread with a fixed accumulation order, so
// results are bitwise identical for any thread count (including 1).
//
// set_max_threads changes the process-wide default; ThreadLimit overrides it
// for the current thread only (used when several training runs execute
// concurrently and each should keep to its own slice of the machine).

int max_threads();
void set_max_threads(int n);

namespace detail {
extern thread_local int t_thread_override;
int threads_for(int64_t n);
}  // namespace detail

class ThreadLimit {
 public:
  explicit ThreadLimit(int n) : prev_(detail::t_thread_override) {
    detail::t_thread_override = n < 1 ? 1 : n;
  }
  ~ThreadLimit() { detail::t_thread_override = prev_; }
  ThreadLimit(const ThreadLimit&) = delete;
  ThreadLimit& operator=(const ThreadLimit&) = delete;

 private:
  int prev_;
};

template <class F>
void par_for(int64_t n, F&& f) {
#ifdef _OPENMP
  const int t = detail::threads_for(n);
  std::exception_ptr err;
#pragma omp parallel for schedule(static) num_threads(t)
  for (int64_t i = 0; i < n; ++i) {
    try {
      f(i);
    } catch (...) {
#pragma omp critical(segloss_par_for_err)
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
#else
  for (int64_t i = 0; i < n; ++i) f(i);
#endif
}

}  // namespace segloss
