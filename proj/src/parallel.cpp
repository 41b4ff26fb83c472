#include "segloss/parallel.hpp"

#include <algorithm>
#include <atomic>

namespace segloss {

namespace {
std::atomic<int> g_max_threads{0};  // 0 = not set yet, use OpenMP default
}

namespace detail {
thread_local int t_thread_override = 0;
}

int max_threads() {
  int t = detail::t_thread_override;
  if (t > 0) return t;
  t = g_max_threads.load(std::memory_order_relaxed);
  if (t > 0) return t;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int n) {
  g_max_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

namespace detail {
int threads_for(int64_t n) {
  return int(std::max<int64_t>(1, std::min<int64_t>(max_threads(), n)));
}
}  // namespace detail

}  // namespace segloss
