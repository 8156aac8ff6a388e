#include "smvp/common.hpp"

#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace smvp {

namespace {
int g_threads = 0;
}

void set_num_threads(int n) {
  g_threads = std::max(1, n);
#ifdef _OPENMP
  omp_set_num_threads(g_threads);
#endif
}

int num_threads() {
  if (g_threads == 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    set_num_threads(std::min<int>(4, hw ? static_cast<int>(hw) : 1));
  }
  return g_threads;
}

}  // namespace smvp
