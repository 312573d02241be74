#pragma once

// Worker-count control. ICL_LAB_THREADS caps every parallel region
// (evaluation fan-out and Eigen's threaded products).

#include <algorithm>
#include <cstdlib>
#include <thread>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace icl {

inline int thread_cap() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("ICL_LAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return std::min(v, 4 * hw);
  }
  return hw;
}

inline void apply_thread_cap() {
  const int n = thread_cap();
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n);
}

}  // namespace icl
