#pragma once

#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hyperdisp {

/// Worker cap from HYPERDISP_THREADS (0 or unset = runtime default).
inline int thread_cap() {
  const char* env = std::getenv("HYPERDISP_THREADS");
  if (env == nullptr) return 0;
  try {
    int v = std::stoi(env);
    return v > 0 ? v : 0;
  } catch (...) {
    return 0;
  }
}

/// Runs body(i) for i in [0, count). Each index writes only its own slot,
/// so results do not depend on the worker count. The first exception thrown
/// by any worker is rethrown on the calling thread.
template <typename Body>
void parallel_for(long count, Body&& body) {
#ifdef _OPENMP
  int cap = thread_cap();
  int threads = cap > 0 ? cap : omp_get_max_threads();
  std::exception_ptr first;
  std::mutex guard;
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (long i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(guard);
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
#else
  for (long i = 0; i < count; ++i) body(i);
#endif
}

}  // namespace hyperdisp
