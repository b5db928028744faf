#pragma once

// OpenMP shim. Include this instead of <omp.h>.

#if defined(_OPENMP)
#include <omp.h>
#define TTDS_PRAGMA(X) _Pragma(#X)
#define TTDS_OMP(ARGS) TTDS_PRAGMA(omp ARGS)
#else
#define TTDS_OMP(ARGS)
inline int omp_get_max_threads() { return 1; }
inline int omp_get_thread_num() { return 0; }
inline void omp_set_num_threads(int) {}
#endif

namespace ttds {

// Forces single-threaded execution of every parallel kernel (reproducibility mode).
void set_deterministic(bool on);
bool deterministic();
int worker_threads();

}  // namespace ttds
