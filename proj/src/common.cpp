#include "hformer/common.hpp"

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hformer {

int env_thread_cap() {
    const char* v = std::getenv("HFORMER_THREADS");
    if (!v || !*v) return 0;
    const int n = std::atoi(v);
    return n > 0 ? n : 0;
}

void apply_thread_cap() {
#ifdef _OPENMP
    if (const int cap = env_thread_cap(); cap > 0) omp_set_num_threads(cap);
#endif
}

}  // namespace hformer
