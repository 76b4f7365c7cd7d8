#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hseg {

// Deterministic data parallelism: the grain computed for each index must not
// depend on any other index, so results are identical for every thread
// count. Reductions stay inside a grain (fixed order) or are sequential.
template <typename F>
void parallel_for(std::int64_t n, F&& body, std::int64_t grain_hint = 1 << 12) {
#ifdef _OPENMP
    if (n >= 2 * grain_hint && omp_get_max_threads() > 1) {
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#else
    (void)grain_hint;
#endif
    for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace hseg
