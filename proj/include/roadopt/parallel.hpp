#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace roadopt {

// Execution policy for the sweep kernels. Every parallel kernel writes to
// disjoint, preallocated slots only, so results are identical for serial and
// parallel runs and independent of the thread count. The serial path is the
// reference implementation the tests compare against.
enum class Exec { serial, parallel };

template <class Body>
void par_for(Exec exec, std::ptrdiff_t n, Body&& body) {
#ifdef _OPENMP
    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) body(static_cast<std::size_t>(i));
        return;
    }
#else
    (void)exec;
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) body(static_cast<std::size_t>(i));
}

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

} // namespace roadopt
