#pragma once

#include <cstddef>
#include <functional>

namespace funcspace::util {

// Worker count used by parallel_for. 0 resets to the default, which is the
// FUNCSPACE_THREADS environment variable when set, else the hardware core
// count.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for every i in [0, n). Items may run on any worker in any
// order; callers keep results deterministic by writing only to per-index
// slots and reducing in index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace funcspace::util
