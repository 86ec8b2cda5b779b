#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace ppcn::parallel {

/// Worker cap: an explicit override if set, else the PPCN_THREADS environment
/// variable (0 or unset = hardware concurrency).
int thread_count();

/// Per-thread override; 0 clears it. Lets concurrent training runs each stay
/// single-threaded without touching the environment.
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n) over static contiguous chunks. Callers only
/// write to disjoint per-index outputs, so results do not depend on the
/// number of workers.
template <typename Fn>
void for_each(int n, Fn&& fn) {
  const int workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  const int chunk = (n + workers - 1) / workers;
  for (int t = 1; t < workers; ++t) {
    const int lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (int i = 0; i < std::min(n, chunk); ++i) fn(i);
}

}  // namespace ppcn::parallel
