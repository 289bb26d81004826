#pragma once

#include <cstddef>
#include <functional>

namespace canon_hjb {

/// Worker count: hardware concurrency, capped by CANON_HJB_THREADS if set.
int worker_count();

/// Calls fn(i) for every i in [0, n) on up to worker_count() threads, in
/// contiguous chunks. Results must be written to per-index slots; callers do
/// any reduction afterwards in index order so the outcome does not depend on
/// scheduling. If several calls throw, the exception from the lowest index
/// is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Same contract, but hands each worker its contiguous [begin, end) range.
void parallel_ranges(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace canon_hjb
