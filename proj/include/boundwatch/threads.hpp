#pragma once

#include <cstddef>
#include <functional>

namespace boundwatch {

// Worker budget: min(hardware threads, BOUNDWATCH_THREADS when set, n).
// BOUNDWATCH_THREADS=1 forces serial execution.
std::size_t worker_count(std::size_t n_items);

// Runs fn(i) for i in [0, n). Tasks must be independent and write disjoint
// state; chunk boundaries are fixed by n alone, so any aggregation done in
// index order afterwards is identical for every worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace boundwatch
