#pragma once

#include <cstddef>
#include <functional>

namespace pfc {

// Worker count for parallel_for; 0 selects the hardware concurrency.
void set_num_threads(unsigned n);
unsigned num_threads();

// Runs fn(i) for i in [0, n). Iterations must be independent; results are
// identical for any thread count. Nested calls run serially. The exception
// thrown by the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pfc
