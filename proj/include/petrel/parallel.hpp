#pragma once

#include <cstddef>
#include <functional>

namespace petrel::par {

// Global worker count for data-parallel loops. 1 (the default) runs
// everything inline. Results must not depend on this value: parallel_for
// hands each index to exactly one worker and every index writes disjoint
// output, so any count produces identical bytes.
void set_threads(int n);
int threads();

// Calls fn(i) for i in [begin, end). Nested calls degrade to serial.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& fn);

} // namespace petrel::par
