#pragma once

#include <cstddef>
#include <functional>

namespace entbal {

// Worker count: ENTBAL_THREADS if set (as a cap), else hardware concurrency.
int default_threads();

// Runs fn(i) for i in [0, count) on up to `threads` workers (<= 0 means
// default_threads()). The first exception thrown by any task is rethrown
// after all workers finish.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace entbal
