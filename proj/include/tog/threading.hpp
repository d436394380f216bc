#pragma once

#include <cstddef>
#include <functional>

namespace tog {

// Worker cap: min(hardware_concurrency, TOG_THREADS if set). Always >= 1.
int worker_count();

// Static index partition over [0, n). fn(i) must not touch shared mutable
// state except slots owned by i; results are then independent of the worker
// count. Runs inline when n is small or only one worker is available.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tog
