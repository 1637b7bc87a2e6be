#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace fiv {

// Worker count, capped by FALSIFY_IV_THREADS when set.
std::size_t worker_count();

// Runs body(i) for i in [0, n). Results must be written by index so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fiv
