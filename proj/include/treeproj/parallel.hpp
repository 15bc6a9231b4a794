#pragma once

#include <cstdint>
#include <exception>
#include <vector>

namespace treeproj {

// body(i) for every i in [0, n), spread over OpenMP threads when `parallel`.
// No exception leaves the parallel region; the one thrown at the lowest
// index is rethrown after the loop, so failures are deterministic.
template <class Body>
void parallel_for(std::int64_t n, bool parallel, Body&& body) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n > 0 ? n : 0));
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace treeproj
