#pragma once

#include <cstddef>
#include <functional>

namespace retforge {

// Worker cap for internal parallel loops. Defaults to RETFORGE_THREADS when
// set, otherwise 1.
std::size_t thread_count() noexcept;
void set_thread_count(std::size_t n) noexcept;

// Runs body(begin, end) over contiguous chunks of [0, n). Chunks write to
// disjoint outputs, so results never depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace retforge
