// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace hsakd {

/// Number of workers used by data-parallel kernels. Defaults to the hardware
/// concurrency, capped by the HSAKD_THREADS environment variable.
std::size_t worker_count();

/// Overrides the worker count; 0 restores the default.
void set_worker_count(std::size_t n);

/// Strict mode pins every kernel to a single worker.
void set_strict_mode(bool on);
bool strict_mode();

/// Splits [0, n) into contiguous chunks of at least `min_chunk` items and
/// runs `body(begin, end)` on each. Calls made from inside a worker run
/// inline; the first exception thrown by any chunk is rethrown. Kernels only
/// write disjoint outputs per item, so results do not depend on the worker
/// count.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace hsakd
