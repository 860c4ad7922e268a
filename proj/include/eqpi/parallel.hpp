// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace eqpi {

/// Worker count: EQPI_THREADS if set (integer >= 1), else the machine's
/// hardware concurrency. An invalid EQPI_THREADS throws std::invalid_argument.
std::size_t thread_count();

/// Calls fn(i) for i in [0, n) on up to thread_count() threads using static
/// contiguous chunks. fn must write only to locations owned by i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace eqpi
