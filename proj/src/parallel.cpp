// SPDX-License-Identifier: Apache-2.0

#include "eqpi/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace eqpi {

std::size_t thread_count() {
    if (const char* env = std::getenv("EQPI_THREADS"); env != nullptr && *env != '\0') {
        std::size_t n = 0;
        const char* end = env + std::strlen(env);
        const auto res = std::from_chars(env, end, n);
        if (res.ec != std::errc{} || res.ptr != end || n < 1) {
            throw std::invalid_argument(std::string("EQPI_THREADS must be an integer >= 1, got '") + env + "'");
        }
        return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = n * w / workers;
        const std::size_t hi = n * (w + 1) / workers;
        pool.emplace_back([&, w, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace eqpi
