// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace drift {

/// Number of threads intra-op parallel loops may use. Resolved once from the
/// DRIFT_ADAPT_THREADS environment variable (0 or unset means auto = hardware
/// concurrency); can be overridden programmatically.
int thread_budget();
void set_thread_budget(int threads); // 0 = auto

/// Runs body(i) for i in [0, count). Work is split into contiguous index
/// ranges, one per thread. Callers must keep items independent (or reduce
/// into per-item slots); combined with in-order reduction on the caller side
/// this keeps results identical for any thread count.
template <class F>
void parallel_for(std::size_t count, F&& body) {
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(thread_budget()), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] {
            for (std::size_t i = begin; i < end; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace drift
