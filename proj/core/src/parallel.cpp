// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace drift {

namespace {

std::atomic<int> g_budget{-1}; // -1 = not resolved yet

int resolve_from_env() {
    const char* env = std::getenv("DRIFT_ADAPT_THREADS");
    if (env != nullptr) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

} // namespace

int thread_budget() {
    int v = g_budget.load(std::memory_order_relaxed);
    if (v <= 0) {
        v = resolve_from_env();
        g_budget.store(v, std::memory_order_relaxed);
    }
    return v;
}

void set_thread_budget(int threads) {
    g_budget.store(threads > 0 ? threads : resolve_from_env(),
                   std::memory_order_relaxed);
}

} // namespace drift
