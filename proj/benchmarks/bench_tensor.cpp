// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "drift/model.hpp"
#include "drift/tensor.hpp"

using namespace drift;

static void BM_Conv2d3x3(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const Tensor input = rng_fill_uniform({8, c, 32, 32}, 1);
    const Tensor weight = rng_fill_gaussian({c, c, 3, 3}, 2, 0.0f, 0.1f);
    const std::vector<float> bias(c, 0.0f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(input, weight, bias, 1, 1));
    }
    state.SetItemsProcessed(state.iterations() * input.size());
}
BENCHMARK(BM_Conv2d3x3)->Arg(16)->Arg(32)->Arg(64);

static void BM_BatchStatsAll(benchmark::State& state) {
    const Tensor x = rng_fill_uniform({8, 64, 32, 32}, 3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(batch_stats_all(x));
    }
    state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_BatchStatsAll);

static void BM_BilinearUpsample4x(benchmark::State& state) {
    const Tensor x = rng_fill_uniform({8, 6, 16, 16}, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(bilinear_upsample(x, 64, 64));
    }
}
BENCHMARK(BM_BilinearUpsample4x);

static void BM_SoftmaxChannels(benchmark::State& state) {
    const Tensor x = rng_fill_uniform({8, 6, 64, 64}, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(softmax_channels(x));
    }
}
BENCHMARK(BM_SoftmaxChannels);
