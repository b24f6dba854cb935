// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "drift/corruptions.hpp"
#include "drift/model.hpp"
#include "drift/synth.hpp"
#include "drift/tta.hpp"

using namespace drift;

namespace {

std::vector<Scene> bench_scenes(int count) {
    std::vector<Scene> scenes;
    for (int i = 0; i < count; ++i) {
        scenes.push_back(
            generate_scene(9000 + static_cast<std::uint64_t>(i), 6, 64, 64));
    }
    return scenes;
}

} // namespace

static void BM_ForwardStored(benchmark::State& state) {
    const SegModel model = make_toy_model(6, 1);
    const auto scenes = bench_scenes(8);
    const auto stream = make_stream(scenes, 8, {}, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            forward(model, stream[0].images, NormMode::Stored));
    }
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ForwardStored);

static void BM_AdaptStep(benchmark::State& state) {
    const SegModel model = make_toy_model(6, 1);
    const auto scenes = bench_scenes(8);
    const auto stream =
        make_stream(scenes, 8, {CorruptionKind::GaussianNoise, 3, 2}, 1);
    AdaptOptions opt;
    for (auto _ : state) {
        BnAdaptState st = BnAdaptState::from_model(model, opt.dm);
        PrototypeBank bank = PrototypeBank::init(6, model.feature_dim(), opt.im);
        benchmark::DoNotOptimize(
            adapt_step(model, st, bank, stream[0], opt));
    }
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_AdaptStep);

static void BM_Corruption(benchmark::State& state) {
    const auto scenes = bench_scenes(1);
    const auto kind = static_cast<CorruptionKind>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            apply_corruption(scenes[0].image, {kind, 3, 7}));
    }
}
BENCHMARK(BM_Corruption)
    ->Arg(static_cast<int>(CorruptionKind::GaussianNoise))
    ->Arg(static_cast<int>(CorruptionKind::ImpulseNoise))
    ->Arg(static_cast<int>(CorruptionKind::GaussianBlur))
    ->Arg(static_cast<int>(CorruptionKind::Fog))
    ->Arg(static_cast<int>(CorruptionKind::Snow));

BENCHMARK_MAIN();
