// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "drift/corruptions.hpp"
#include "drift/mask.hpp"
#include "drift/tensor.hpp"

namespace drift {

/// One labeled synthetic scene: an RGB image in [0,1] and its class mask.
struct Scene {
    Tensor image; // (1, 3, h, w)
    Mask mask;    // (h, w), labels in [0, K)
};

/// Voronoi scene generator: k_cells random sites partition the image, each
/// cell gets a class; classes paint a base color plus a class-specific
/// sinusoidal texture plus Gaussian grain (std 0.02). The first min(K,
/// k_cells) cells take classes 0..K-1 so every class is present.
Scene generate_scene(std::uint64_t seed, int num_classes, int h, int w,
                     int k_cells = 12);

struct Dataset {
    int num_classes = 0;
    int h = 0;
    int w = 0;
    std::vector<Scene> scenes;
    std::vector<std::size_t> train; // index sets; disjoint partition
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;

    std::vector<Scene> split_scenes(const std::vector<std::size_t>& idx) const;
};

/// Default desk-scale dataset: 200 train / 20 val / 80 test scenes.
Dataset generate_dataset(std::uint64_t seed, int num_classes = 6, int h = 64,
                         int w = 64, int n_train = 200, int n_val = 20,
                         int n_test = 80);

/// On-disk layout: per scene a DTNS image and an 8-bit binary PGM mask (one
/// label per pixel), plus manifest.json listing split membership.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void save_mask_pgm(const Mask& mask, const std::filesystem::path& path);
Mask load_mask_pgm(const std::filesystem::path& path);

/// One batch of the test-time stream.
struct StreamBatch {
    Tensor images; // (B, 3, h, w), corrupted
    std::vector<Mask> masks;
    int batch_index = 0;
};

/// Shuffles scenes by order_seed, applies the corruption per image (seed XOR
/// stream position), and groups into batches; the final batch may be smaller.
/// Scenes are never mutated.
std::vector<StreamBatch> make_stream(const std::vector<Scene>& scenes,
                                     int batch_size,
                                     const Corruption& corruption,
                                     std::uint64_t order_seed);

} // namespace drift
