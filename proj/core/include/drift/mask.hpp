// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "drift/tensor.hpp"

namespace drift {

/// Dense label grid, one class id per pixel, row-major.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> labels;

    Mask() = default;
    Mask(int height, int width)
        : h(height), w(width),
          labels(static_cast<std::size_t>(height) * width, 0) {}

    std::uint8_t& at(int y, int x) {
        return labels[static_cast<std::size_t>(y) * w + x];
    }
    std::uint8_t at(int y, int x) const {
        return labels[static_cast<std::size_t>(y) * w + x];
    }
    bool operator==(const Mask&) const = default;
};

/// Per-pixel argmax over channels of one image of a score tensor,
/// first-index tie-breaking.
inline Mask argmax_mask(const Tensor& scores, int image) {
    const auto& s = scores.shape;
    Mask m(s.h, s.w);
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const float* base = scores.plane(image, 0);
    for (std::size_t i = 0; i < hw; ++i) {
        int best = 0;
        float best_v = base[i];
        for (int c = 1; c < s.c; ++c) {
            const float v = base[static_cast<std::size_t>(c) * hw + i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        m.labels[i] = static_cast<std::uint8_t>(best);
    }
    return m;
}

} // namespace drift
