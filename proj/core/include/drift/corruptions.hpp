// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "drift/tensor.hpp"

namespace drift {

enum class CorruptionKind {
    None,
    GaussianNoise,
    ImpulseNoise,
    GaussianBlur,
    Fog,
    Snow,
};

std::string to_string(CorruptionKind kind);
CorruptionKind corruption_kind_from_string(const std::string& name);

/// A severity-parameterized, seeded image degradation. Severity runs 1..5;
/// the per-severity parameter tables are fixed implementation constants
/// (docs/CORRUPTIONS.md).
struct Corruption {
    CorruptionKind kind = CorruptionKind::None;
    int severity = 3;
    std::uint64_t seed = 0;
};

/// Degrades an image tensor with values in [0, 1]; output is clamped back to
/// [0, 1], same shape, deterministic for (kind, severity, seed). Streams
/// derive per-image seeds as seed XOR image index (see make_stream).
Tensor apply_corruption(const Tensor& img, const Corruption& corruption);

// Severity parameter tables (index by severity 1..5).
float gaussian_noise_sigma(int severity);
float impulse_noise_rate(int severity);
float gaussian_blur_sigma(int severity);
float fog_blend(int severity);
float snow_density(int severity);
float snow_brightness_lift(int severity);

} // namespace drift
