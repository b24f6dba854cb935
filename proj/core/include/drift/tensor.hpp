// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace drift {

/// Dense 4-D shape (batch, channel, height, width).
struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

/// Dense float32 tensor in row-major (n, c, h, w) order. data.size() equals
/// shape.count() at all times.
struct Tensor {
    Shape4 shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape4 s) : shape(s), data(s.count(), 0.0f) {}
    Tensor(Shape4 s, float fill) : shape(s), data(s.count(), fill) {}

    std::size_t size() const { return data.size(); }

    std::size_t offset(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) *
                   shape.w +
               x;
    }
    float& at(int n, int c, int y, int x) { return data[offset(n, c, y, x)]; }
    float at(int n, int c, int y, int x) const {
        return data[offset(n, c, y, x)];
    }

    /// Pointer to the start of one (image, channel) plane.
    float* plane(int n, int c) { return data.data() + offset(n, c, 0, 0); }
    const float* plane(int n, int c) const {
        return data.data() + offset(n, c, 0, 0);
    }
};

/// Direct cross-correlation with zero padding:
/// out(n,oc,oy,ox) = bias[oc] + sum_{ic,ky,kx} in(n,ic,oy*stride-pad+ky*dilation, ...)
///                                            * weight(oc,ic,ky,kx).
/// weight shape is (out_c, in_c, kh, kw); kh, kw must be odd; sums accumulate
/// in double.
Tensor conv2d(const Tensor& input, const Tensor& weight,
              std::span<const float> bias, int stride, int pad,
              int dilation = 1);

struct ChannelStats {
    double mean = 0.0;
    double var = 0.0; // biased (population) variance
};

/// Mean and biased variance of one channel over all n*h*w elements,
/// two-pass with double accumulators.
ChannelStats batch_stats(const Tensor& x, int channel);

/// Bilinear resize to (out_h, out_w), align-corners-false convention.
/// Returns a copy when the size is unchanged.
Tensor bilinear_upsample(const Tensor& x, int out_h, int out_w);

/// Per-pixel softmax over the channel dimension, stabilized by
/// max-subtraction.
Tensor softmax_channels(const Tensor& x);

/// Deterministic fills from the SplitMix64 generator (see rng.hpp).
Tensor rng_fill_gaussian(Shape4 shape, std::uint64_t seed, float mean,
                         float std);
Tensor rng_fill_uniform(Shape4 shape, std::uint64_t seed);

/// Raw tensor file ("DTNS"): magic, u8 version = 1, four u32 little-endian
/// dims (n, c, h, w), then n*c*h*w little-endian f32 values.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

namespace detail {

/// Source taps and weight for one axis of an align-corners-false bilinear
/// resize. Shared between the forward op and the trainer's transpose.
struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> frac;
};
LerpAxis make_lerp_axis(int in, int out);

} // namespace detail

} // namespace drift
