// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "drift/tensor.hpp"

namespace drift {

struct ConvLayer {
    int out_c = 0;
    int in_c = 0;
    int kh = 0;
    int kw = 0;
    int stride = 1;
    int pad = 0;
    int dilation = 1;
    std::vector<float> weight; // out_c * in_c * kh * kw
    std::vector<float> bias;   // out_c
};

/// Batch-normalization layer. scale/shift are the affine parameters (frozen
/// after source training); stored_mean/stored_var are the source statistics
/// that seed test-time adaptation.
struct BnLayer {
    std::vector<float> scale;
    std::vector<float> shift;
    std::vector<float> stored_mean;
    std::vector<float> stored_var;
    float eps = 1e-5f;

    int channels() const { return static_cast<int>(scale.size()); }
};

struct ReluLayer {};

struct UpsampleLayer {
    int factor = 1;
};

using Layer = std::variant<ConvLayer, BnLayer, ReluLayer, UpsampleLayer>;

/// Small encoder-decoder segmentation network. The last conv in the layer
/// list is the classifier (1x1, feature_dim -> num_classes); the tensor
/// entering it is the feature map F.
struct SegModel {
    std::vector<Layer> layers;

    int classifier_index() const;
    int num_classes() const;
    int feature_dim() const;
    int total_stride() const;    // product of conv strides
    int upsample_factor() const; // trailing upsample layers, 1 if none
    std::vector<int> bn_indices() const;
    int bn_count() const { return static_cast<int>(bn_indices().size()); }
};

/// Which statistics BN layers normalize with during a forward pass.
enum class NormMode {
    Stored,   // source statistics baked into the model
    Batch,    // statistics of the current batch
    Override, // caller-supplied per-layer statistics
};

/// Per-channel statistics for one BN layer.
struct BnStats {
    std::vector<float> mean;
    std::vector<float> var;
};

/// out = scale * (x - mean) / sqrt(var + eps) + shift, per channel.
Tensor bn_apply(const Tensor& x, std::span<const float> mean,
                std::span<const float> var, std::span<const float> scale,
                std::span<const float> shift, float eps);

/// Batch statistics of every channel of x (mean + biased variance).
BnStats batch_stats_all(const Tensor& x);

Tensor relu(const Tensor& x);

struct ForwardResult {
    Tensor features;    // classifier input F, feature resolution
    Tensor logits;      // classifier output, feature resolution
    Tensor probs;       // softmax(logits), feature resolution (L)
    Tensor logits_full; // logits bilinearly upsampled to input resolution
    Tensor probs_full;  // probs bilinearly upsampled to input resolution
    std::vector<BnStats> bn_batch_stats; // per BN layer, stats of its input
};

/// Called once per BN layer during a forward pass; returns the statistics to
/// normalize with, given the statistics of the layer's current input. This is
/// the hook test-time adaptation uses to fold batch statistics into running
/// estimates mid-forward.
using BnStatsSource = std::function<BnStats(
    int bn_index, const BnStats& batch, const BnLayer& layer)>;

ForwardResult forward(const SegModel& model, const Tensor& x, NormMode mode,
                      const std::vector<BnStats>* override_stats = nullptr);
ForwardResult forward_custom(const SegModel& model, const Tensor& x,
                             const BnStatsSource& source);

/// The default desk-scale architecture: 4 encoder blocks
/// [conv3x3 -> BN -> ReLU] with widths (16, 32, 64, 64) and strides
/// (1, 2, 2, 1), a dilated conv3x3 block (dilation 2), a 1x1 classifier
/// (64 -> num_classes) and a 4x bilinear upsample back to input resolution.
/// Weights are Kaiming fan-in initialized from the given seed.
SegModel make_toy_model(int num_classes, std::uint64_t seed);

/// Weight file ("DSEG"): magic, u8 version = 1, u32 layer count, then per
/// layer a u8 kind tag and its little-endian payload. Documented in
/// docs/FORMATS.md. Round-trips are byte-identical.
void save_model(const SegModel& model, const std::filesystem::path& path);
SegModel load_model(const std::filesystem::path& path);

} // namespace drift
