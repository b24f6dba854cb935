// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "drift/mask.hpp"

namespace drift {

/// K x K pixel count grid; rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes)
        : k_(num_classes),
          counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

    int num_classes() const { return k_; }
    std::uint64_t at(int gt, int pred) const {
        return counts_[static_cast<std::size_t>(gt) * k_ + pred];
    }
    std::uint64_t& at(int gt, int pred) {
        return counts_[static_cast<std::size_t>(gt) * k_ + pred];
    }
    std::uint64_t total() const;

private:
    int k_;
    std::vector<std::uint64_t> counts_;
};

/// Adds one (gt, pred) mask pair; labels must be < num_classes.
void accumulate(ConfusionMatrix& cm, const Mask& gt, const Mask& pred);

struct IouResult {
    std::vector<double> per_class; // NaN for classes with TP+FP+FN == 0
    std::vector<bool> defined;
    double miou = 0.0; // mean over defined classes
    double pixel_acc = 0.0;
};

IouResult compute_iou(const ConfusionMatrix& cm);

/// Fixed RGB palette used by mask images; entry i colors class i.
std::span<const std::array<std::uint8_t, 3>> class_palette();

/// Writes the mask as a binary PPM (P6, 8-bit RGB) using class_palette().
void write_mask_image(const Mask& mask, const std::filesystem::path& path);

/// Reads a PPM produced by write_mask_image back into labels (exact palette
/// inverse; unknown colors are rejected).
Mask read_mask_image(const std::filesystem::path& path);

} // namespace drift
