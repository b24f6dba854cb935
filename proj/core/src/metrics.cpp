// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace drift {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto v : counts_) t += v;
    return t;
}

void accumulate(ConfusionMatrix& cm, const Mask& gt, const Mask& pred) {
    if (gt.h != pred.h || gt.w != pred.w) {
        throw std::invalid_argument(
            fmt::format("accumulate: gt is {}x{}, pred is {}x{}", gt.h, gt.w,
                        pred.h, pred.w));
    }
    const int k = cm.num_classes();
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const int g = gt.labels[i];
        const int p = pred.labels[i];
        if (g >= k || p >= k) {
            throw std::invalid_argument(fmt::format(
                "accumulate: label pair (gt {}, pred {}) out of range for {} "
                "classes",
                g, p, k));
        }
        ++cm.at(g, p);
    }
}

IouResult compute_iou(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    IouResult res;
    res.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
    res.defined.assign(k, false);
    std::uint64_t diag = 0;
    double sum = 0.0;
    int defined = 0;
    for (int i = 0; i < k; ++i) {
        std::uint64_t tp = cm.at(i, i);
        std::uint64_t fp = 0, fn = 0;
        for (int j = 0; j < k; ++j) {
            if (j == i) continue;
            fp += cm.at(j, i);
            fn += cm.at(i, j);
        }
        diag += tp;
        const std::uint64_t denom = tp + fp + fn;
        if (denom > 0) {
            res.per_class[i] =
                static_cast<double>(tp) / static_cast<double>(denom);
            res.defined[i] = true;
            sum += res.per_class[i];
            ++defined;
        }
    }
    res.miou = defined > 0 ? sum / defined : 0.0;
    const std::uint64_t total = cm.total();
    res.pixel_acc =
        total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
    return res;
}

namespace {

// DeepGlobe-style colors for the first six classes, distinct fillers after.
constexpr std::array<std::array<std::uint8_t, 3>, 16> kPalette = {{
    {255, 255, 0},   // 0 agriculture
    {255, 0, 255},   // 1 rangeland
    {0, 255, 0},     // 2 forest
    {0, 0, 255},     // 3 water
    {255, 255, 255}, // 4 barren
    {0, 255, 255},   // 5 urban
    {128, 0, 0},
    {0, 128, 0},
    {0, 0, 128},
    {128, 128, 0},
    {128, 0, 128},
    {0, 128, 128},
    {255, 128, 0},
    {128, 255, 0},
    {0, 128, 255},
    {64, 64, 64},
}};

} // namespace

std::span<const std::array<std::uint8_t, 3>> class_palette() {
    return {kPalette.data(), kPalette.size()};
}

void write_mask_image(const Mask& mask, const std::filesystem::path& path) {
    for (const auto label : mask.labels) {
        if (label >= kPalette.size()) {
            throw std::invalid_argument(fmt::format(
                "write_mask_image: label {} exceeds palette size {}", label,
                kPalette.size()));
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error(
            fmt::format("cannot open '{}' for writing", path.string()));
    }
    out << "P6\n" << mask.w << ' ' << mask.h << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(mask.w) * 3);
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) {
            const auto& rgb = kPalette[mask.at(y, x)];
            row[static_cast<std::size_t>(x) * 3] = rgb[0];
            row[static_cast<std::size_t>(x) * 3 + 1] = rgb[1];
            row[static_cast<std::size_t>(x) * 3 + 2] = rgb[2];
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    out.close();
    if (!out) {
        throw std::runtime_error(
            fmt::format("write to '{}' failed", path.string()));
    }
}

Mask read_mask_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(
            fmt::format("cannot open '{}' for reading", path.string()));
    }
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w < 1 || h < 1) {
        throw std::runtime_error(fmt::format(
            "'{}' is not an 8-bit P6 mask image (magic '{}', {}x{}, max {})",
            path.string(), magic, w, h, maxval));
    }
    in.get(); // single whitespace after header
    Mask mask(h, w);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
        if (!in) {
            throw std::runtime_error(fmt::format(
                "'{}' truncated in pixel row {}", path.string(), y));
        }
        for (int x = 0; x < w; ++x) {
            const std::array<std::uint8_t, 3> rgb = {
                row[static_cast<std::size_t>(x) * 3],
                row[static_cast<std::size_t>(x) * 3 + 1],
                row[static_cast<std::size_t>(x) * 3 + 2]};
            int label = -1;
            for (std::size_t i = 0; i < kPalette.size(); ++i) {
                if (kPalette[i] == rgb) {
                    label = static_cast<int>(i);
                    break;
                }
            }
            if (label < 0) {
                throw std::runtime_error(fmt::format(
                    "'{}' pixel ({}, {}) has color ({}, {}, {}) outside the "
                    "class palette",
                    path.string(), x, y, rgb[0], rgb[1], rgb[2]));
            }
            mask.at(y, x) = static_cast<std::uint8_t>(label);
        }
    }
    return mask;
}

} // namespace drift
