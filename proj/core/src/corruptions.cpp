// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "drift/rng.hpp"

namespace drift {

namespace {

void check_severity(int severity) {
    if (severity < 1 || severity > 5) {
        throw std::invalid_argument(
            fmt::format("corruption severity {} outside 1..5", severity));
    }
}

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

// Severity parameter tables (docs/CORRUPTIONS.md).
constexpr float kNoiseSigma[5] = {0.04f, 0.08f, 0.12f, 0.18f, 0.26f};
constexpr float kImpulseRate[5] = {0.01f, 0.03f, 0.06f, 0.10f, 0.17f};
constexpr float kBlurSigma[5] = {0.5f, 1.0f, 1.5f, 2.0f, 2.5f};
constexpr float kFogBlend[5] = {0.15f, 0.25f, 0.35f, 0.45f, 0.55f};
constexpr float kSnowDensity[5] = {0.005f, 0.01f, 0.02f, 0.03f, 0.05f};
constexpr float kSnowLift[5] = {0.05f, 0.10f, 0.15f, 0.20f, 0.25f};
constexpr float kSnowSpeckleGain = 3.0f; // pre-blur flake amplitude

Tensor gaussian_noise(const Tensor& img, int severity, std::uint64_t seed) {
    const float sigma = kNoiseSigma[severity - 1];
    Tensor out = img;
    Rng rng(seed);
    const std::size_t count = out.data.size();
    for (std::size_t i = 0; i + 1 < count; i += 2) {
        const auto [z0, z1] = rng.gaussian_pair();
        out.data[i] = clamp01(out.data[i] + sigma * static_cast<float>(z0));
        out.data[i + 1] =
            clamp01(out.data[i + 1] + sigma * static_cast<float>(z1));
    }
    if (count % 2 == 1) {
        const auto [z0, z1] = rng.gaussian_pair();
        (void)z1;
        out.data[count - 1] =
            clamp01(out.data[count - 1] + sigma * static_cast<float>(z0));
    }
    return out;
}

// Salt-and-pepper: each pixel (all channels together) is replaced by exact
// 0 or 1 with probability p, equal polarity odds.
Tensor impulse_noise(const Tensor& img, int severity, std::uint64_t seed) {
    const float p = kImpulseRate[severity - 1];
    Tensor out = img;
    Rng rng(seed);
    const auto& s = img.shape;
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
            if (rng.uniform() >= p) continue;
            const float v = rng.uniform() < 0.5f ? 0.0f : 1.0f;
            for (int c = 0; c < s.c; ++c) {
                out.plane(n, c)[i] = v;
            }
        }
    }
    return out;
}

// Separable Gaussian kernel, radius ceil(3*sigma), weights normalized in
// double so a constant image blurs to itself bit-exactly. Periodic (wrap)
// padding keeps the image mean unchanged.
Tensor gaussian_blur(const Tensor& img, int severity, std::uint64_t /*seed*/) {
    const double sigma = kBlurSigma[severity - 1];
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[i + radius];
    }
    for (auto& kv : kernel) kv /= sum;

    const auto& s = img.shape;
    auto wrap = [](int i, int extent) {
        i %= extent;
        return i < 0 ? i + extent : i;
    };
    Tensor tmp(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* src = img.plane(n, c);
            float* dst = tmp.plane(n, c);
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i) {
                        acc += kernel[i + radius] *
                               src[static_cast<std::size_t>(y) * s.w +
                                   wrap(x + i, s.w)];
                    }
                    dst[static_cast<std::size_t>(y) * s.w + x] =
                        static_cast<float>(acc);
                }
            }
        }
    }
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* src = tmp.plane(n, c);
            float* dst = out.plane(n, c);
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i) {
                        acc += kernel[i + radius] *
                               src[static_cast<std::size_t>(wrap(y + i, s.h)) *
                                       s.w +
                                   x];
                    }
                    dst[static_cast<std::size_t>(y) * s.w + x] =
                        clamp01(static_cast<float>(acc));
                }
            }
        }
    }
    return out;
}

// Diamond-square plasma fractal on a (2^k + 1)^2 grid, min-max normalized to
// [0, 1], cropped top-left to the image size.
std::vector<float> plasma_fractal(int h, int w, Rng& rng) {
    int size = 1;
    while (size < std::max(h, w)) size *= 2;
    const int g = size + 1;
    std::vector<double> grid(static_cast<std::size_t>(g) * g, 0.0);
    auto at = [&](int y, int x) -> double& {
        return grid[static_cast<std::size_t>(y) * g + x];
    };
    at(0, 0) = rng.uniform_double();
    at(0, g - 1) = rng.uniform_double();
    at(g - 1, 0) = rng.uniform_double();
    at(g - 1, g - 1) = rng.uniform_double();

    double amplitude = 0.5;
    for (int step = size; step > 1; step /= 2, amplitude *= 0.5) {
        const int half = step / 2;
        // Diamond step.
        for (int y = half; y < g; y += step) {
            for (int x = half; x < g; x += step) {
                const double avg = (at(y - half, x - half) +
                                    at(y - half, x + half) +
                                    at(y + half, x - half) +
                                    at(y + half, x + half)) /
                                   4.0;
                at(y, x) =
                    avg + (rng.uniform_double() * 2.0 - 1.0) * amplitude;
            }
        }
        // Square step.
        for (int y = 0; y < g; y += half) {
            for (int x = (y / half) % 2 == 0 ? half : 0; x < g; x += step) {
                double sum = 0.0;
                int cnt = 0;
                if (y - half >= 0) { sum += at(y - half, x); ++cnt; }
                if (y + half < g) { sum += at(y + half, x); ++cnt; }
                if (x - half >= 0) { sum += at(y, x - half); ++cnt; }
                if (x + half < g) { sum += at(y, x + half); ++cnt; }
                at(y, x) = sum / cnt +
                           (rng.uniform_double() * 2.0 - 1.0) * amplitude;
            }
        }
    }

    double lo = grid[0], hi = grid[0];
    for (const double v : grid) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    std::vector<float> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = span > 0.0 ? (at(y, x) - lo) / span : 0.5;
            out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(v);
        }
    }
    return out;
}

Tensor fog(const Tensor& img, int severity, std::uint64_t seed) {
    const float t = kFogBlend[severity - 1];
    const auto& s = img.shape;
    Tensor out = img;
    Rng rng(seed);
    for (int n = 0; n < s.n; ++n) {
        const std::vector<float> plasma = plasma_fractal(s.h, s.w, rng);
        for (int c = 0; c < s.c; ++c) {
            float* dst = out.plane(n, c);
            for (std::size_t i = 0; i < plasma.size(); ++i) {
                const float fog_v = 0.7f * plasma[i] + 0.3f;
                dst[i] = clamp01((1.0f - t) * dst[i] + t * fog_v);
            }
        }
    }
    return out;
}

// Sparse bright speckles, streaked by a 9-tap diagonal motion kernel,
// screen-composited, plus a global brightness lift.
Tensor snow(const Tensor& img, int severity, std::uint64_t seed) {
    const float density = kSnowDensity[severity - 1];
    const float lift = kSnowLift[severity - 1];
    const auto& s = img.shape;
    Tensor out = img;
    Rng rng(seed);
    auto wrap = [](int i, int extent) {
        i %= extent;
        return i < 0 ? i + extent : i;
    };
    std::vector<float> speckle(static_cast<std::size_t>(s.h) * s.w);
    std::vector<float> layer(speckle.size());
    for (int n = 0; n < s.n; ++n) {
        for (auto& v : speckle) {
            v = rng.uniform() < density ? kSnowSpeckleGain : 0.0f;
        }
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                double acc = 0.0;
                for (int i = -4; i <= 4; ++i) {
                    acc += speckle[static_cast<std::size_t>(wrap(y + i, s.h)) *
                                       s.w +
                                   wrap(x + i, s.w)];
                }
                layer[static_cast<std::size_t>(y) * s.w + x] =
                    std::min(1.0f, static_cast<float>(acc / 9.0));
            }
        }
        for (int c = 0; c < s.c; ++c) {
            float* dst = out.plane(n, c);
            for (std::size_t i = 0; i < layer.size(); ++i) {
                const float screened =
                    1.0f - (1.0f - dst[i]) * (1.0f - layer[i]);
                dst[i] = clamp01(screened + lift);
            }
        }
    }
    return out;
}

} // namespace

std::string to_string(CorruptionKind kind) {
    switch (kind) {
    case CorruptionKind::None: return "none";
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ImpulseNoise: return "impulse_noise";
    case CorruptionKind::GaussianBlur: return "gaussian_blur";
    case CorruptionKind::Fog: return "fog";
    case CorruptionKind::Snow: return "snow";
    }
    return "unknown";
}

CorruptionKind corruption_kind_from_string(const std::string& name) {
    if (name == "none") return CorruptionKind::None;
    if (name == "gaussian_noise") return CorruptionKind::GaussianNoise;
    if (name == "impulse_noise") return CorruptionKind::ImpulseNoise;
    if (name == "gaussian_blur") return CorruptionKind::GaussianBlur;
    if (name == "fog") return CorruptionKind::Fog;
    if (name == "snow") return CorruptionKind::Snow;
    throw std::invalid_argument(fmt::format(
        "unknown corruption kind '{}' (expected none, gaussian_noise, "
        "impulse_noise, gaussian_blur, fog or snow)",
        name));
}

float gaussian_noise_sigma(int severity) {
    check_severity(severity);
    return kNoiseSigma[severity - 1];
}
float impulse_noise_rate(int severity) {
    check_severity(severity);
    return kImpulseRate[severity - 1];
}
float gaussian_blur_sigma(int severity) {
    check_severity(severity);
    return kBlurSigma[severity - 1];
}
float fog_blend(int severity) {
    check_severity(severity);
    return kFogBlend[severity - 1];
}
float snow_density(int severity) {
    check_severity(severity);
    return kSnowDensity[severity - 1];
}
float snow_brightness_lift(int severity) {
    check_severity(severity);
    return kSnowLift[severity - 1];
}

Tensor apply_corruption(const Tensor& img, const Corruption& corruption) {
    if (corruption.kind == CorruptionKind::None) return img;
    check_severity(corruption.severity);
    switch (corruption.kind) {
    case CorruptionKind::GaussianNoise:
        return gaussian_noise(img, corruption.severity, corruption.seed);
    case CorruptionKind::ImpulseNoise:
        return impulse_noise(img, corruption.severity, corruption.seed);
    case CorruptionKind::GaussianBlur:
        return gaussian_blur(img, corruption.severity, corruption.seed);
    case CorruptionKind::Fog:
        return fog(img, corruption.severity, corruption.seed);
    case CorruptionKind::Snow:
        return snow(img, corruption.severity, corruption.seed);
    case CorruptionKind::None:
        break;
    }
    throw std::invalid_argument("apply_corruption: unknown corruption kind");
}

} // namespace drift
