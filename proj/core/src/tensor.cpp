// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "binio.hpp"
#include "drift/parallel.hpp"
#include "drift/rng.hpp"

namespace drift {

std::string Shape4::str() const {
    return fmt::format("({}, {}, {}, {})", n, c, h, w);
}

Tensor conv2d(const Tensor& input, const Tensor& weight,
              std::span<const float> bias, int stride, int pad, int dilation) {
    const auto& is = input.shape;
    const auto& ws = weight.shape;
    if (is.c != ws.c) {
        throw std::invalid_argument(
            fmt::format("conv2d: input shape {} has {} channels but weight "
                        "shape {} expects {}",
                        is.str(), is.c, ws.str(), ws.c));
    }
    if (ws.h % 2 == 0 || ws.w % 2 == 0 || ws.h < 1 || ws.w < 1) {
        throw std::invalid_argument(fmt::format(
            "conv2d: kernel dims must be odd, got {}x{}", ws.h, ws.w));
    }
    if (stride < 1 || pad < 0 || dilation < 1) {
        throw std::invalid_argument(
            fmt::format("conv2d: invalid stride={} pad={} dilation={}", stride,
                        pad, dilation));
    }
    if (bias.size() != static_cast<std::size_t>(ws.n)) {
        throw std::invalid_argument(
            fmt::format("conv2d: bias has {} entries, weight shape {} needs {}",
                        bias.size(), ws.str(), ws.n));
    }
    const int eff_kh = dilation * (ws.h - 1) + 1;
    const int eff_kw = dilation * (ws.w - 1) + 1;
    const int oh = (is.h + 2 * pad - eff_kh) / stride + 1;
    const int ow = (is.w + 2 * pad - eff_kw) / stride + 1;
    if (oh < 1 || ow < 1) {
        throw std::invalid_argument(
            fmt::format("conv2d: kernel {}x{} (dilation {}) does not fit input "
                        "shape {} with pad {}",
                        ws.h, ws.w, dilation, is.str(), pad));
    }

    Tensor out(Shape4{is.n, ws.n, oh, ow});
    const int in_c = is.c, kh = ws.h, kw = ws.w;
    const std::size_t jobs =
        static_cast<std::size_t>(is.n) * static_cast<std::size_t>(ws.n);
    parallel_for(jobs, [&](std::size_t job) {
        const int n = static_cast<int>(job) / ws.n;
        const int oc = static_cast<int>(job) % ws.n;
        float* dst = out.plane(n, oc);
        for (int oy = 0; oy < oh; ++oy) {
            const int iy0 = oy * stride - pad;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix0 = ox * stride - pad;
                double acc = bias[oc];
                for (int ic = 0; ic < in_c; ++ic) {
                    const float* src = input.plane(n, ic);
                    const float* wrow = weight.plane(oc, ic);
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = iy0 + ky * dilation;
                        if (iy < 0 || iy >= is.h) continue;
                        const float* srow = src + static_cast<std::size_t>(iy) * is.w;
                        const float* wr = wrow + static_cast<std::size_t>(ky) * kw;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ix0 + kx * dilation;
                            if (ix < 0 || ix >= is.w) continue;
                            acc += static_cast<double>(srow[ix]) * wr[kx];
                        }
                    }
                }
                dst[static_cast<std::size_t>(oy) * ow + ox] =
                    static_cast<float>(acc);
            }
        }
    });
    return out;
}

ChannelStats batch_stats(const Tensor& x, int channel) {
    const auto& s = x.shape;
    if (channel < 0 || channel >= s.c) {
        throw std::invalid_argument(fmt::format(
            "batch_stats: channel {} out of range for shape {}", channel,
            s.str()));
    }
    const std::size_t per_image = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t count = static_cast<std::size_t>(s.n) * per_image;
    if (count == 0) {
        throw std::invalid_argument(fmt::format(
            "batch_stats: channel {} of shape {} is empty", channel, s.str()));
    }
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const float* p = x.plane(n, channel);
        for (std::size_t i = 0; i < per_image; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const float* p = x.plane(n, channel);
        for (std::size_t i = 0; i < per_image; ++i) {
            const double d = p[i] - mean;
            sq += d * d;
        }
    }
    return {mean, sq / static_cast<double>(count)};
}

namespace detail {

LerpAxis make_lerp_axis(int in, int out) {
    LerpAxis ax;
    ax.i0.resize(out);
    ax.i1.resize(out);
    ax.frac.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        const double floor_src = std::floor(src);
        int lo = static_cast<int>(floor_src);
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        ax.i0[o] = lo;
        ax.i1[o] = hi;
        ax.frac[o] = src - floor_src;
    }
    return ax;
}

} // namespace detail

Tensor bilinear_upsample(const Tensor& x, int out_h, int out_w) {
    const auto& s = x.shape;
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument(fmt::format(
            "bilinear_upsample: target size {}x{} invalid", out_h, out_w));
    }
    if (s.h < 1 || s.w < 1) {
        throw std::invalid_argument(fmt::format(
            "bilinear_upsample: input shape {} has empty spatial dims",
            s.str()));
    }
    if (out_h == s.h && out_w == s.w) return x;

    const detail::LerpAxis ay = detail::make_lerp_axis(s.h, out_h);
    const detail::LerpAxis ax = detail::make_lerp_axis(s.w, out_w);
    Tensor out(Shape4{s.n, s.c, out_h, out_w});
    const std::size_t planes =
        static_cast<std::size_t>(s.n) * static_cast<std::size_t>(s.c);
    parallel_for(planes, [&](std::size_t plane) {
        const int n = static_cast<int>(plane) / s.c;
        const int c = static_cast<int>(plane) % s.c;
        const float* src = x.plane(n, c);
        float* dst = out.plane(n, c);
        for (int oy = 0; oy < out_h; ++oy) {
            const float* r0 = src + static_cast<std::size_t>(ay.i0[oy]) * s.w;
            const float* r1 = src + static_cast<std::size_t>(ay.i1[oy]) * s.w;
            const double fy = ay.frac[oy];
            for (int ox = 0; ox < out_w; ++ox) {
                const double fx = ax.frac[ox];
                const double top = r0[ax.i0[ox]] * (1.0 - fx) + r0[ax.i1[ox]] * fx;
                const double bot = r1[ax.i0[ox]] * (1.0 - fx) + r1[ax.i1[ox]] * fx;
                dst[static_cast<std::size_t>(oy) * out_w + ox] =
                    static_cast<float>(top * (1.0 - fy) + bot * fy);
            }
        }
    });
    return out;
}

Tensor softmax_channels(const Tensor& x) {
    const auto& s = x.shape;
    if (s.c < 1) {
        throw std::invalid_argument(fmt::format(
            "softmax_channels: shape {} has no channels", s.str()));
    }
    Tensor out(s);
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    parallel_for(static_cast<std::size_t>(s.n), [&](std::size_t n) {
        const float* src = x.plane(static_cast<int>(n), 0);
        float* dst = out.plane(static_cast<int>(n), 0);
        for (std::size_t i = 0; i < hw; ++i) {
            float mx = src[i];
            for (int c = 1; c < s.c; ++c) {
                mx = std::max(mx, src[static_cast<std::size_t>(c) * hw + i]);
            }
            double sum = 0.0;
            for (int c = 0; c < s.c; ++c) {
                sum += std::exp(
                    static_cast<double>(src[static_cast<std::size_t>(c) * hw + i]) - mx);
            }
            for (int c = 0; c < s.c; ++c) {
                const std::size_t k = static_cast<std::size_t>(c) * hw + i;
                dst[k] = static_cast<float>(
                    std::exp(static_cast<double>(src[k]) - mx) / sum);
            }
        }
    });
    return out;
}

Tensor rng_fill_gaussian(Shape4 shape, std::uint64_t seed, float mean,
                         float std) {
    if (std < 0.0f) {
        throw std::invalid_argument(
            fmt::format("rng_fill_gaussian: std {} < 0", std));
    }
    Tensor t(shape);
    Rng rng(seed);
    const std::size_t count = t.size();
    for (std::size_t i = 0; i + 1 < count; i += 2) {
        const auto [z0, z1] = rng.gaussian_pair();
        t.data[i] = mean + std * static_cast<float>(z0);
        t.data[i + 1] = mean + std * static_cast<float>(z1);
    }
    if (count % 2 == 1) {
        const auto [z0, z1] = rng.gaussian_pair();
        (void)z1;
        t.data[count - 1] = mean + std * static_cast<float>(z0);
    }
    return t;
}

Tensor rng_fill_uniform(Shape4 shape, std::uint64_t seed) {
    Tensor t(shape);
    Rng rng(seed);
    for (auto& v : t.data) v = rng.uniform();
    return t;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic("DTNS");
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(t.shape.n));
    w.u32(static_cast<std::uint32_t>(t.shape.c));
    w.u32(static_cast<std::uint32_t>(t.shape.h));
    w.u32(static_cast<std::uint32_t>(t.shape.w));
    w.f32_span(t.data);
    w.close();
}

Tensor load_tensor(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("DTNS", "tensor");
    const auto version = r.u8();
    if (version != 1) {
        throw std::runtime_error(
            fmt::format("'{}': unsupported tensor version {} at byte 4",
                        r.path(), version));
    }
    Shape4 s;
    s.n = static_cast<int>(r.u32());
    s.c = static_cast<int>(r.u32());
    s.h = static_cast<int>(r.u32());
    s.w = static_cast<int>(r.u32());
    Tensor t(s);
    r.f32_into(t.data);
    r.expect_end();
    return t;
}

} // namespace drift
