// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Test-only reference implementations. Everything here is written as the
// plainest possible loop so it stays independent of the library kernels it
// checks.

#include <cmath>
#include <cstddef>
#include <vector>

#include "drift/tensor.hpp"

namespace drift::oracle {

/// Quadruple-loop cross-correlation in double precision.
inline Tensor naive_conv2d(const Tensor& input, const Tensor& weight,
                           const std::vector<float>& bias, int stride, int pad,
                           int dilation = 1) {
    const auto& is = input.shape;
    const auto& ws = weight.shape;
    const int eff_kh = dilation * (ws.h - 1) + 1;
    const int eff_kw = dilation * (ws.w - 1) + 1;
    const int oh = (is.h + 2 * pad - eff_kh) / stride + 1;
    const int ow = (is.w + 2 * pad - eff_kw) / stride + 1;
    Tensor out(Shape4{is.n, ws.n, oh, ow});
    for (int n = 0; n < is.n; ++n) {
        for (int oc = 0; oc < ws.n; ++oc) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias[oc];
                    for (int ic = 0; ic < is.c; ++ic) {
                        for (int ky = 0; ky < ws.h; ++ky) {
                            for (int kx = 0; kx < ws.w; ++kx) {
                                const int iy = oy * stride - pad + ky * dilation;
                                const int ix = ox * stride - pad + kx * dilation;
                                if (iy < 0 || iy >= is.h || ix < 0 ||
                                    ix >= is.w) {
                                    continue;
                                }
                                acc += static_cast<double>(
                                           input.at(n, ic, iy, ix)) *
                                       weight.at(oc, ic, ky, kx);
                            }
                        }
                    }
                    out.at(n, oc, oy, ox) = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

/// Two-pass mean / biased variance of one channel.
inline std::pair<double, double> two_pass_stats(const Tensor& x, int channel) {
    double sum = 0.0;
    std::size_t count = 0;
    for (int n = 0; n < x.shape.n; ++n) {
        for (int y = 0; y < x.shape.h; ++y) {
            for (int xx = 0; xx < x.shape.w; ++xx) {
                sum += x.at(n, channel, y, xx);
                ++count;
            }
        }
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (int n = 0; n < x.shape.n; ++n) {
        for (int y = 0; y < x.shape.h; ++y) {
            for (int xx = 0; xx < x.shape.w; ++xx) {
                const double d = x.at(n, channel, y, xx) - mean;
                sq += d * d;
            }
        }
    }
    return {mean, sq / static_cast<double>(count)};
}

/// Direct exp/sum softmax over channels at one pixel.
inline std::vector<double> naive_softmax_pixel(const Tensor& x, int n, int y,
                                               int xx) {
    std::vector<double> out(x.shape.c);
    double sum = 0.0;
    for (int c = 0; c < x.shape.c; ++c) {
        out[c] = std::exp(static_cast<double>(x.at(n, c, y, xx)));
        sum += out[c];
    }
    for (auto& v : out) v /= sum;
    return out;
}

/// Align-corners-false bilinear interpolation of one output pixel.
inline double bilinear_point(const Tensor& x, int n, int c, int out_h,
                             int out_w, int oy, int ox) {
    const auto sample = [&](double src, int in_extent, int& lo, int& hi,
                            double& frac) {
        if (src < 0.0) src = 0.0;
        lo = static_cast<int>(std::floor(src));
        if (lo > in_extent - 1) lo = in_extent - 1;
        hi = lo + 1 < in_extent ? lo + 1 : in_extent - 1;
        frac = src - std::floor(src);
    };
    int y0, y1, x0, x1;
    double fy, fx;
    sample((oy + 0.5) * (static_cast<double>(x.shape.h) / out_h) - 0.5,
           x.shape.h, y0, y1, fy);
    sample((ox + 0.5) * (static_cast<double>(x.shape.w) / out_w) - 0.5,
           x.shape.w, x0, x1, fx);
    const double top = x.at(n, c, y0, x0) * (1.0 - fx) + x.at(n, c, y0, x1) * fx;
    const double bot = x.at(n, c, y1, x0) * (1.0 - fx) + x.at(n, c, y1, x1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

/// Closed-form weighted sum for the running-average recurrence
/// v_t = (1 - a_t) v_{t-1} + a_t u_t with momenta a_1..a_T:
/// v_T = v_0 * prod(1 - a_k) + sum_k u_k * a_k * prod_{j>k} (1 - a_j).
inline double running_average_closed_form(double v0,
                                          const std::vector<double>& updates,
                                          const std::vector<double>& momenta) {
    const std::size_t t = updates.size();
    double result = v0;
    for (std::size_t k = 0; k < t; ++k) result *= 1.0 - momenta[k];
    for (std::size_t k = 0; k < t; ++k) {
        double weight = momenta[k];
        for (std::size_t j = k + 1; j < t; ++j) weight *= 1.0 - momenta[j];
        result += updates[k] * weight;
    }
    return result;
}

/// Direct per-pixel prototype softmax with squared-Euclidean/C distances.
inline std::vector<double> naive_proto_pixel(
    const std::vector<double>& feature,
    const std::vector<std::vector<double>>& centers,
    const std::vector<bool>& present, double tau) {
    const std::size_t k = present.size();
    std::vector<double> out(k, 0.0);
    double sum = 0.0;
    std::vector<double> e(k, 0.0);
    for (std::size_t cls = 0; cls < k; ++cls) {
        if (!present[cls]) continue;
        double sq = 0.0;
        for (std::size_t c = 0; c < feature.size(); ++c) {
            const double d = feature[c] - centers[cls][c];
            sq += d * d;
        }
        e[cls] = std::exp(-(sq / static_cast<double>(feature.size())) / tau);
        sum += e[cls];
    }
    for (std::size_t cls = 0; cls < k; ++cls) {
        if (present[cls]) out[cls] = e[cls] / sum;
    }
    return out;
}

} // namespace drift::oracle
