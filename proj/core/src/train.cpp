// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "drift/metrics.hpp"
#include "drift/parallel.hpp"
#include "drift/rng.hpp"

namespace drift {

namespace {

// ---------------------------------------------------------------------------
// Training-mode forward with cached activations
// ---------------------------------------------------------------------------

struct Tape {
    std::vector<Tensor> inputs;            // input to each layer
    std::vector<std::vector<double>> bn_mean; // per BN layer (bn order)
    std::vector<std::vector<double>> bn_var;
    Tensor probs;       // softmax of the classifier output, feature res
    Tensor probs_full;  // upsampled probabilities: the deployed prediction
    Tensor logits_full; // upsampled raw logits (quadratic-loss path)
    Shape4 pre_up_shape{};
    int up_h = 0, up_w = 0;
};

void channel_moments(const Tensor& x, std::vector<double>& mean,
                     std::vector<double>& var) {
    const auto& s = x.shape;
    mean.assign(s.c, 0.0);
    var.assign(s.c, 0.0);
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const double count = static_cast<double>(s.n) * static_cast<double>(hw);
    parallel_for(static_cast<std::size_t>(s.c), [&](std::size_t c) {
        double sum = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const float* p = x.plane(n, static_cast<int>(c));
            for (std::size_t i = 0; i < hw; ++i) sum += p[i];
        }
        const double m = sum / count;
        double sq = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const float* p = x.plane(n, static_cast<int>(c));
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = p[i] - m;
                sq += d * d;
            }
        }
        mean[c] = m;
        var[c] = sq / count;
    });
}

Tensor bn_normalize_batch(const Tensor& x, const std::vector<double>& mean,
                          const std::vector<double>& var, const BnLayer& bn) {
    Tensor out(x.shape);
    const auto& s = x.shape;
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t planes =
        static_cast<std::size_t>(s.n) * static_cast<std::size_t>(s.c);
    parallel_for(planes, [&](std::size_t plane) {
        const int n = static_cast<int>(plane / s.c);
        const int c = static_cast<int>(plane % s.c);
        const double inv = 1.0 / std::sqrt(var[c] + bn.eps);
        const double a = bn.scale[c] * inv;
        const double b = bn.shift[c] - mean[c] * a;
        const float* src = x.plane(n, c);
        float* dst = out.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
            dst[i] = static_cast<float>(a * src[i] + b);
        }
    });
    return out;
}

Tensor conv_layer_forward(const ConvLayer& conv, const Tensor& x) {
    Tensor w(Shape4{conv.out_c, conv.in_c, conv.kh, conv.kw});
    w.data = conv.weight;
    return conv2d(x, w, conv.bias, conv.stride, conv.pad, conv.dilation);
}

// Batch-mode forward that records everything the backward pass needs.
// When ema > 0 the model's stored BN statistics are advanced in place.
Tape forward_train(SegModel& model, const Tensor& x, float ema) {
    Tape tape;
    Tensor cur = x;
    const int ci = model.classifier_index();
    for (int i = 0; i < static_cast<int>(model.layers.size()); ++i) {
        Layer& layer = model.layers[i];
        tape.inputs.push_back(cur);
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            cur = conv_layer_forward(*conv, cur);
        } else if (auto* bn = std::get_if<BnLayer>(&layer)) {
            std::vector<double> mean, var;
            channel_moments(cur, mean, var);
            if (ema > 0.0f) {
                for (int c = 0; c < bn->channels(); ++c) {
                    bn->stored_mean[c] = static_cast<float>(
                        (1.0 - ema) * bn->stored_mean[c] + ema * mean[c]);
                    bn->stored_var[c] = static_cast<float>(
                        (1.0 - ema) * bn->stored_var[c] + ema * var[c]);
                }
            }
            cur = bn_normalize_batch(cur, mean, var, *bn);
            tape.bn_mean.push_back(std::move(mean));
            tape.bn_var.push_back(std::move(var));
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            cur = relu(cur);
        } else if (const auto* up = std::get_if<UpsampleLayer>(&layer)) {
            if (i < ci) {
                throw std::runtime_error(
                    "train: upsample before the classifier is unsupported");
            }
            tape.up_h = (tape.up_h == 0 ? cur.shape.h : tape.up_h) * up->factor;
            tape.up_w = (tape.up_w == 0 ? cur.shape.w : tape.up_w) * up->factor;
        }
    }
    tape.pre_up_shape = cur.shape;
    tape.probs = softmax_channels(cur);
    if (tape.up_h > 0 &&
        (tape.up_h != cur.shape.h || tape.up_w != cur.shape.w)) {
        tape.probs_full = bilinear_upsample(tape.probs, tape.up_h, tape.up_w);
        tape.logits_full = bilinear_upsample(cur, tape.up_h, tape.up_w);
    } else {
        tape.probs_full = tape.probs;
        tape.logits_full = std::move(cur);
    }
    return tape;
}

// ---------------------------------------------------------------------------
// Loss heads
// ---------------------------------------------------------------------------

// The per-pixel probability a boundary pixel can reach through bilinear
// interpolation may be arbitrarily small; flooring it keeps the NLL gradient
// bounded. The gradient below is the exact subgradient of the floored loss.
constexpr double kProbFloor = 1e-4;

double nll_loss_and_grad(const Tensor& probs, const std::vector<Mask>& labels,
                         Tensor& dprobs) {
    const auto& s = probs.shape;
    dprobs = Tensor(s);
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const double inv_count =
        1.0 / (static_cast<double>(s.n) * static_cast<double>(hw));
    std::vector<double> loss_part(s.n, 0.0);
    parallel_for(static_cast<std::size_t>(s.n), [&](std::size_t n) {
        const float* src = probs.plane(static_cast<int>(n), 0);
        float* dst = dprobs.plane(static_cast<int>(n), 0);
        const Mask& mask = labels[n];
        double local = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t k =
                static_cast<std::size_t>(mask.labels[i]) * hw + i;
            const double p = src[k];
            // p < floor clamps; NaN falls through the comparison and
            // poisons the loss so the trainer can abort.
            const double q = p < kProbFloor ? kProbFloor : p;
            local += -std::log(q);
            if (p > kProbFloor) {
                dst[k] = static_cast<float>(-inv_count / p);
            }
        }
        loss_part[n] = local;
    });
    double loss = 0.0;
    for (const double p : loss_part) loss += p;
    return loss * inv_count;
}

// dlogits = p .* (dp - <dp, p>) per pixel.
Tensor softmax_backward(const Tensor& probs, const Tensor& dprobs) {
    const auto& s = probs.shape;
    Tensor dlogits(s);
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    parallel_for(static_cast<std::size_t>(s.n), [&](std::size_t n) {
        const float* p = probs.plane(static_cast<int>(n), 0);
        const float* dp = dprobs.plane(static_cast<int>(n), 0);
        float* dl = dlogits.plane(static_cast<int>(n), 0);
        for (std::size_t i = 0; i < hw; ++i) {
            double dot = 0.0;
            for (int c = 0; c < s.c; ++c) {
                const std::size_t k = static_cast<std::size_t>(c) * hw + i;
                dot += static_cast<double>(dp[k]) * p[k];
            }
            for (int c = 0; c < s.c; ++c) {
                const std::size_t k = static_cast<std::size_t>(c) * hw + i;
                dl[k] = static_cast<float>(p[k] * (dp[k] - dot));
            }
        }
    });
    return dlogits;
}

double mse_loss_and_grad(const Tensor& logits, const Tensor& target,
                         Tensor& dlogits) {
    if (!(logits.shape == target.shape)) {
        throw std::invalid_argument(fmt::format(
            "squared-error loss: logits shape {} != target shape {}",
            logits.shape.str(), target.shape.str()));
    }
    dlogits = Tensor(logits.shape);
    const double inv_count = 1.0 / static_cast<double>(logits.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double d =
            static_cast<double>(logits.data[i]) - target.data[i];
        loss += d * d;
        dlogits.data[i] = static_cast<float>(2.0 * d * inv_count);
    }
    return loss * inv_count;
}

// ---------------------------------------------------------------------------
// Layer backward passes (double accumulators, per-image partials reduced in
// index order so results are identical for any thread count)
// ---------------------------------------------------------------------------

void conv_backward(const ConvLayer& conv, const Tensor& input,
                   const Tensor& dy, LayerGrads& grads, Tensor& dx) {
    const auto& is = input.shape;
    const auto& os = dy.shape;
    dx = Tensor(is);
    const std::size_t wsize = conv.weight.size();
    std::vector<std::vector<double>> dw_part(
        is.n, std::vector<double>(wsize, 0.0));
    std::vector<std::vector<double>> db_part(
        is.n, std::vector<double>(conv.out_c, 0.0));
    const int kh = conv.kh, kw = conv.kw, s = conv.stride, p = conv.pad,
              d = conv.dilation;
    parallel_for(static_cast<std::size_t>(is.n), [&](std::size_t ni) {
        const int n = static_cast<int>(ni);
        auto& dw = dw_part[ni];
        auto& db = db_part[ni];
        for (int oc = 0; oc < os.c; ++oc) {
            const float* g_plane = dy.plane(n, oc);
            for (int oy = 0; oy < os.h; ++oy) {
                const int iy0 = oy * s - p;
                for (int ox = 0; ox < os.w; ++ox) {
                    const int ix0 = ox * s - p;
                    const double g =
                        g_plane[static_cast<std::size_t>(oy) * os.w + ox];
                    db[oc] += g;
                    for (int ic = 0; ic < is.c; ++ic) {
                        const float* xsrc = input.plane(n, ic);
                        float* dxp = dx.plane(n, ic);
                        const std::size_t wbase =
                            ((static_cast<std::size_t>(oc) * is.c + ic) * kh) *
                            kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = iy0 + ky * d;
                            if (iy < 0 || iy >= is.h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ix0 + kx * d;
                                if (ix < 0 || ix >= is.w) continue;
                                const std::size_t wi =
                                    wbase + static_cast<std::size_t>(ky) * kw +
                                    kx;
                                const std::size_t xi =
                                    static_cast<std::size_t>(iy) * is.w + ix;
                                dw[wi] += g * xsrc[xi];
                                dxp[xi] += static_cast<float>(
                                    g * conv.weight[wi]);
                            }
                        }
                    }
                }
            }
        }
    });
    grads.weight.assign(wsize, 0.0);
    grads.bias.assign(conv.out_c, 0.0);
    for (int n = 0; n < is.n; ++n) {
        for (std::size_t i = 0; i < wsize; ++i) grads.weight[i] += dw_part[n][i];
        for (int oc = 0; oc < conv.out_c; ++oc) grads.bias[oc] += db_part[n][oc];
    }
}

void bn_backward(const BnLayer& bn, const Tensor& input,
                 const std::vector<double>& mean,
                 const std::vector<double>& var, const Tensor& dy,
                 LayerGrads& grads, Tensor& dx) {
    const auto& s = input.shape;
    dx = Tensor(s);
    grads.weight.assign(s.c, 0.0); // d scale
    grads.bias.assign(s.c, 0.0);   // d shift
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const double m = static_cast<double>(s.n) * static_cast<double>(hw);
    parallel_for(static_cast<std::size_t>(s.c), [&](std::size_t c) {
        const double inv = 1.0 / std::sqrt(var[c] + bn.eps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const float* xp = input.plane(n, static_cast<int>(c));
            const float* gp = dy.plane(n, static_cast<int>(c));
            for (std::size_t i = 0; i < hw; ++i) {
                const double xhat = (xp[i] - mean[c]) * inv;
                sum_dy += gp[i];
                sum_dy_xhat += gp[i] * xhat;
            }
        }
        grads.weight[c] = sum_dy_xhat;
        grads.bias[c] = sum_dy;
        const double k1 = sum_dy / m;
        const double k2 = sum_dy_xhat / m;
        const double a = bn.scale[c] * inv;
        for (int n = 0; n < s.n; ++n) {
            const float* xp = input.plane(n, static_cast<int>(c));
            const float* gp = dy.plane(n, static_cast<int>(c));
            float* dp = dx.plane(n, static_cast<int>(c));
            for (std::size_t i = 0; i < hw; ++i) {
                const double xhat = (xp[i] - mean[c]) * inv;
                dp[i] = static_cast<float>(a * (gp[i] - k1 - xhat * k2));
            }
        }
    });
}

Tensor relu_backward(const Tensor& input, const Tensor& dy) {
    Tensor dx(input.shape);
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        dx.data[i] = input.data[i] > 0.0f ? dy.data[i] : 0.0f;
    }
    return dx;
}

Tensor upsample_backward(const Tensor& dy, int in_h, int in_w) {
    const auto& s = dy.shape;
    const detail::LerpAxis ay = detail::make_lerp_axis(in_h, s.h);
    const detail::LerpAxis ax = detail::make_lerp_axis(in_w, s.w);
    Tensor dx(Shape4{s.n, s.c, in_h, in_w});
    const std::size_t planes =
        static_cast<std::size_t>(s.n) * static_cast<std::size_t>(s.c);
    parallel_for(planes, [&](std::size_t plane) {
        const int n = static_cast<int>(plane) / s.c;
        const int c = static_cast<int>(plane) % s.c;
        const float* gp = dy.plane(n, c);
        float* dp = dx.plane(n, c);
        for (int oy = 0; oy < s.h; ++oy) {
            const double fy = ay.frac[oy];
            float* r0 = dp + static_cast<std::size_t>(ay.i0[oy]) * in_w;
            float* r1 = dp + static_cast<std::size_t>(ay.i1[oy]) * in_w;
            for (int ox = 0; ox < s.w; ++ox) {
                const double fx = ax.frac[ox];
                const double g = gp[static_cast<std::size_t>(oy) * s.w + ox];
                r0[ax.i0[ox]] += static_cast<float>(g * (1.0 - fy) * (1.0 - fx));
                r0[ax.i1[ox]] += static_cast<float>(g * (1.0 - fy) * fx);
                r1[ax.i0[ox]] += static_cast<float>(g * fy * (1.0 - fx));
                r1[ax.i1[ox]] += static_cast<float>(g * fy * fx);
            }
        }
    });
    return dx;
}

std::vector<LayerGrads> backward(const SegModel& model, const Tape& tape,
                                 Tensor dlogits) {
    std::vector<LayerGrads> grads(model.layers.size());
    Tensor dcur = std::move(dlogits);
    int bn_i = static_cast<int>(tape.bn_mean.size());
    for (int i = static_cast<int>(model.layers.size()) - 1; i >= 0; --i) {
        const Layer& layer = model.layers[i];
        const Tensor& input = tape.inputs[i];
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            Tensor dx;
            conv_backward(*conv, input, dcur, grads[i], dx);
            dcur = std::move(dx);
        } else if (const auto* bn = std::get_if<BnLayer>(&layer)) {
            --bn_i;
            Tensor dx;
            bn_backward(*bn, input, tape.bn_mean[bn_i], tape.bn_var[bn_i],
                        dcur, grads[i], dx);
            dcur = std::move(dx);
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            dcur = relu_backward(input, dcur);
        }
        // Trailing upsample layers were already folded in above.
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Double-precision forward path, used only for finite differences
// ---------------------------------------------------------------------------

struct DTensor {
    Shape4 shape;
    std::vector<double> data;

    DTensor() = default;
    explicit DTensor(Shape4 s) : shape(s), data(s.count(), 0.0) {}
    const double* plane(int n, int c) const {
        return data.data() +
               ((static_cast<std::size_t>(n) * shape.c + c) *
                static_cast<std::size_t>(shape.h)) *
                   shape.w;
    }
    double* plane(int n, int c) {
        return const_cast<double*>(std::as_const(*this).plane(n, c));
    }
};

struct DLayer {
    enum Kind { Conv, Bn, Relu, Upsample } kind = Relu;
    // conv
    int out_c = 0, in_c = 0, kh = 0, kw = 0, stride = 1, pad = 0, dilation = 1;
    std::vector<double> weight, bias;
    // bn
    std::vector<double> scale, shift;
    double eps = 1e-5;
    // upsample
    int factor = 1;
};

struct DModel {
    std::vector<DLayer> layers;
};

DModel to_double(const SegModel& model) {
    DModel dm;
    for (const auto& layer : model.layers) {
        DLayer dl;
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            dl.kind = DLayer::Conv;
            dl.out_c = conv->out_c;
            dl.in_c = conv->in_c;
            dl.kh = conv->kh;
            dl.kw = conv->kw;
            dl.stride = conv->stride;
            dl.pad = conv->pad;
            dl.dilation = conv->dilation;
            dl.weight.assign(conv->weight.begin(), conv->weight.end());
            dl.bias.assign(conv->bias.begin(), conv->bias.end());
        } else if (const auto* bn = std::get_if<BnLayer>(&layer)) {
            dl.kind = DLayer::Bn;
            dl.scale.assign(bn->scale.begin(), bn->scale.end());
            dl.shift.assign(bn->shift.begin(), bn->shift.end());
            dl.eps = bn->eps;
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            dl.kind = DLayer::Relu;
        } else if (const auto* up = std::get_if<UpsampleLayer>(&layer)) {
            dl.kind = DLayer::Upsample;
            dl.factor = up->factor;
        }
        dm.layers.push_back(std::move(dl));
    }
    return dm;
}

DTensor dconv(const DLayer& conv, const DTensor& x) {
    const auto& is = x.shape;
    const int eff_kh = conv.dilation * (conv.kh - 1) + 1;
    const int eff_kw = conv.dilation * (conv.kw - 1) + 1;
    const int oh = (is.h + 2 * conv.pad - eff_kh) / conv.stride + 1;
    const int ow = (is.w + 2 * conv.pad - eff_kw) / conv.stride + 1;
    DTensor out(Shape4{is.n, conv.out_c, oh, ow});
    for (int n = 0; n < is.n; ++n) {
        for (int oc = 0; oc < conv.out_c; ++oc) {
            double* dst = out.plane(n, oc);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = conv.bias[oc];
                    for (int ic = 0; ic < is.c; ++ic) {
                        const double* src = x.plane(n, ic);
                        for (int ky = 0; ky < conv.kh; ++ky) {
                            const int iy =
                                oy * conv.stride - conv.pad + ky * conv.dilation;
                            if (iy < 0 || iy >= is.h) continue;
                            for (int kx = 0; kx < conv.kw; ++kx) {
                                const int ix = ox * conv.stride - conv.pad +
                                               kx * conv.dilation;
                                if (ix < 0 || ix >= is.w) continue;
                                acc += src[static_cast<std::size_t>(iy) * is.w +
                                           ix] *
                                       conv.weight
                                           [((static_cast<std::size_t>(oc) *
                                                  is.c +
                                              ic) *
                                                 conv.kh +
                                             ky) *
                                                conv.kw +
                                            kx];
                            }
                        }
                    }
                    dst[static_cast<std::size_t>(oy) * ow + ox] = acc;
                }
            }
        }
    }
    return out;
}

DTensor dbn_batch(const DLayer& bn, const DTensor& x) {
    const auto& s = x.shape;
    DTensor out(s);
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const double count = static_cast<double>(s.n) * static_cast<double>(hw);
    for (int c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const double* p = x.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) sum += p[i];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < s.n; ++n) {
            const double* p = x.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = p[i] - mean;
                sq += d * d;
            }
        }
        const double inv = 1.0 / std::sqrt(sq / count + bn.eps);
        for (int n = 0; n < s.n; ++n) {
            const double* p = x.plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                o[i] = bn.scale[c] * (p[i] - mean) * inv + bn.shift[c];
            }
        }
    }
    return out;
}

DTensor dupsample(const DTensor& x, int out_h, int out_w) {
    const auto& s = x.shape;
    if (out_h == s.h && out_w == s.w) return x;
    const detail::LerpAxis ay = detail::make_lerp_axis(s.h, out_h);
    const detail::LerpAxis ax = detail::make_lerp_axis(s.w, out_w);
    DTensor out(Shape4{s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const double* src = x.plane(n, c);
            double* dst = out.plane(n, c);
            for (int oy = 0; oy < out_h; ++oy) {
                const double* r0 =
                    src + static_cast<std::size_t>(ay.i0[oy]) * s.w;
                const double* r1 =
                    src + static_cast<std::size_t>(ay.i1[oy]) * s.w;
                const double fy = ay.frac[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const double fx = ax.frac[ox];
                    const double top =
                        r0[ax.i0[ox]] * (1.0 - fx) + r0[ax.i1[ox]] * fx;
                    const double bot =
                        r1[ax.i0[ox]] * (1.0 - fx) + r1[ax.i1[ox]] * fx;
                    dst[static_cast<std::size_t>(oy) * out_w + ox] =
                        top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    return out;
}

double eval_loss_double(const DModel& dm, const DTensor& input,
                        const std::vector<Mask>& labels,
                        const DTensor* quadratic_target, LossKind kind,
                        std::vector<std::uint8_t>* relu_signs = nullptr) {
    DTensor cur = input;
    int up_h = 0, up_w = 0;
    for (const auto& layer : dm.layers) {
        switch (layer.kind) {
        case DLayer::Conv:
            cur = dconv(layer, cur);
            break;
        case DLayer::Bn:
            cur = dbn_batch(layer, cur);
            break;
        case DLayer::Relu:
            for (auto& v : cur.data) {
                if (relu_signs != nullptr) {
                    relu_signs->push_back(v > 0.0 ? 1 : 0);
                }
                v = v > 0.0 ? v : 0.0;
            }
            break;
        case DLayer::Upsample:
            up_h = (up_h == 0 ? cur.shape.h : up_h) * layer.factor;
            up_w = (up_w == 0 ? cur.shape.w : up_w) * layer.factor;
            break;
        }
    }
    if (kind == LossKind::SquaredError) {
        if (up_h > 0) cur = dupsample(cur, up_h, up_w);
        double loss = 0.0;
        const double inv = 1.0 / static_cast<double>(cur.data.size());
        for (std::size_t i = 0; i < cur.data.size(); ++i) {
            const double d = cur.data[i] - quadratic_target->data[i];
            loss += d * d;
        }
        return loss * inv;
    }

    // Mirror of the training loss: softmax at feature resolution, bilinear
    // upsample of the probabilities, floored negative log-likelihood.
    {
        const auto& s = cur.shape;
        const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
        for (int n = 0; n < s.n; ++n) {
            double* base = cur.plane(n, 0);
            for (std::size_t i = 0; i < hw; ++i) {
                double mx = base[i];
                for (int c = 1; c < s.c; ++c) {
                    mx = std::max(mx,
                                  base[static_cast<std::size_t>(c) * hw + i]);
                }
                double sum = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    sum +=
                        std::exp(base[static_cast<std::size_t>(c) * hw + i] - mx);
                }
                for (int c = 0; c < s.c; ++c) {
                    double& v = base[static_cast<std::size_t>(c) * hw + i];
                    v = std::exp(v - mx) / sum;
                }
            }
        }
    }
    if (up_h > 0) cur = dupsample(cur, up_h, up_w);
    const auto& s = cur.shape;
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const double inv_count =
        1.0 / (static_cast<double>(s.n) * static_cast<double>(hw));
    double loss = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const double* src = cur.plane(n, 0);
        for (std::size_t i = 0; i < hw; ++i) {
            const double p =
                src[static_cast<std::size_t>(labels[n].labels[i]) * hw + i];
            loss += -std::log(std::max(p, kProbFloor));
        }
    }
    return loss * inv_count;
}

// ---------------------------------------------------------------------------
// Parameter addressing for sampling and SGD
// ---------------------------------------------------------------------------

struct ParamRef {
    int layer = 0;
    bool is_bias = false; // bias/shift vs weight/scale
    std::size_t index = 0;
};

std::vector<ParamRef> all_params(const SegModel& model) {
    std::vector<ParamRef> refs;
    for (int i = 0; i < static_cast<int>(model.layers.size()); ++i) {
        if (const auto* conv = std::get_if<ConvLayer>(&model.layers[i])) {
            for (std::size_t k = 0; k < conv->weight.size(); ++k) {
                refs.push_back({i, false, k});
            }
            for (std::size_t k = 0; k < conv->bias.size(); ++k) {
                refs.push_back({i, true, k});
            }
        } else if (const auto* bn = std::get_if<BnLayer>(&model.layers[i])) {
            for (std::size_t k = 0; k < bn->scale.size(); ++k) {
                refs.push_back({i, false, k});
            }
            for (std::size_t k = 0; k < bn->shift.size(); ++k) {
                refs.push_back({i, true, k});
            }
        }
    }
    return refs;
}

double* dmodel_param(DModel& dm, const ParamRef& ref) {
    DLayer& l = dm.layers[ref.layer];
    if (l.kind == DLayer::Conv) {
        return ref.is_bias ? &l.bias[ref.index] : &l.weight[ref.index];
    }
    return ref.is_bias ? &l.shift[ref.index] : &l.scale[ref.index];
}

double grad_check_impl(const SegModel& model, const Tensor& input,
                       const std::vector<Mask>& labels,
                       const Tensor* quadratic_target, LossKind kind,
                       int samples, double step, std::uint64_t seed) {
    double loss = 0.0;
    const auto grads =
        loss_gradients(model, input, labels, quadratic_target, kind, &loss);

    DModel dm = to_double(model);
    DTensor dinput(input.shape);
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        dinput.data[i] = input.data[i];
    }
    DTensor dtarget;
    if (quadratic_target != nullptr) {
        dtarget = DTensor(quadratic_target->shape);
        for (std::size_t i = 0; i < quadratic_target->data.size(); ++i) {
            dtarget.data[i] = quadratic_target->data[i];
        }
    }

    const auto refs = all_params(model);
    Rng rng(seed);
    double max_err = 0.0;
    const int n_samples = std::min<int>(samples, static_cast<int>(refs.size()));
    int accepted = 0;
    // The loss is piecewise smooth in the parameters: if the +/- step flips
    // any ReLU activation state the derivative does not exist between the two
    // evaluation points and the central difference is meaningless, so such
    // samples are redrawn (bounded retries).
    int attempts_left = 8 * n_samples;
    std::vector<std::uint8_t> signs_p, signs_m;
    while (accepted < n_samples && attempts_left-- > 0) {
        const ParamRef& ref = refs[rng.below(refs.size())];
        double* p = dmodel_param(dm, ref);
        const double saved = *p;
        signs_p.clear();
        signs_m.clear();
        *p = saved + step;
        const double lp = eval_loss_double(dm, dinput, labels,
                                           quadratic_target ? &dtarget : nullptr,
                                           kind, &signs_p);
        *p = saved - step;
        const double lm = eval_loss_double(dm, dinput, labels,
                                           quadratic_target ? &dtarget : nullptr,
                                           kind, &signs_m);
        *p = saved;
        if (signs_p != signs_m) continue; // straddles a kink
        ++accepted;
        const double g_fd = (lp - lm) / (2.0 * step);
        const auto& lg = grads[ref.layer];
        const double g_an =
            ref.is_bias ? lg.bias[ref.index] : lg.weight[ref.index];
        const double denom =
            std::max({std::fabs(g_an), std::fabs(g_fd), 1e-4});
        max_err = std::max(max_err, std::fabs(g_an - g_fd) / denom);
    }
    return max_err;
}

} // namespace

std::vector<LayerGrads> loss_gradients(const SegModel& model,
                                       const Tensor& input,
                                       const std::vector<Mask>& labels,
                                       const Tensor* quadratic_target,
                                       LossKind kind, double* loss_out) {
    SegModel scratch = model; // forward_train mutates stored stats only when ema > 0
    Tape tape = forward_train(scratch, input, 0.0f);
    const bool upsampled = !(tape.probs_full.shape == tape.pre_up_shape);
    Tensor dlogits;
    double loss = 0.0;
    if (kind == LossKind::CrossEntropy) {
        if (static_cast<int>(labels.size()) != input.shape.n) {
            throw std::invalid_argument(
                fmt::format("loss_gradients: {} label masks for batch of {}",
                            labels.size(), input.shape.n));
        }
        Tensor dprobs_full;
        loss = nll_loss_and_grad(tape.probs_full, labels, dprobs_full);
        Tensor dprobs =
            upsampled ? upsample_backward(dprobs_full, tape.pre_up_shape.h,
                                          tape.pre_up_shape.w)
                      : std::move(dprobs_full);
        dlogits = softmax_backward(tape.probs, dprobs);
    } else {
        Tensor dlogits_full;
        loss =
            mse_loss_and_grad(tape.logits_full, *quadratic_target, dlogits_full);
        dlogits = upsampled
                      ? upsample_backward(dlogits_full, tape.pre_up_shape.h,
                                          tape.pre_up_shape.w)
                      : std::move(dlogits_full);
    }
    if (loss_out != nullptr) *loss_out = loss;
    return backward(model, tape, std::move(dlogits));
}

double grad_check(const SegModel& model, const Tensor& input,
                  const std::vector<Mask>& labels, int samples, double step,
                  std::uint64_t seed) {
    return grad_check_impl(model, input, labels, nullptr,
                           LossKind::CrossEntropy, samples, step, seed);
}

double grad_check_quadratic(const SegModel& model, const Tensor& input,
                            const Tensor& target, int samples, double step,
                            std::uint64_t seed) {
    std::vector<Mask> no_labels;
    return grad_check_impl(model, input, no_labels, &target,
                           LossKind::SquaredError, samples, step, seed);
}

// ---------------------------------------------------------------------------
// train_source
// ---------------------------------------------------------------------------

namespace {

Tensor assemble_batch(const std::vector<Scene>& scenes,
                      std::span<const std::size_t> idx) {
    const auto& first = scenes[idx[0]].image.shape;
    Tensor batch(Shape4{static_cast<int>(idx.size()), first.c, first.h,
                        first.w});
    const std::size_t chw = static_cast<std::size_t>(first.c) * first.h * first.w;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        std::copy_n(scenes[idx[b]].image.data.data(), chw,
                    batch.data.data() + b * chw);
    }
    return batch;
}

struct SgdState {
    std::vector<std::vector<double>> vel_w, vel_b; // per layer
};

void sgd_step(SegModel& model, const std::vector<LayerGrads>& grads,
              SgdState& state, float lr, float momentum) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto update = [&](std::vector<float>& params,
                          const std::vector<double>& g,
                          std::vector<double>& vel) {
            if (vel.size() != params.size()) vel.assign(params.size(), 0.0);
            for (std::size_t k = 0; k < params.size(); ++k) {
                vel[k] = momentum * vel[k] + g[k];
                params[k] = static_cast<float>(params[k] - lr * vel[k]);
            }
        };
        if (auto* conv = std::get_if<ConvLayer>(&model.layers[i])) {
            update(conv->weight, grads[i].weight, state.vel_w[i]);
            update(conv->bias, grads[i].bias, state.vel_b[i]);
        } else if (auto* bn = std::get_if<BnLayer>(&model.layers[i])) {
            update(bn->scale, grads[i].weight, state.vel_w[i]);
            update(bn->shift, grads[i].bias, state.vel_b[i]);
        }
    }
}

double stored_mode_pixel_acc(const SegModel& model,
                             const std::vector<Scene>& scenes,
                             int batch_size) {
    std::uint64_t correct = 0, total = 0;
    std::vector<std::size_t> idx(scenes.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
        Tensor batch = assemble_batch(
            scenes, std::span(idx).subspan(start, end - start));
        const ForwardResult res = forward(model, batch, NormMode::Stored);
        for (std::size_t b = 0; b < end - start; ++b) {
            const Mask pred = argmax_mask(res.probs_full, static_cast<int>(b));
            const Mask& gt = scenes[idx[start + b]].mask;
            for (std::size_t i = 0; i < pred.labels.size(); ++i) {
                correct += pred.labels[i] == gt.labels[i];
            }
            total += pred.labels.size();
        }
    }
    return total == 0 ? 0.0
                      : static_cast<double>(correct) / static_cast<double>(total);
}

double stored_mode_miou(const SegModel& model,
                        const std::vector<Scene>& scenes, int num_classes,
                        int batch_size) {
    ConfusionMatrix cm(num_classes);
    std::vector<std::size_t> idx(scenes.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
        Tensor batch = assemble_batch(
            scenes, std::span(idx).subspan(start, end - start));
        const ForwardResult res = forward(model, batch, NormMode::Stored);
        for (std::size_t b = 0; b < end - start; ++b) {
            const Mask pred = argmax_mask(res.probs_full, static_cast<int>(b));
            accumulate(cm, scenes[idx[start + b]].mask, pred);
        }
    }
    return compute_iou(cm).miou;
}

} // namespace

std::pair<SegModel, TrainingLog> train_source(const Dataset& dataset,
                                              SegModel model,
                                              const TrainConfig& config) {
    const auto t_start = std::chrono::steady_clock::now();
    if (dataset.train.empty()) {
        throw std::invalid_argument("train_source: empty training split");
    }
    if (config.batch_size < 1) {
        throw std::invalid_argument(fmt::format(
            "train_source: batch_size {} < 1", config.batch_size));
    }
    if (config.learning_rate < 0.0f) {
        throw std::invalid_argument(fmt::format(
            "train_source: learning_rate {} < 0", config.learning_rate));
    }
    const int k = model.num_classes();
    for (const std::size_t si : dataset.train) {
        for (const auto label : dataset.scenes[si].mask.labels) {
            if (label >= k) {
                throw std::invalid_argument(fmt::format(
                    "train_source: scene {} has label {} >= num_classes {}",
                    si, label, k));
            }
        }
    }

    TrainingLog log;
    Rng rng(config.seed);
    SgdState sgd;
    sgd.vel_w.resize(model.layers.size());
    sgd.vel_b.resize(model.layers.size());

    std::vector<std::size_t> order(dataset.train.begin(), dataset.train.end());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        // Fisher-Yates shuffle from the run RNG.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }

        if (epoch == 1) {
            // Loss over the epoch-1 batches before any update, for the
            // descent check.
            double init_loss = 0.0;
            int batches = 0;
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(config.batch_size)) {
                const std::size_t end = std::min(
                    order.size(),
                    start + static_cast<std::size_t>(config.batch_size));
                Tensor batch = assemble_batch(
                    dataset.scenes, std::span(order).subspan(start, end - start));
                std::vector<Mask> labels;
                for (std::size_t b = start; b < end; ++b) {
                    labels.push_back(dataset.scenes[order[b]].mask);
                }
                Tape tape = forward_train(model, batch, 0.0f);
                Tensor dprobs;
                init_loss += nll_loss_and_grad(tape.probs_full, labels, dprobs);
                ++batches;
            }
            log.init_loss = init_loss / std::max(1, batches);
        }

        double epoch_loss = 0.0;
        std::uint64_t correct = 0, total = 0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(
                order.size(), start + static_cast<std::size_t>(config.batch_size));
            Tensor batch = assemble_batch(
                dataset.scenes, std::span(order).subspan(start, end - start));
            std::vector<Mask> labels;
            for (std::size_t b = start; b < end; ++b) {
                labels.push_back(dataset.scenes[order[b]].mask);
            }

            Tape tape = forward_train(model, batch, config.bn_train_momentum);
            Tensor dprobs_full;
            const double loss =
                nll_loss_and_grad(tape.probs_full, labels, dprobs_full);
            if (!std::isfinite(loss)) {
                throw std::runtime_error(fmt::format(
                    "train_source: non-finite loss {} at epoch {} batch {}",
                    loss, epoch, batches));
            }
            epoch_loss += loss;
            ++batches;

            for (std::size_t b = 0; b < labels.size(); ++b) {
                const Mask pred =
                    argmax_mask(tape.probs_full, static_cast<int>(b));
                for (std::size_t i = 0; i < pred.labels.size(); ++i) {
                    correct += pred.labels[i] == labels[b].labels[i];
                }
                total += pred.labels.size();
            }

            const bool upsampled =
                !(tape.probs_full.shape == tape.pre_up_shape);
            Tensor dprobs =
                upsampled ? upsample_backward(dprobs_full, tape.pre_up_shape.h,
                                              tape.pre_up_shape.w)
                          : std::move(dprobs_full);
            const auto grads =
                backward(model, tape, softmax_backward(tape.probs, dprobs));
            sgd_step(model, grads, sgd, config.learning_rate,
                     config.sgd_momentum);
        }
        log.epochs.push_back(
            {epoch, epoch_loss / std::max(1, batches),
             total == 0 ? 0.0
                        : static_cast<double>(correct) /
                              static_cast<double>(total)});
    }

    const auto train_scenes = dataset.split_scenes(dataset.train);
    log.final_train_pixel_acc =
        stored_mode_pixel_acc(model, train_scenes, config.batch_size);
    if (!dataset.val.empty()) {
        log.val_miou = stored_mode_miou(model, dataset.split_scenes(dataset.val),
                                        k, config.batch_size);
    }
    if (!dataset.test.empty()) {
        log.test_miou = stored_mode_miou(
            model, dataset.split_scenes(dataset.test), k, config.batch_size);
    }
    log.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_start)
            .count();
    return {std::move(model), std::move(log)};
}

} // namespace drift
