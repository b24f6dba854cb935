// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/model.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "binio.hpp"
#include "drift/parallel.hpp"
#include "drift/rng.hpp"

namespace drift {

int SegModel::classifier_index() const {
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        if (std::holds_alternative<ConvLayer>(layers[i])) return i;
    }
    return -1;
}

int SegModel::num_classes() const {
    const int ci = classifier_index();
    if (ci < 0) throw std::runtime_error("model has no classifier conv");
    return std::get<ConvLayer>(layers[ci]).out_c;
}

int SegModel::feature_dim() const {
    const int ci = classifier_index();
    if (ci < 0) throw std::runtime_error("model has no classifier conv");
    return std::get<ConvLayer>(layers[ci]).in_c;
}

int SegModel::total_stride() const {
    int s = 1;
    for (const auto& l : layers) {
        if (const auto* conv = std::get_if<ConvLayer>(&l)) s *= conv->stride;
    }
    return s;
}

int SegModel::upsample_factor() const {
    int f = 1;
    for (const auto& l : layers) {
        if (const auto* up = std::get_if<UpsampleLayer>(&l)) f *= up->factor;
    }
    return f;
}

std::vector<int> SegModel::bn_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
        if (std::holds_alternative<BnLayer>(layers[i])) idx.push_back(i);
    }
    return idx;
}

Tensor bn_apply(const Tensor& x, std::span<const float> mean,
                std::span<const float> var, std::span<const float> scale,
                std::span<const float> shift, float eps) {
    const auto& s = x.shape;
    const auto c = static_cast<std::size_t>(s.c);
    if (mean.size() != c || var.size() != c || scale.size() != c ||
        shift.size() != c) {
        throw std::invalid_argument(fmt::format(
            "bn_apply: per-channel vectors (mean {}, var {}, scale {}, "
            "shift {}) do not all match {} channels of shape {}",
            mean.size(), var.size(), scale.size(), shift.size(), s.c, s.str()));
    }
    if (eps <= 0.0f) {
        throw std::invalid_argument(fmt::format("bn_apply: eps {} <= 0", eps));
    }
    for (std::size_t i = 0; i < c; ++i) {
        if (var[i] < 0.0f) {
            throw std::invalid_argument(fmt::format(
                "bn_apply: negative variance {} in channel {}", var[i], i));
        }
    }
    Tensor out(s);
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t planes = static_cast<std::size_t>(s.n) * c;
    parallel_for(planes, [&](std::size_t plane) {
        const int n = static_cast<int>(plane / c);
        const int ch = static_cast<int>(plane % c);
        const double inv =
            1.0 / std::sqrt(static_cast<double>(var[ch]) + eps);
        const double a = scale[ch] * inv;
        const double b = shift[ch] - static_cast<double>(mean[ch]) * a;
        const float* src = x.plane(n, ch);
        float* dst = out.plane(n, ch);
        for (std::size_t i = 0; i < hw; ++i) {
            dst[i] = static_cast<float>(a * src[i] + b);
        }
    });
    return out;
}

BnStats batch_stats_all(const Tensor& x) {
    BnStats st;
    st.mean.resize(x.shape.c);
    st.var.resize(x.shape.c);
    parallel_for(static_cast<std::size_t>(x.shape.c), [&](std::size_t ch) {
        const ChannelStats cs = batch_stats(x, static_cast<int>(ch));
        st.mean[ch] = static_cast<float>(cs.mean);
        st.var[ch] = static_cast<float>(cs.var);
    });
    return st;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
    }
    return out;
}

namespace {

Tensor conv_forward(const ConvLayer& conv, const Tensor& x) {
    Tensor w(Shape4{conv.out_c, conv.in_c, conv.kh, conv.kw});
    w.data = conv.weight;
    return conv2d(x, w, conv.bias, conv.stride, conv.pad, conv.dilation);
}

} // namespace

ForwardResult forward_custom(const SegModel& model, const Tensor& x,
                             const BnStatsSource& source) {
    const int ci = model.classifier_index();
    if (ci < 0) throw std::runtime_error("forward: model has no conv layers");
    const int stride = model.total_stride();
    if (x.shape.h % stride != 0 || x.shape.w % stride != 0) {
        throw std::invalid_argument(fmt::format(
            "forward: input shape {} not divisible by total stride {}",
            x.shape.str(), stride));
    }

    ForwardResult res;
    Tensor cur = x;
    int bn_i = 0;
    int up_h = 0, up_w = 0; // accumulate trailing upsample target
    for (int i = 0; i < static_cast<int>(model.layers.size()); ++i) {
        const Layer& layer = model.layers[i];
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            if (i == ci) res.features = cur;
            cur = conv_forward(*conv, cur);
        } else if (const auto* bn = std::get_if<BnLayer>(&layer)) {
            if (cur.shape.c != bn->channels()) {
                throw std::invalid_argument(fmt::format(
                    "forward: BN layer {} has {} channels, input shape {}", i,
                    bn->channels(), cur.shape.str()));
            }
            BnStats batch = batch_stats_all(cur);
            BnStats use = source(bn_i, batch, *bn);
            res.bn_batch_stats.push_back(std::move(batch));
            cur = bn_apply(cur, use.mean, use.var, bn->scale, bn->shift,
                           bn->eps);
            ++bn_i;
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            cur = relu(cur);
        } else if (const auto* up = std::get_if<UpsampleLayer>(&layer)) {
            if (i < ci) {
                throw std::runtime_error(
                    "forward: upsample before the classifier is unsupported");
            }
            up_h = (up_h == 0 ? cur.shape.h : up_h) * up->factor;
            up_w = (up_w == 0 ? cur.shape.w : up_w) * up->factor;
        }
    }

    res.logits = std::move(cur);
    res.probs = softmax_channels(res.logits);
    if (up_h > 0 && (up_h != res.logits.shape.h || up_w != res.logits.shape.w)) {
        res.logits_full = bilinear_upsample(res.logits, up_h, up_w);
        res.probs_full = bilinear_upsample(res.probs, up_h, up_w);
    } else {
        res.logits_full = res.logits;
        res.probs_full = res.probs;
    }
    return res;
}

ForwardResult forward(const SegModel& model, const Tensor& x, NormMode mode,
                      const std::vector<BnStats>* override_stats) {
    if (mode == NormMode::Override) {
        const auto bn_n = model.bn_indices().size();
        if (override_stats == nullptr || override_stats->size() != bn_n) {
            throw std::invalid_argument(fmt::format(
                "forward: Override mode needs stats for all {} BN layers, got "
                "{}",
                bn_n, override_stats == nullptr ? 0 : override_stats->size()));
        }
    }
    return forward_custom(
        model, x,
        [&](int bn_index, const BnStats& batch, const BnLayer& layer) {
            switch (mode) {
            case NormMode::Stored:
                return BnStats{layer.stored_mean, layer.stored_var};
            case NormMode::Batch:
                return batch;
            case NormMode::Override:
            default:
                return (*override_stats)[bn_index];
            }
        });
}

namespace {

void push_block(SegModel& m, int in_c, int out_c, int stride, int dilation,
                Rng& rng) {
    ConvLayer conv;
    conv.out_c = out_c;
    conv.in_c = in_c;
    conv.kh = conv.kw = 3;
    conv.stride = stride;
    conv.pad = dilation; // same-size output for 3x3 at stride 1
    conv.dilation = dilation;
    const std::size_t fan_in = static_cast<std::size_t>(in_c) * 9;
    const float std = std::sqrt(2.0f / static_cast<float>(fan_in));
    conv.weight.resize(static_cast<std::size_t>(out_c) * fan_in);
    for (std::size_t i = 0; i + 1 < conv.weight.size(); i += 2) {
        const auto [z0, z1] = rng.gaussian_pair();
        conv.weight[i] = std * static_cast<float>(z0);
        conv.weight[i + 1] = std * static_cast<float>(z1);
    }
    if (conv.weight.size() % 2 == 1) {
        conv.weight.back() = std * static_cast<float>(rng.gaussian_pair().first);
    }
    conv.bias.assign(out_c, 0.0f);
    m.layers.emplace_back(std::move(conv));

    BnLayer bn;
    bn.scale.assign(out_c, 1.0f);
    bn.shift.assign(out_c, 0.0f);
    bn.stored_mean.assign(out_c, 0.0f);
    bn.stored_var.assign(out_c, 1.0f);
    m.layers.emplace_back(std::move(bn));
    m.layers.emplace_back(ReluLayer{});
}

} // namespace

SegModel make_toy_model(int num_classes, std::uint64_t seed) {
    if (num_classes < 1) {
        throw std::invalid_argument(
            fmt::format("make_toy_model: num_classes {} < 1", num_classes));
    }
    Rng rng(seed);
    SegModel m;
    push_block(m, 3, 16, 1, 1, rng);
    push_block(m, 16, 32, 2, 1, rng);
    push_block(m, 32, 64, 2, 1, rng);
    push_block(m, 64, 64, 1, 1, rng);
    push_block(m, 64, 64, 1, 2, rng); // dilated context block

    ConvLayer cls;
    cls.out_c = num_classes;
    cls.in_c = 64;
    cls.kh = cls.kw = 1;
    cls.stride = 1;
    cls.pad = 0;
    cls.dilation = 1;
    const float std = std::sqrt(2.0f / 64.0f);
    cls.weight.resize(static_cast<std::size_t>(num_classes) * 64);
    for (std::size_t i = 0; i + 1 < cls.weight.size(); i += 2) {
        const auto [z0, z1] = rng.gaussian_pair();
        cls.weight[i] = std * static_cast<float>(z0);
        cls.weight[i + 1] = std * static_cast<float>(z1);
    }
    if (cls.weight.size() % 2 == 1) {
        cls.weight.back() = std * static_cast<float>(rng.gaussian_pair().first);
    }
    cls.bias.assign(num_classes, 0.0f);
    m.layers.emplace_back(std::move(cls));
    m.layers.emplace_back(UpsampleLayer{4});
    return m;
}

namespace {

constexpr std::uint8_t kTagConv = 1;
constexpr std::uint8_t kTagBn = 2;
constexpr std::uint8_t kTagRelu = 3;
constexpr std::uint8_t kTagUpsample = 4;

} // namespace

void save_model(const SegModel& model, const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic("DSEG");
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(model.layers.size()));
    for (const auto& layer : model.layers) {
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            w.u8(kTagConv);
            w.u32(static_cast<std::uint32_t>(conv->out_c));
            w.u32(static_cast<std::uint32_t>(conv->in_c));
            w.u32(static_cast<std::uint32_t>(conv->kh));
            w.u32(static_cast<std::uint32_t>(conv->kw));
            w.u32(static_cast<std::uint32_t>(conv->stride));
            w.u32(static_cast<std::uint32_t>(conv->pad));
            w.u32(static_cast<std::uint32_t>(conv->dilation));
            w.f32_span(conv->weight);
            w.f32_span(conv->bias);
        } else if (const auto* bn = std::get_if<BnLayer>(&layer)) {
            w.u8(kTagBn);
            w.u32(static_cast<std::uint32_t>(bn->channels()));
            w.f32(bn->eps);
            w.f32_span(bn->scale);
            w.f32_span(bn->shift);
            w.f32_span(bn->stored_mean);
            w.f32_span(bn->stored_var);
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            w.u8(kTagRelu);
        } else if (const auto* up = std::get_if<UpsampleLayer>(&layer)) {
            w.u8(kTagUpsample);
            w.u32(static_cast<std::uint32_t>(up->factor));
        }
    }
    w.close();
}

SegModel load_model(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("DSEG", "model");
    const auto version = r.u8();
    if (version != 1) {
        throw std::runtime_error(fmt::format(
            "'{}': unsupported model version {} at byte 4", r.path(), version));
    }
    const auto layer_count = r.u32();
    SegModel m;
    m.layers.reserve(layer_count);
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        const std::size_t at = r.pos();
        const auto tag = r.u8();
        switch (tag) {
        case kTagConv: {
            ConvLayer conv;
            conv.out_c = static_cast<int>(r.u32());
            conv.in_c = static_cast<int>(r.u32());
            conv.kh = static_cast<int>(r.u32());
            conv.kw = static_cast<int>(r.u32());
            conv.stride = static_cast<int>(r.u32());
            conv.pad = static_cast<int>(r.u32());
            conv.dilation = static_cast<int>(r.u32());
            conv.weight.resize(static_cast<std::size_t>(conv.out_c) *
                               conv.in_c * conv.kh * conv.kw);
            conv.bias.resize(conv.out_c);
            r.f32_into(conv.weight);
            r.f32_into(conv.bias);
            m.layers.emplace_back(std::move(conv));
            break;
        }
        case kTagBn: {
            BnLayer bn;
            const auto ch = r.u32();
            bn.eps = r.f32();
            if (bn.eps <= 0.0f) {
                throw std::runtime_error(fmt::format(
                    "'{}': BN layer {} has eps {} <= 0 (byte {})", r.path(), i,
                    bn.eps, at));
            }
            bn.scale.resize(ch);
            bn.shift.resize(ch);
            bn.stored_mean.resize(ch);
            bn.stored_var.resize(ch);
            r.f32_into(bn.scale);
            r.f32_into(bn.shift);
            r.f32_into(bn.stored_mean);
            r.f32_into(bn.stored_var);
            for (std::uint32_t c = 0; c < ch; ++c) {
                if (bn.stored_var[c] < 0.0f) {
                    throw std::runtime_error(fmt::format(
                        "'{}': BN layer {} channel {} has negative stored "
                        "variance {}",
                        r.path(), i, c, bn.stored_var[c]));
                }
            }
            m.layers.emplace_back(std::move(bn));
            break;
        }
        case kTagRelu:
            m.layers.emplace_back(ReluLayer{});
            break;
        case kTagUpsample: {
            UpsampleLayer up;
            up.factor = static_cast<int>(r.u32());
            m.layers.emplace_back(up);
            break;
        }
        default:
            throw std::runtime_error(
                fmt::format("'{}': unknown layer tag {} at byte {}", r.path(),
                            tag, at));
        }
    }
    r.expect_end();
    if (m.classifier_index() < 0) {
        throw std::runtime_error(
            fmt::format("'{}': model has no conv layers", r.path()));
    }
    return m;
}

} // namespace drift
