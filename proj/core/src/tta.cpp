// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/tta.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "binio.hpp"
#include "drift/parallel.hpp"

namespace drift {

BnAdaptState BnAdaptState::from_model(const SegModel& model,
                                      const DmConfig& cfg) {
    if (cfg.alpha0 < 0.0 || cfg.alpha0 > 1.0) {
        throw std::invalid_argument(
            fmt::format("alpha0 {} outside [0, 1]", cfg.alpha0));
    }
    BnAdaptState st;
    st.alpha = cfg.alpha0;
    st.step = 0;
    for (const auto& layer : model.layers) {
        if (const auto* bn = std::get_if<BnLayer>(&layer)) {
            st.mean.emplace_back(bn->stored_mean.begin(),
                                 bn->stored_mean.end());
            st.var.emplace_back(bn->stored_var.begin(), bn->stored_var.end());
        }
    }
    return st;
}

BnStats BnAdaptState::layer_stats(int bn_index) const {
    BnStats s;
    s.mean.assign(mean[bn_index].begin(), mean[bn_index].end());
    s.var.assign(var[bn_index].begin(), var[bn_index].end());
    return s;
}

double BnAdaptState::min_variance() const {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& layer : var) {
        for (const double v : layer) lo = std::min(lo, v);
    }
    return lo;
}

PrototypeBank PrototypeBank::init(int num_classes, int feature_dim,
                                  const ImConfig& cfg) {
    if (cfg.p0 < 0.0 || cfg.p0 > 1.0) {
        throw std::invalid_argument(fmt::format("p0 {} outside [0, 1]", cfg.p0));
    }
    if (cfg.gamma_blend < 0.0 || cfg.gamma_blend > 1.0) {
        throw std::invalid_argument(
            fmt::format("gamma_blend {} outside [0, 1]", cfg.gamma_blend));
    }
    if (cfg.tau <= 0.0) {
        throw std::invalid_argument(fmt::format("tau {} <= 0", cfg.tau));
    }
    PrototypeBank bank;
    bank.feature_dim = feature_dim;
    bank.present.assign(num_classes, 0);
    bank.center.assign(num_classes, {});
    bank.beta = cfg.beta0;
    bank.step = 0;
    return bank;
}

bool PrototypeBank::any_present() const {
    return std::any_of(present.begin(), present.end(),
                       [](std::uint8_t p) { return p != 0; });
}

double decay_momentum(double momentum, double gamma) {
    if (gamma <= 0.0 || gamma >= 1.0) {
        throw std::invalid_argument(
            fmt::format("decay gamma {} outside (0, 1)", gamma));
    }
    return momentum * gamma;
}

void dm_fold_layer(BnAdaptState& state, int bn_index,
                   const BnStats& batch_stats) {
    if (bn_index < 0 || bn_index >= static_cast<int>(state.mean.size())) {
        throw std::invalid_argument(fmt::format(
            "dm_fold_layer: BN index {} outside {} layers", bn_index,
            state.mean.size()));
    }
    auto& mean = state.mean[bn_index];
    auto& var = state.var[bn_index];
    if (batch_stats.mean.size() != mean.size() ||
        batch_stats.var.size() != var.size()) {
        throw std::invalid_argument(fmt::format(
            "dm_fold_layer: layer {} has {} channels, batch stats have {}",
            bn_index, mean.size(), batch_stats.mean.size()));
    }
    const double a = state.alpha;
    for (std::size_t c = 0; c < mean.size(); ++c) {
        if (batch_stats.var[c] < 0.0f) {
            throw std::invalid_argument(fmt::format(
                "dm_fold_layer: negative batch variance {} (layer {} channel "
                "{})",
                batch_stats.var[c], bn_index, c));
        }
        mean[c] = (1.0 - a) * mean[c] + a * batch_stats.mean[c];
        var[c] = (1.0 - a) * var[c] + a * batch_stats.var[c];
    }
}

void dm_finish_step(BnAdaptState& state, double gamma, bool decay) {
    ++state.step;
    if (decay) state.alpha = decay_momentum(state.alpha, gamma);
}

void dm_update(BnAdaptState& state, const std::vector<BnStats>& batch_stats,
               const DmConfig& cfg) {
    if (batch_stats.size() != state.mean.size()) {
        throw std::invalid_argument(fmt::format(
            "dm_update: stats for {} layers, state has {}", batch_stats.size(),
            state.mean.size()));
    }
    for (std::size_t l = 0; l < batch_stats.size(); ++l) {
        dm_fold_layer(state, static_cast<int>(l), batch_stats[l]);
    }
    dm_finish_step(state, cfg.gamma_dm);
}

BatchCenters batch_class_centers(const Tensor& features, const Tensor& probs,
                                 double p0) {
    const auto& fs = features.shape;
    const auto& ps = probs.shape;
    if (fs.n != ps.n || fs.h != ps.h || fs.w != ps.w) {
        throw std::invalid_argument(fmt::format(
            "batch_class_centers: features {} and probs {} not aligned",
            fs.str(), ps.str()));
    }
    if (p0 < 0.0 || p0 > 1.0) {
        throw std::invalid_argument(
            fmt::format("batch_class_centers: p0 {} outside [0, 1]", p0));
    }
    const int k = ps.c;
    const int c_dim = fs.c;
    BatchCenters out;
    out.feature_dim = c_dim;
    out.present.assign(k, 0);
    out.center.assign(k, {});
    out.confident_count.assign(k, 0);

    std::vector<std::vector<double>> acc(
        k, std::vector<double>(c_dim, 0.0));
    const std::size_t hw = static_cast<std::size_t>(fs.h) * fs.w;
    for (int n = 0; n < fs.n; ++n) {
        const float* pbase = probs.plane(n, 0);
        const float* fbase = features.plane(n, 0);
        for (std::size_t i = 0; i < hw; ++i) {
            int best = 0;
            float best_p = pbase[i];
            for (int c = 1; c < k; ++c) {
                const float v = pbase[static_cast<std::size_t>(c) * hw + i];
                if (v > best_p) {
                    best_p = v;
                    best = c;
                }
            }
            if (best_p < p0) continue;
            auto& a = acc[best];
            for (int c = 0; c < c_dim; ++c) {
                a[c] += fbase[static_cast<std::size_t>(c) * hw + i];
            }
            ++out.confident_count[best];
        }
    }
    for (int cls = 0; cls < k; ++cls) {
        if (out.confident_count[cls] == 0) continue;
        out.present[cls] = 1;
        out.center[cls].resize(c_dim);
        const double inv = 1.0 / static_cast<double>(out.confident_count[cls]);
        for (int c = 0; c < c_dim; ++c) {
            out.center[cls][c] = static_cast<float>(acc[cls][c] * inv);
        }
    }
    return out;
}

void im_fold(PrototypeBank& bank, const BatchCenters& centers) {
    if (centers.feature_dim != bank.feature_dim) {
        throw std::invalid_argument(fmt::format(
            "im_fold: centers have feature dim {}, bank expects {}",
            centers.feature_dim, bank.feature_dim));
    }
    if (centers.present.size() != bank.present.size()) {
        throw std::invalid_argument(fmt::format(
            "im_fold: centers cover {} classes, bank has {}",
            centers.present.size(), bank.present.size()));
    }
    const double b = bank.beta;
    for (std::size_t cls = 0; cls < bank.present.size(); ++cls) {
        if (!centers.present[cls]) continue; // unseen classes keep prior value
        if (!bank.present[cls]) {
            bank.center[cls] = centers.center[cls]; // lazy init
            bank.present[cls] = 1;
            continue;
        }
        auto& r = bank.center[cls];
        const auto& rt = centers.center[cls];
        for (std::size_t c = 0; c < r.size(); ++c) {
            r[c] = static_cast<float>((1.0 - b) * r[c] + b * rt[c]);
        }
    }
}

void im_finish_step(PrototypeBank& bank, double gamma, bool decay) {
    ++bank.step;
    if (decay) bank.beta = decay_momentum(bank.beta, gamma);
}

void im_update(PrototypeBank& bank, const BatchCenters& centers,
               const ImConfig& cfg) {
    im_fold(bank, centers);
    im_finish_step(bank, cfg.gamma_im);
}

Tensor im_predict(const Tensor& features, const PrototypeBank& bank,
                  double tau) {
    if (!bank.any_present()) {
        throw std::invalid_argument(
            "im_predict: prototype bank has no present class");
    }
    if (tau <= 0.0) {
        throw std::invalid_argument(fmt::format("im_predict: tau {} <= 0", tau));
    }
    const auto& fs = features.shape;
    if (fs.c != bank.feature_dim) {
        throw std::invalid_argument(fmt::format(
            "im_predict: features have {} channels, bank expects {}", fs.c,
            bank.feature_dim));
    }
    const int k = bank.num_classes();
    std::vector<int> live;
    for (int cls = 0; cls < k; ++cls) {
        if (bank.present[cls]) live.push_back(cls);
    }

    Tensor out(Shape4{fs.n, k, fs.h, fs.w});
    const std::size_t hw = static_cast<std::size_t>(fs.h) * fs.w;
    const double inv_c = 1.0 / static_cast<double>(fs.c);
    parallel_for(static_cast<std::size_t>(fs.n), [&](std::size_t ni) {
        const int n = static_cast<int>(ni);
        const float* fbase = features.plane(n, 0);
        float* obase = out.plane(n, 0);
        std::vector<double> dist(live.size());
        for (std::size_t i = 0; i < hw; ++i) {
            double dmin = std::numeric_limits<double>::infinity();
            for (std::size_t li = 0; li < live.size(); ++li) {
                const auto& center = bank.center[live[li]];
                double sq = 0.0;
                for (int c = 0; c < fs.c; ++c) {
                    const double d =
                        static_cast<double>(
                            fbase[static_cast<std::size_t>(c) * hw + i]) -
                        center[c];
                    sq += d * d;
                }
                dist[li] = sq * inv_c;
                dmin = std::min(dmin, dist[li]);
            }
            double sum = 0.0;
            for (const double d : dist) sum += std::exp(-(d - dmin) / tau);
            for (std::size_t li = 0; li < live.size(); ++li) {
                obase[static_cast<std::size_t>(live[li]) * hw + i] =
                    static_cast<float>(std::exp(-(dist[li] - dmin) / tau) / sum);
            }
        }
    });
    return out;
}

Tensor blend_predictions(const Tensor& probs, const Tensor& proto_probs,
                         double gamma_blend) {
    if (!(probs.shape == proto_probs.shape)) {
        throw std::invalid_argument(
            fmt::format("blend_predictions: L shape {} != P shape {}",
                        probs.shape.str(), proto_probs.shape.str()));
    }
    if (gamma_blend < 0.0 || gamma_blend > 1.0) {
        throw std::invalid_argument(fmt::format(
            "blend_predictions: gamma {} outside [0, 1]", gamma_blend));
    }
    if (gamma_blend == 0.0) return probs;
    if (gamma_blend == 1.0) return proto_probs;
    Tensor out(probs.shape);
    const float g = static_cast<float>(gamma_blend);
    const float one_minus = 1.0f - g;
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
        out.data[i] = one_minus * probs.data[i] + g * proto_probs.data[i];
    }
    return out;
}

namespace {

/// Max |per-pixel channel sum - 1| of a probability tensor.
double prob_sum_deviation(const Tensor& probs) {
    const auto& s = probs.shape;
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    double dev = 0.0;
    for (int n = 0; n < s.n; ++n) {
        const float* base = probs.plane(n, 0);
        for (std::size_t i = 0; i < hw; ++i) {
            double sum = 0.0;
            for (int c = 0; c < s.c; ++c) {
                sum += base[static_cast<std::size_t>(c) * hw + i];
            }
            dev = std::max(dev, std::fabs(sum - 1.0));
        }
    }
    return dev;
}

} // namespace

AdaptOutput adapt_step(const SegModel& model, BnAdaptState& state,
                       PrototypeBank& bank, const StreamBatch& batch,
                       const AdaptOptions& options) {
    const bool decay = !options.fixed_momentum.has_value();

    ForwardResult res;
    if (options.dm_enabled) {
        if (state.mean.size() != static_cast<std::size_t>(model.bn_count())) {
            throw std::invalid_argument(fmt::format(
                "adapt_step: state covers {} BN layers, model has {}",
                state.mean.size(), model.bn_count()));
        }
        // Update-then-normalize, layer by layer: later layers see activations
        // normalized with already-updated statistics.
        res = forward_custom(
            model, batch.images,
            [&](int bn_index, const BnStats& batch_stats, const BnLayer&) {
                dm_fold_layer(state, bn_index, batch_stats);
                return state.layer_stats(bn_index);
            });
        dm_finish_step(state, options.dm.gamma_dm, decay);
    } else {
        res = forward(model, batch.images, NormMode::Stored);
    }

    AdaptOutput out;
    out.max_prob_sum_dev = prob_sum_deviation(res.probs_full);

    Tensor blended;
    if (options.im_enabled) {
        const BatchCenters centers =
            batch_class_centers(res.features, res.probs, options.im.p0);
        im_fold(bank, centers);
        im_finish_step(bank, options.im.gamma_im, decay);
        if (bank.any_present()) {
            const Tensor proto = im_predict(res.features, bank, options.im.tau);
            const Tensor proto_full = bilinear_upsample(
                proto, res.probs_full.shape.h, res.probs_full.shape.w);
            out.max_prob_sum_dev =
                std::max(out.max_prob_sum_dev, prob_sum_deviation(proto_full));
            blended = blend_predictions(res.probs_full, proto_full,
                                        options.im.gamma_blend);
            out.max_prob_sum_dev =
                std::max(out.max_prob_sum_dev, prob_sum_deviation(blended));
        } else {
            blended = res.probs_full;
        }
    } else {
        blended = res.probs_full;
    }

    out.masks.reserve(batch.masks.size());
    for (int b = 0; b < blended.shape.n; ++b) {
        out.masks.push_back(argmax_mask(blended, b));
    }
    return out;
}

void save_adapt_state(const BnAdaptState& state, const PrototypeBank& bank,
                      const std::filesystem::path& path) {
    binio::Writer w(path);
    w.magic("DADP");
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(state.mean.size()));
    for (std::size_t l = 0; l < state.mean.size(); ++l) {
        w.u32(static_cast<std::uint32_t>(state.mean[l].size()));
        w.f64_span(state.mean[l]);
        w.f64_span(state.var[l]);
    }
    w.f64(state.alpha);
    w.u32(state.step);

    w.u32(static_cast<std::uint32_t>(bank.present.size()));
    w.u32(static_cast<std::uint32_t>(bank.feature_dim));
    w.f64(bank.beta);
    w.u32(bank.step);
    std::vector<float> zeros(bank.feature_dim, 0.0f);
    for (std::size_t cls = 0; cls < bank.present.size(); ++cls) {
        w.u8(bank.present[cls]);
        w.f32_span(bank.present[cls] ? std::span<const float>(bank.center[cls])
                                     : std::span<const float>(zeros));
    }
    w.close();
}

std::pair<BnAdaptState, PrototypeBank> load_adapt_state(
    const std::filesystem::path& path) {
    binio::Reader r(path);
    r.expect_magic("DADP", "adaptation state");
    const auto version = r.u8();
    if (version != 1) {
        throw std::runtime_error(
            fmt::format("'{}': unsupported adaptation-state version {}",
                        r.path(), version));
    }
    BnAdaptState state;
    const auto layers = r.u32();
    state.mean.resize(layers);
    state.var.resize(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        const auto channels = r.u32();
        state.mean[l].resize(channels);
        state.var[l].resize(channels);
        r.f64_into(state.mean[l]);
        r.f64_into(state.var[l]);
    }
    state.alpha = r.f64();
    state.step = r.u32();

    PrototypeBank bank;
    const auto classes = r.u32();
    bank.feature_dim = static_cast<int>(r.u32());
    bank.beta = r.f64();
    bank.step = r.u32();
    bank.present.resize(classes);
    bank.center.assign(classes, {});
    for (std::uint32_t cls = 0; cls < classes; ++cls) {
        bank.present[cls] = r.u8();
        std::vector<float> center(bank.feature_dim);
        r.f32_into(center);
        if (bank.present[cls]) bank.center[cls] = std::move(center);
    }
    r.expect_end();
    return {std::move(state), std::move(bank)};
}

} // namespace drift
