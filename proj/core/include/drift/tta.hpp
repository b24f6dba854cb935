// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "drift/mask.hpp"
#include "drift/model.hpp"
#include "drift/synth.hpp"
#include "drift/tensor.hpp"

namespace drift {

/// Distribution-matching configuration: initial momentum and its geometric
/// decay per adaptation step.
struct DmConfig {
    double alpha0 = 0.9;
    double gamma_dm = 0.95;
};

/// Instance-matching configuration: prototype momentum/decay, the confidence
/// threshold for center contributions, the blend weight of the
/// prototype prediction, and the distance-softmax temperature.
struct ImConfig {
    double beta0 = 0.9;
    double gamma_im = 0.95;
    double p0 = 0.5;
    double gamma_blend = 0.2;
    double tau = 1.0;
};

/// Running BN statistics per layer/channel plus the current momentum.
/// At step 0 the statistics equal the source model's stored statistics.
struct BnAdaptState {
    std::vector<std::vector<double>> mean; // [bn layer][channel]
    std::vector<std::vector<double>> var;
    double alpha = 0.9;
    std::uint32_t step = 0;

    static BnAdaptState from_model(const SegModel& model, const DmConfig& cfg);

    /// Statistics of one layer as float spans for normalization.
    BnStats layer_stats(int bn_index) const;
    double min_variance() const;
};

/// Per-batch class centers R~_i: mean feature of confidently predicted
/// pixels per class.
struct BatchCenters {
    int feature_dim = 0;
    std::vector<std::uint8_t> present;       // per class
    std::vector<std::vector<float>> center;  // per class, size C when present
    std::vector<std::uint64_t> confident_count;
};

/// Running class-center prototypes R_i with their momentum.
struct PrototypeBank {
    int feature_dim = 0;
    std::vector<std::uint8_t> present;
    std::vector<std::vector<float>> center;
    double beta = 0.9;
    std::uint32_t step = 0;

    static PrototypeBank init(int num_classes, int feature_dim,
                              const ImConfig& cfg);
    bool any_present() const;
    int num_classes() const { return static_cast<int>(present.size()); }
};

/// One geometric momentum decay step: returns m * gamma.
double decay_momentum(double momentum, double gamma);

/// Folds per-layer batch statistics into the running statistics with the
/// momentum current at this step, then increments the step counter and
/// decays the momentum.
void dm_update(BnAdaptState& state, const std::vector<BnStats>& batch_stats,
               const DmConfig& cfg);

/// The fold alone (no counter/momentum change); adapt_step uses this per BN
/// layer mid-forward and finishes the step once.
void dm_fold_layer(BnAdaptState& state, int bn_index,
                   const BnStats& batch_stats);
void dm_finish_step(BnAdaptState& state, double gamma, bool decay = true);

/// Mean feature over pixels whose argmax class is i and whose max softmax
/// probability is >= p0 (first-index argmax tie-breaking). Classes with no
/// confident pixel come back absent.
BatchCenters batch_class_centers(const Tensor& features, const Tensor& probs,
                                 double p0);

/// Eq.-(5)-style prototype update: lazily initializes classes on first
/// observation, otherwise folds with the current beta; then decays beta once.
void im_update(PrototypeBank& bank, const BatchCenters& centers,
               const ImConfig& cfg);
void im_fold(PrototypeBank& bank, const BatchCenters& centers);
void im_finish_step(PrototypeBank& bank, double gamma, bool decay = true);

/// Distance softmax over present prototypes:
/// P_i = exp(-d_i/tau) / sum_j exp(-d_j/tau) with d = ||F - R_i||^2 / C,
/// stabilized by min-distance subtraction; absent classes get 0.
/// Rejects an empty bank (callers fall back to M = L).
Tensor im_predict(const Tensor& features, const PrototypeBank& bank,
                  double tau);

/// M = (1 - gamma) * L + gamma * P, per pixel and channel.
Tensor blend_predictions(const Tensor& probs, const Tensor& proto_probs,
                         double gamma_blend);

struct AdaptOptions {
    DmConfig dm;
    ImConfig im;
    bool dm_enabled = true;
    bool im_enabled = true;
    /// When set, alpha and beta stay fixed at this value (no decay) --
    /// the fixed-momentum ablation.
    std::optional<double> fixed_momentum;
};

struct AdaptOutput {
    std::vector<Mask> masks;
    double max_prob_sum_dev = 0.0; // max |per-pixel sum - 1| over L, P, M
};

/// One backpropagation-free adaptation step over a batch:
///  1. forward pass; each BN layer folds its input's batch statistics into
///     the running statistics and normalizes with the updated values,
///  2. alpha decays once,
///  3. F and L are tapped at feature resolution,
///  4. batch centers -> prototype update -> beta decays once,
///  5. prototype prediction (if any prototype exists), upsample L and P,
///     blend, argmax.
/// With dm_enabled = false the forward uses stored statistics; with
/// im_enabled = false the blend is skipped (M = L).
AdaptOutput adapt_step(const SegModel& model, BnAdaptState& state,
                       PrototypeBank& bank, const StreamBatch& batch,
                       const AdaptOptions& options);

/// Snapshot file ("DADP") with alpha, beta, step counters, running statistics
/// and the prototype bank, for pause/resume.
void save_adapt_state(const BnAdaptState& state, const PrototypeBank& bank,
                      const std::filesystem::path& path);
std::pair<BnAdaptState, PrototypeBank> load_adapt_state(
    const std::filesystem::path& path);

} // namespace drift
