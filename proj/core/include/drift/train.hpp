// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "drift/mask.hpp"
#include "drift/model.hpp"
#include "drift/synth.hpp"
#include "drift/tensor.hpp"

namespace drift {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    float learning_rate = 0.05f;
    float sgd_momentum = 0.9f;
    std::uint64_t seed = 1;
    float bn_train_momentum = 0.1f; // EMA factor for stored BN statistics
};

struct EpochStats {
    int epoch = 0;      // 1-based
    double loss = 0.0;  // mean cross-entropy over the epoch
    double pixel_acc = 0.0;
};

struct TrainingLog {
    double init_loss = 0.0; // mean loss over epoch-1 batches before training
    std::vector<EpochStats> epochs;
    double final_train_pixel_acc = 0.0; // Stored-mode accuracy, post-training
    double val_miou = 0.0;              // clean validation mIoU, Stored mode
    double test_miou = 0.0;             // clean test mIoU, Stored mode
    double wall_time_sec = 0.0;
};

/// Trains the model on the dataset's train split with SGD + momentum and
/// per-pixel cross-entropy. BN runs in Batch mode and updates stored
/// statistics with EMA momentum config.bn_train_momentum. Deterministic for a
/// given (seed, config, dataset). Throws if the loss goes non-finite.
std::pair<SegModel, TrainingLog> train_source(const Dataset& dataset,
                                              SegModel model,
                                              const TrainConfig& config);

/// Compares analytic gradients of the mean cross-entropy loss against central
/// finite differences (double-precision forward path, default step 1e-3) for
/// `samples` randomly chosen parameters. Samples whose +/- step flips a ReLU
/// activation state straddle a kink where the derivative does not exist; they
/// are redrawn. Returns the max relative error with a 1e-4 absolute floor in
/// the denominator.
double grad_check(const SegModel& model, const Tensor& input,
                  const std::vector<Mask>& labels, int samples = 200,
                  double step = 1e-3, std::uint64_t seed = 17);

/// Same check for the mean squared error between final logits and `target`
/// (central differences are exact for models that are linear in their
/// parameters, up to float rounding).
double grad_check_quadratic(const SegModel& model, const Tensor& input,
                            const Tensor& target, int samples = 200,
                            double step = 1e-3, std::uint64_t seed = 17);

/// Gradients for all trainable parameters, in layer order. Exposed for the
/// symmetry tests; train_source uses it internally.
struct LayerGrads {
    std::vector<double> weight; // conv weight or BN scale
    std::vector<double> bias;   // conv bias or BN shift
};
enum class LossKind { CrossEntropy, SquaredError };
std::vector<LayerGrads> loss_gradients(const SegModel& model,
                                       const Tensor& input,
                                       const std::vector<Mask>& labels,
                                       const Tensor* quadratic_target,
                                       LossKind kind, double* loss_out);

} // namespace drift
