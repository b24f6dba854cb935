// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drift/metrics.hpp"
#include "drift/model.hpp"
#include "drift/synth.hpp"
#include "drift/train.hpp"
#include "drift/tta.hpp"

namespace drift {

enum class RunMode {
    SourceOnly,
    DmOnly,
    ImOnly,
    Full,
    FixedMomentum,
};

std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& name);

struct ExperimentConfig {
    RunMode mode = RunMode::Full;
    double fixed_momentum = 0.5; // used by RunMode::FixedMomentum
    Corruption corruption;       // kind, severity, corruption seed
    int batch_size = 8;
    std::uint64_t order_seed = 1;
    DmConfig dm;
    ImConfig im;
};

struct EvalReport {
    std::vector<double> per_class_iou; // NaN for undefined classes
    double miou = 0.0;
    double pixel_acc = 0.0;
    std::vector<double> running_miou; // mIoU of the accumulated confusion
                                      // matrix after each batch
    double max_prob_sum_dev = 0.0;
    double min_running_var = 0.0;
    int batches = 0;
    int scenes = 0;
    double wall_time_sec = 0.0;
};

/// Runs one mode over a stream built from the scenes: predictions are scored
/// online, with the adaptation state available at each batch. Deterministic
/// for fixed seeds.
EvalReport run_experiment(const SegModel& model,
                          const std::vector<Scene>& scenes,
                          const ExperimentConfig& config,
                          std::vector<Mask>* predictions = nullptr);

/// Same run, but on caller-owned adaptation state (for pause/resume): state
/// and bank are advanced in place instead of starting fresh.
EvalReport run_experiment_stateful(const SegModel& model,
                                   const std::vector<Scene>& scenes,
                                   const ExperimentConfig& config,
                                   BnAdaptState& state, PrototypeBank& bank,
                                   std::vector<Mask>* predictions = nullptr);

/// Report JSON (stable key order; wall_time_sec is the only
/// run-to-run-varying field).
std::string report_json(const EvalReport& report,
                        const ExperimentConfig& config);
void write_report_json(const EvalReport& report, const ExperimentConfig& config,
                       const std::filesystem::path& path);

/// Runs the Table-2/3 style mode sweep on one stream: source-only, dm-only,
/// im-only, full, plus fixed-momentum at each requested value.
std::map<std::string, EvalReport> run_ablation(
    const SegModel& model, const std::vector<Scene>& scenes,
    const ExperimentConfig& base_config,
    const std::vector<double>& fixed_momenta = {0.1, 0.5, 0.9});

std::string ablation_json(const std::map<std::string, EvalReport>& results,
                          const ExperimentConfig& base_config);

/// Training log JSON written by `train-source` (per-epoch loss/accuracy plus
/// the recorded clean val/test mIoU).
std::string training_log_json(const TrainingLog& log,
                              const TrainConfig& config);
void write_training_log(const TrainingLog& log, const TrainConfig& config,
                        const std::filesystem::path& path);

} // namespace drift
