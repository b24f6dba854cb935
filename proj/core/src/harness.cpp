// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace drift {

std::string to_string(RunMode mode) {
    switch (mode) {
    case RunMode::SourceOnly: return "source-only";
    case RunMode::DmOnly: return "dm-only";
    case RunMode::ImOnly: return "im-only";
    case RunMode::Full: return "full";
    case RunMode::FixedMomentum: return "fixed-momentum";
    }
    return "unknown";
}

RunMode run_mode_from_string(const std::string& name) {
    if (name == "source-only") return RunMode::SourceOnly;
    if (name == "dm-only") return RunMode::DmOnly;
    if (name == "im-only") return RunMode::ImOnly;
    if (name == "full") return RunMode::Full;
    if (name == "fixed-momentum") return RunMode::FixedMomentum;
    throw std::invalid_argument(fmt::format(
        "unknown mode '{}' (expected source-only, dm-only, im-only, full or "
        "fixed-momentum)",
        name));
}

namespace {

AdaptOptions options_for(const ExperimentConfig& cfg) {
    AdaptOptions opt;
    opt.dm = cfg.dm;
    opt.im = cfg.im;
    switch (cfg.mode) {
    case RunMode::SourceOnly:
        opt.dm_enabled = false;
        opt.im_enabled = false;
        break;
    case RunMode::DmOnly:
        opt.im_enabled = false;
        break;
    case RunMode::ImOnly:
        opt.dm_enabled = false;
        break;
    case RunMode::Full:
        break;
    case RunMode::FixedMomentum:
        opt.fixed_momentum = cfg.fixed_momentum;
        opt.dm.alpha0 = cfg.fixed_momentum;
        opt.im.beta0 = cfg.fixed_momentum;
        break;
    }
    return opt;
}

} // namespace

EvalReport run_experiment(const SegModel& model,
                          const std::vector<Scene>& scenes,
                          const ExperimentConfig& config,
                          std::vector<Mask>* predictions) {
    const AdaptOptions opt = options_for(config);
    BnAdaptState state = BnAdaptState::from_model(model, opt.dm);
    PrototypeBank bank =
        PrototypeBank::init(model.num_classes(), model.feature_dim(), opt.im);
    return run_experiment_stateful(model, scenes, config, state, bank,
                                   predictions);
}

EvalReport run_experiment_stateful(const SegModel& model,
                                   const std::vector<Scene>& scenes,
                                   const ExperimentConfig& config,
                                   BnAdaptState& state, PrototypeBank& bank,
                                   std::vector<Mask>* predictions) {
    const auto t_start = std::chrono::steady_clock::now();
    const int k = model.num_classes();
    const AdaptOptions opt = options_for(config);

    const auto stream =
        make_stream(scenes, config.batch_size, config.corruption,
                    config.order_seed);

    EvalReport report;
    ConfusionMatrix cm(k);
    report.min_running_var = state.min_variance();
    for (const auto& batch : stream) {
        const AdaptOutput out = adapt_step(model, state, bank, batch, opt);
        for (std::size_t b = 0; b < batch.masks.size(); ++b) {
            accumulate(cm, batch.masks[b], out.masks[b]);
            if (predictions != nullptr) predictions->push_back(out.masks[b]);
        }
        report.max_prob_sum_dev =
            std::max(report.max_prob_sum_dev, out.max_prob_sum_dev);
        report.min_running_var =
            std::min(report.min_running_var, state.min_variance());
        report.running_miou.push_back(compute_iou(cm).miou);
        report.scenes += static_cast<int>(batch.masks.size());
        ++report.batches;
    }

    const IouResult iou = compute_iou(cm);
    report.per_class_iou = iou.per_class;
    report.miou = iou.miou;
    report.pixel_acc = iou.pixel_acc;
    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_start)
            .count();
    return report;
}

namespace {

nlohmann::ordered_json config_json(const ExperimentConfig& config) {
    nlohmann::ordered_json j;
    j["mode"] = to_string(config.mode);
    if (config.mode == RunMode::FixedMomentum) {
        j["fixed_momentum"] = config.fixed_momentum;
    }
    j["corruption"] = {{"kind", to_string(config.corruption.kind)},
                       {"severity", config.corruption.severity}};
    j["batch_size"] = config.batch_size;
    j["seeds"] = {{"order", config.order_seed},
                  {"corruption", config.corruption.seed}};
    j["dm"] = {{"alpha0", config.dm.alpha0}, {"gamma_dm", config.dm.gamma_dm}};
    j["im"] = {{"beta0", config.im.beta0},
               {"gamma_im", config.im.gamma_im},
               {"p0", config.im.p0},
               {"gamma_blend", config.im.gamma_blend},
               {"tau", config.im.tau}};
    return j;
}

nlohmann::ordered_json report_body(const EvalReport& report,
                                   const ExperimentConfig& config) {
    nlohmann::ordered_json j;
    j["report_version"] = 1;
    j["config"] = config_json(config);
    nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
    for (const double v : report.per_class_iou) {
        if (std::isnan(v)) {
            per_class.push_back(nullptr);
        } else {
            per_class.push_back(v);
        }
    }
    j["per_class_iou"] = std::move(per_class);
    j["miou"] = report.miou;
    j["pixel_acc"] = report.pixel_acc;
    j["running_miou"] = report.running_miou;
    j["invariants"] = {{"max_prob_sum_dev", report.max_prob_sum_dev},
                       {"min_running_var", report.min_running_var}};
    j["batches"] = report.batches;
    j["scenes"] = report.scenes;
    j["wall_time_sec"] = report.wall_time_sec;
    return j;
}

} // namespace

std::string report_json(const EvalReport& report,
                        const ExperimentConfig& config) {
    return report_body(report, config).dump(2) + "\n";
}

void write_report_json(const EvalReport& report, const ExperimentConfig& config,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error(
            fmt::format("cannot open '{}' for writing", path.string()));
    }
    out << report_json(report, config);
    out.close();
    if (!out) {
        throw std::runtime_error(
            fmt::format("write to '{}' failed", path.string()));
    }
}

std::map<std::string, EvalReport> run_ablation(
    const SegModel& model, const std::vector<Scene>& scenes,
    const ExperimentConfig& base_config,
    const std::vector<double>& fixed_momenta) {
    std::map<std::string, EvalReport> results;
    for (const RunMode mode : {RunMode::SourceOnly, RunMode::DmOnly,
                               RunMode::ImOnly, RunMode::Full}) {
        ExperimentConfig cfg = base_config;
        cfg.mode = mode;
        results[to_string(mode)] = run_experiment(model, scenes, cfg);
    }
    for (const double m : fixed_momenta) {
        ExperimentConfig cfg = base_config;
        cfg.mode = RunMode::FixedMomentum;
        cfg.fixed_momentum = m;
        results[fmt::format("fixed-{:g}", m)] =
            run_experiment(model, scenes, cfg);
    }
    return results;
}

std::string training_log_json(const TrainingLog& log,
                              const TrainConfig& config) {
    nlohmann::ordered_json j;
    j["log_version"] = 1;
    j["config"] = {{"epochs", config.epochs},
                   {"batch_size", config.batch_size},
                   {"learning_rate", config.learning_rate},
                   {"sgd_momentum", config.sgd_momentum},
                   {"seed", config.seed},
                   {"bn_train_momentum", config.bn_train_momentum}};
    j["init_loss"] = log.init_loss;
    nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
    for (const auto& e : log.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"loss", e.loss},
                          {"pixel_acc", e.pixel_acc}});
    }
    j["epochs"] = std::move(epochs);
    j["final"] = {{"train_pixel_acc", log.final_train_pixel_acc},
                  {"val_miou", log.val_miou},
                  {"test_miou", log.test_miou}};
    j["wall_time_sec"] = log.wall_time_sec;
    return j.dump(2) + "\n";
}

void write_training_log(const TrainingLog& log, const TrainConfig& config,
                        const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error(
            fmt::format("cannot open '{}' for writing", path.string()));
    }
    out << training_log_json(log, config);
    out.close();
    if (!out) {
        throw std::runtime_error(
            fmt::format("write to '{}' failed", path.string()));
    }
}

std::string ablation_json(const std::map<std::string, EvalReport>& results,
                          const ExperimentConfig& base_config) {
    nlohmann::ordered_json j;
    j["ablation_version"] = 1;
    j["config"] = config_json(base_config);
    nlohmann::ordered_json runs;
    for (const auto& [name, report] : results) {
        runs[name] = {{"miou", report.miou},
                      {"pixel_acc", report.pixel_acc},
                      {"batches", report.batches}};
    }
    j["results"] = std::move(runs);
    return j.dump(2) + "\n";
}

} // namespace drift
