// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
//
// drift-adapt: desk-scale test-time adaptation for semantic segmentation
// under image degradation. Subcommands: gen-data, train-source, corrupt,
// adapt, eval, ablate. Experiment settings come from an optional JSON config
// file plus command-line flags; flags win.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "drift/harness.hpp"
#include "drift/model.hpp"
#include "drift/parallel.hpp"
#include "drift/rng.hpp"
#include "drift/synth.hpp"
#include "drift/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config file handling
// ---------------------------------------------------------------------------

struct CliSettings {
    std::string data_dir;
    std::string model_path;
    drift::ExperimentConfig experiment;
};

void reject_unknown_keys(const json& j, const std::string& scope,
                         const std::vector<std::string>& allowed) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw std::runtime_error("config: unknown key '" + scope + key +
                                     "'");
        }
        (void)value;
    }
}

void load_config_file(const std::string& path, CliSettings& s) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file '" + path + "'");
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config '" + path + "' is not valid JSON: " +
                                 e.what());
    }
    reject_unknown_keys(j, "",
                        {"dataset", "model", "mode", "fixed_momentum",
                         "batch_size", "corruption", "seeds", "dm", "im"});
    if (j.contains("dataset")) {
        reject_unknown_keys(j["dataset"], "dataset.", {"dir"});
        if (j["dataset"].contains("dir")) {
            s.data_dir = j["dataset"]["dir"].get<std::string>();
        }
    }
    if (j.contains("model")) s.model_path = j["model"].get<std::string>();
    if (j.contains("mode")) {
        s.experiment.mode =
            drift::run_mode_from_string(j["mode"].get<std::string>());
    }
    if (j.contains("fixed_momentum")) {
        s.experiment.fixed_momentum = j["fixed_momentum"].get<double>();
    }
    if (j.contains("batch_size")) {
        s.experiment.batch_size = j["batch_size"].get<int>();
    }
    if (j.contains("corruption")) {
        reject_unknown_keys(j["corruption"], "corruption.",
                            {"kind", "severity"});
        if (j["corruption"].contains("kind")) {
            s.experiment.corruption.kind = drift::corruption_kind_from_string(
                j["corruption"]["kind"].get<std::string>());
        }
        if (j["corruption"].contains("severity")) {
            s.experiment.corruption.severity =
                j["corruption"]["severity"].get<int>();
        }
    }
    if (j.contains("seeds")) {
        reject_unknown_keys(j["seeds"], "seeds.", {"order", "corruption"});
        if (j["seeds"].contains("order")) {
            s.experiment.order_seed = j["seeds"]["order"].get<std::uint64_t>();
        }
        if (j["seeds"].contains("corruption")) {
            s.experiment.corruption.seed =
                j["seeds"]["corruption"].get<std::uint64_t>();
        }
    }
    if (j.contains("dm")) {
        reject_unknown_keys(j["dm"], "dm.", {"alpha0", "gamma_dm"});
        if (j["dm"].contains("alpha0")) {
            s.experiment.dm.alpha0 = j["dm"]["alpha0"].get<double>();
        }
        if (j["dm"].contains("gamma_dm")) {
            s.experiment.dm.gamma_dm = j["dm"]["gamma_dm"].get<double>();
        }
    }
    if (j.contains("im")) {
        reject_unknown_keys(
            j["im"], "im.", {"beta0", "gamma_im", "p0", "gamma_blend", "tau"});
        const auto& im = j["im"];
        if (im.contains("beta0")) s.experiment.im.beta0 = im["beta0"].get<double>();
        if (im.contains("gamma_im")) {
            s.experiment.im.gamma_im = im["gamma_im"].get<double>();
        }
        if (im.contains("p0")) s.experiment.im.p0 = im["p0"].get<double>();
        if (im.contains("gamma_blend")) {
            s.experiment.im.gamma_blend = im["gamma_blend"].get<double>();
        }
        if (im.contains("tau")) s.experiment.im.tau = im["tau"].get<double>();
    }
}

/// Experiment flags shared by adapt / eval / ablate. Flags are applied after
/// the config file, so they win.
struct ExperimentFlags {
    std::string config_path, data_dir, model_path, mode, kind;
    int severity = -1, batch_size = -1;
    std::optional<std::uint64_t> order_seed, corruption_seed;
    std::optional<double> alpha0, gamma_dm, beta0, gamma_im, p0, gamma_blend,
        tau, fixed_momentum;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--data", data_dir, "dataset directory");
        cmd->add_option("--model", model_path, "weight file (DSEG)");
        cmd->add_option("--mode", mode,
                        "source-only | dm-only | im-only | full | "
                        "fixed-momentum");
        cmd->add_option("--kind", kind, "corruption kind");
        cmd->add_option("--severity", severity, "corruption severity 1..5");
        cmd->add_option("--batch-size", batch_size, "stream batch size");
        cmd->add_option("--order-seed", order_seed, "stream shuffle seed");
        cmd->add_option("--corruption-seed", corruption_seed,
                        "corruption base seed");
        cmd->add_option("--alpha0", alpha0, "initial DM momentum");
        cmd->add_option("--gamma-dm", gamma_dm, "DM momentum decay");
        cmd->add_option("--beta0", beta0, "initial IM momentum");
        cmd->add_option("--gamma-im", gamma_im, "IM momentum decay");
        cmd->add_option("--p0", p0, "confidence threshold");
        cmd->add_option("--gamma-blend", gamma_blend, "blend weight");
        cmd->add_option("--tau", tau, "distance softmax temperature");
        cmd->add_option("--fixed-momentum", fixed_momentum,
                        "momentum for fixed-momentum mode");
    }

    CliSettings resolve() const {
        CliSettings s;
        if (!config_path.empty()) load_config_file(config_path, s);
        if (!data_dir.empty()) s.data_dir = data_dir;
        if (!model_path.empty()) s.model_path = model_path;
        if (!mode.empty()) {
            s.experiment.mode = drift::run_mode_from_string(mode);
        }
        if (!kind.empty()) {
            s.experiment.corruption.kind =
                drift::corruption_kind_from_string(kind);
        }
        if (severity >= 0) s.experiment.corruption.severity = severity;
        if (batch_size >= 0) s.experiment.batch_size = batch_size;
        if (order_seed) s.experiment.order_seed = *order_seed;
        if (corruption_seed) s.experiment.corruption.seed = *corruption_seed;
        if (alpha0) s.experiment.dm.alpha0 = *alpha0;
        if (gamma_dm) s.experiment.dm.gamma_dm = *gamma_dm;
        if (beta0) s.experiment.im.beta0 = *beta0;
        if (gamma_im) s.experiment.im.gamma_im = *gamma_im;
        if (p0) s.experiment.im.p0 = *p0;
        if (gamma_blend) s.experiment.im.gamma_blend = *gamma_blend;
        if (tau) s.experiment.im.tau = *tau;
        if (fixed_momentum) s.experiment.fixed_momentum = *fixed_momentum;
        if (s.data_dir.empty()) {
            throw std::runtime_error(
                "no dataset directory (--data or config dataset.dir)");
        }
        if (s.model_path.empty()) {
            throw std::runtime_error(
                "no model path (--model or config model)");
        }
        return s;
    }
};

std::vector<drift::Scene> split_by_name(const drift::Dataset& ds,
                                        const std::string& split) {
    if (split == "train") return ds.split_scenes(ds.train);
    if (split == "val") return ds.split_scenes(ds.val);
    if (split == "test") return ds.split_scenes(ds.test);
    throw std::runtime_error("unknown split '" + split +
                             "' (expected train, val or test)");
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed, int k, int h,
                 int w, int n_train, int n_val, int n_test) {
    const drift::Dataset ds =
        drift::generate_dataset(seed, k, h, w, n_train, n_val, n_test);
    drift::save_dataset(ds, out_dir);
    std::printf("wrote %zu scenes (%d train / %d val / %d test) to %s\n",
                ds.scenes.size(), n_train, n_val, n_test, out_dir.c_str());
    return 0;
}

int cmd_train_source(const std::string& data_dir, const std::string& out_path,
                     const std::string& log_path,
                     const drift::TrainConfig& cfg, std::uint64_t init_seed) {
    const drift::Dataset ds = drift::load_dataset(data_dir);
    auto [model, log] = drift::train_source(
        ds, drift::make_toy_model(ds.num_classes, init_seed), cfg);
    drift::save_model(model, out_path);
    if (!log_path.empty()) {
        drift::write_training_log(log, cfg, log_path);
    }
    std::printf(
        "trained %d epochs in %.1f s: train acc %.4f, val mIoU %.4f, test "
        "mIoU %.4f\nweights -> %s\n",
        cfg.epochs, log.wall_time_sec, log.final_train_pixel_acc, log.val_miou,
        log.test_miou, out_path.c_str());
    return 0;
}

int cmd_corrupt(const std::string& data_dir, const std::string& kind,
                int severity, std::uint64_t seed, const std::string& split,
                std::string out_dir) {
    const drift::Dataset ds = drift::load_dataset(data_dir);
    if (out_dir.empty()) out_dir = data_dir;
    fs::create_directories(out_dir);
    const drift::CorruptionKind ckind =
        drift::corruption_kind_from_string(kind);
    const auto& indices = split == "train" ? ds.train
                          : split == "val" ? ds.val
                                           : ds.test;
    if (split != "train" && split != "val" && split != "test") {
        throw std::runtime_error("unknown split '" + split + "'");
    }
    int written = 0;
    for (const std::size_t i : indices) {
        drift::Corruption c{ckind, severity,
                            drift::derive_seed(seed, static_cast<std::uint64_t>(i))};
        const drift::Tensor degraded =
            drift::apply_corruption(ds.scenes[i].image, c);
        char name[64];
        std::snprintf(name, sizeof(name), "scene_%05zu.%s_s%d.dtns", i,
                      kind.c_str(), severity);
        drift::save_tensor(degraded, fs::path(out_dir) / name);
        ++written;
    }
    std::printf("wrote %d corrupted images (%s severity %d) to %s\n", written,
                kind.c_str(), severity, out_dir.c_str());
    return 0;
}

int run_and_report(const ExperimentFlags& flags, const std::string& split,
                   const std::string& report_path,
                   const std::string& masks_dir,
                   const std::string& save_state_path,
                   const std::string& resume_state_path) {
    const CliSettings s = flags.resolve();
    const drift::Dataset ds = drift::load_dataset(s.data_dir);
    const drift::SegModel model = drift::load_model(s.model_path);
    const auto scenes = split_by_name(ds, split);

    drift::BnAdaptState state;
    drift::PrototypeBank bank;
    if (!resume_state_path.empty()) {
        std::tie(state, bank) = drift::load_adapt_state(resume_state_path);
    } else {
        drift::DmConfig dm = s.experiment.dm;
        drift::ImConfig im = s.experiment.im;
        if (s.experiment.mode == drift::RunMode::FixedMomentum) {
            dm.alpha0 = s.experiment.fixed_momentum;
            im.beta0 = s.experiment.fixed_momentum;
        }
        state = drift::BnAdaptState::from_model(model, dm);
        bank = drift::PrototypeBank::init(model.num_classes(),
                                          model.feature_dim(), im);
    }

    std::vector<drift::Mask> predictions;
    const drift::EvalReport report = drift::run_experiment_stateful(
        model, scenes, s.experiment, state, bank, &predictions);

    if (!save_state_path.empty()) {
        drift::save_adapt_state(state, bank, save_state_path);
    }
    if (!masks_dir.empty()) {
        fs::create_directories(masks_dir);
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "pred_%05zu.ppm", i);
            drift::write_mask_image(predictions[i], fs::path(masks_dir) / name);
        }
    }
    if (!report_path.empty()) {
        drift::write_report_json(report, s.experiment, report_path);
    }
    std::printf("%s: mIoU %.4f, pixel acc %.4f over %d scenes (%d batches)\n",
                drift::to_string(s.experiment.mode).c_str(), report.miou,
                report.pixel_acc, report.scenes, report.batches);
    if (!report_path.empty()) {
        std::printf("report -> %s\n", report_path.c_str());
    }
    return 0;
}

int cmd_ablate(const ExperimentFlags& flags, const std::string& split,
               const std::vector<double>& fixed,
               const std::string& out_path) {
    const CliSettings s = flags.resolve();
    const drift::Dataset ds = drift::load_dataset(s.data_dir);
    const drift::SegModel model = drift::load_model(s.model_path);
    const auto scenes = split_by_name(ds, split);
    const auto results =
        drift::run_ablation(model, scenes, s.experiment, fixed);
    for (const auto& [name, report] : results) {
        std::printf("%-12s mIoU %.4f\n", name.c_str(), report.miou);
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << drift::ablation_json(results, s.experiment);
        if (!out) {
            throw std::runtime_error("write to '" + out_path + "' failed");
        }
        std::printf("ablation -> %s\n", out_path.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "drift-adapt: streaming BN-statistics adaptation with prototype "
        "refinement for segmentation under image degradation"};
    app.require_subcommand(1);

    int threads = -1;
    app.add_option("--threads", threads,
                   "cap intra-op threads (0 = auto, overrides "
                   "DRIFT_ADAPT_THREADS)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_out;
    std::uint64_t gen_seed = 7;
    int gen_k = 6, gen_h = 64, gen_w = 64, gen_train = 200, gen_val = 20,
        gen_test = 80;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--k", gen_k, "number of classes");
    gen->add_option("--height", gen_h, "scene height");
    gen->add_option("--width", gen_w, "scene width");
    gen->add_option("--train", gen_train, "training scenes");
    gen->add_option("--val", gen_val, "validation scenes");
    gen->add_option("--test", gen_test, "test scenes");

    // train-source
    auto* train = app.add_subcommand("train-source",
                                     "train the source segmentation model");
    std::string train_data, train_out, train_log;
    drift::TrainConfig train_cfg;
    std::uint64_t train_init_seed = 101;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output weight file")->required();
    train->add_option("--log", train_log, "training log JSON");
    train->add_option("--epochs", train_cfg.epochs, "epochs");
    train->add_option("--batch-size", train_cfg.batch_size, "batch size");
    train->add_option("--lr", train_cfg.learning_rate, "learning rate");
    train->add_option("--momentum", train_cfg.sgd_momentum, "SGD momentum");
    train->add_option("--seed", train_cfg.seed, "training seed");
    train->add_option("--bn-momentum", train_cfg.bn_train_momentum,
                      "EMA momentum for stored BN stats");
    train->add_option("--init-seed", train_init_seed, "weight init seed");

    // corrupt
    auto* corrupt = app.add_subcommand(
        "corrupt", "write corrupted copies of dataset images");
    std::string cor_data, cor_kind = "gaussian_noise", cor_split = "test",
                cor_out;
    int cor_severity = 3;
    std::uint64_t cor_seed = 1234;
    corrupt->add_option("--data", cor_data, "dataset directory")->required();
    corrupt->add_option("--kind", cor_kind, "corruption kind");
    corrupt->add_option("--severity", cor_severity, "severity 1..5");
    corrupt->add_option("--seed", cor_seed, "corruption base seed");
    corrupt->add_option("--split", cor_split, "split to corrupt");
    corrupt->add_option("--out", cor_out,
                        "output directory (default: alongside originals)");

    // adapt
    auto* adapt =
        app.add_subcommand("adapt", "run test-time adaptation over a stream");
    ExperimentFlags adapt_flags;
    adapt_flags.attach(adapt);
    std::string adapt_split = "test", adapt_report, adapt_masks,
                adapt_save_state, adapt_resume_state;
    adapt->add_option("--split", adapt_split, "dataset split to stream");
    adapt->add_option("--report", adapt_report, "write EvalReport JSON here");
    adapt->add_option("--masks-dir", adapt_masks,
                      "write predicted masks (PPM) here");
    adapt->add_option("--save-state", adapt_save_state,
                      "write adaptation state snapshot");
    adapt->add_option("--resume-state", adapt_resume_state,
                      "resume from a state snapshot");

    // eval
    auto* eval = app.add_subcommand(
        "eval", "evaluate a mode over a stream (default source-only)");
    ExperimentFlags eval_flags;
    eval_flags.attach(eval);
    std::string eval_split = "test", eval_report, eval_masks;
    eval->add_option("--split", eval_split, "dataset split to stream");
    eval->add_option("--report", eval_report, "write EvalReport JSON here");
    eval->add_option("--masks-dir", eval_masks,
                     "write predicted masks (PPM) here");

    // ablate
    auto* ablate = app.add_subcommand(
        "ablate", "run the mode sweep (source-only/dm-only/im-only/full + "
                  "fixed momenta)");
    ExperimentFlags ablate_flags;
    ablate_flags.attach(ablate);
    std::string ablate_split = "test", ablate_out;
    std::vector<double> ablate_fixed = {0.1, 0.5, 0.9};
    ablate->add_option("--split", ablate_split, "dataset split to stream");
    ablate->add_option("--fixed", ablate_fixed,
                       "fixed momentum values to sweep");
    ablate->add_option("--out", ablate_out, "write ablation JSON here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads >= 0) drift::set_thread_budget(threads);
        if (gen->parsed()) {
            return cmd_gen_data(gen_out, gen_seed, gen_k, gen_h, gen_w,
                                gen_train, gen_val, gen_test);
        }
        if (train->parsed()) {
            return cmd_train_source(train_data, train_out, train_log,
                                    train_cfg, train_init_seed);
        }
        if (corrupt->parsed()) {
            return cmd_corrupt(cor_data, cor_kind, cor_severity, cor_seed,
                               cor_split, cor_out);
        }
        if (adapt->parsed()) {
            return run_and_report(adapt_flags, adapt_split, adapt_report,
                                  adapt_masks, adapt_save_state,
                                  adapt_resume_state);
        }
        if (eval->parsed()) {
            if (eval_flags.mode.empty()) eval_flags.mode = "source-only";
            return run_and_report(eval_flags, eval_split, eval_report,
                                  eval_masks, "", "");
        }
        if (ablate->parsed()) {
            return cmd_ablate(ablate_flags, ablate_split, ablate_fixed,
                              ablate_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
