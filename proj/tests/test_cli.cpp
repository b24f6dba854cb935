// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end smoke tests that drive the installed CLI binary the way a user
// would: gen-data -> train-source -> corrupt/eval/adapt/ablate.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path g_root = fs::temp_directory_path() / "drift_cli_test";

int run(const std::string& args) {
    const std::string cmd =
        std::string(DRIFT_CLI_PATH) + " " + args + " >> " +
        (g_root / "cli.log").string() + " 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
}

std::string strip_wall_time(std::string json) {
    static const std::regex re("\"wall_time_sec\": [0-9.eE+-]+");
    return std::regex_replace(json, re, "\"wall_time_sec\": 0");
}

} // namespace

TEST_CASE("cli: full pipeline gen-data / train / corrupt / eval / ablate") {
    fs::remove_all(g_root);
    fs::create_directories(g_root);
    const fs::path data = g_root / "data";
    const fs::path model = g_root / "model.dseg";

    REQUIRE(run("gen-data --out " + data.string() +
                " --seed 3 --height 32 --width 32 --train 12 --val 2 "
                "--test 6") == 0);
    CHECK(fs::exists(data / "manifest.json"));
    CHECK(fs::exists(data / "scene_00000.dtns"));
    CHECK(fs::exists(data / "scene_00000.pgm"));

    REQUIRE(run("train-source --data " + data.string() + " --out " +
                model.string() + " --log " + (g_root / "train.json").string() +
                " --epochs 2 --seed 5") == 0);
    CHECK(fs::exists(model));
    const std::string log = slurp(g_root / "train.json");
    CHECK(log.find("\"log_version\": 1") != std::string::npos);
    CHECK(log.find("test_miou") != std::string::npos);

    REQUIRE(run("corrupt --data " + data.string() +
                " --kind impulse_noise --severity 2 --split test --out " +
                (g_root / "corrupted").string()) == 0);
    CHECK(fs::exists(g_root / "corrupted" / "scene_00014.impulse_noise_s2.dtns"));

    const fs::path report_a = g_root / "eval_a.json";
    const fs::path report_b = g_root / "eval_b.json";
    REQUIRE(run("eval --data " + data.string() + " --model " + model.string() +
                " --kind gaussian_noise --severity 3 --batch-size 3 "
                "--report " + report_a.string()) == 0);
    REQUIRE(run("eval --data " + data.string() + " --model " + model.string() +
                " --kind gaussian_noise --severity 3 --batch-size 3 "
                "--report " + report_b.string()) == 0);
    const std::string a = slurp(report_a);
    CHECK(a.find("\"mode\": \"source-only\"") != std::string::npos);
    CHECK(strip_wall_time(a) == strip_wall_time(slurp(report_b)));

    const fs::path masks = g_root / "masks";
    REQUIRE(run("adapt --data " + data.string() + " --model " +
                model.string() +
                " --kind fog --severity 3 --batch-size 3 --report " +
                (g_root / "adapt.json").string() + " --masks-dir " +
                masks.string() + " --save-state " +
                (g_root / "state.dadp").string()) == 0);
    CHECK(fs::exists(masks / "pred_00000.ppm"));
    CHECK(fs::exists(g_root / "state.dadp"));
    CHECK(slurp(g_root / "adapt.json").find("\"mode\": \"full\"") !=
          std::string::npos);

    REQUIRE(run("adapt --data " + data.string() + " --model " +
                model.string() +
                " --kind fog --severity 3 --batch-size 3 --resume-state " +
                (g_root / "state.dadp").string() + " --report " +
                (g_root / "resumed.json").string()) == 0);
    CHECK(fs::exists(g_root / "resumed.json"));

    REQUIRE(run("ablate --data " + data.string() + " --model " +
                model.string() +
                " --kind impulse_noise --severity 3 --batch-size 3 --fixed "
                "0.5 --out " + (g_root / "ablation.json").string()) == 0);
    const std::string ablation = slurp(g_root / "ablation.json");
    CHECK(ablation.find("\"source-only\"") != std::string::npos);
    CHECK(ablation.find("\"fixed-0.5\"") != std::string::npos);
}

TEST_CASE("cli: config file settings apply and flags win") {
    // Relies on the dataset/model from the pipeline test above.
    const fs::path data = g_root / "data";
    const fs::path model = g_root / "model.dseg";
    REQUIRE(fs::exists(model));

    const fs::path cfg = g_root / "config.json";
    {
        std::ofstream out(cfg);
        out << R"({
  "dataset": {"dir": ")" << data.string() << R"("},
  "model": ")" << model.string() << R"(",
  "mode": "dm-only",
  "batch_size": 3,
  "corruption": {"kind": "snow", "severity": 2},
  "seeds": {"order": 11, "corruption": 12},
  "dm": {"alpha0": 0.8, "gamma_dm": 0.9}
})";
    }
    const fs::path report = g_root / "from_config.json";
    REQUIRE(run("eval --config " + cfg.string() + " --report " +
                report.string()) == 0);
    const std::string body = slurp(report);
    CHECK(body.find("\"mode\": \"dm-only\"") != std::string::npos);
    CHECK(body.find("\"kind\": \"snow\"") != std::string::npos);
    CHECK(body.find("\"alpha0\": 0.8") != std::string::npos);

    // A flag overrides the config value.
    const fs::path report2 = g_root / "flag_wins.json";
    REQUIRE(run("eval --config " + cfg.string() +
                " --kind gaussian_blur --report " + report2.string()) == 0);
    CHECK(slurp(report2).find("\"kind\": \"gaussian_blur\"") !=
          std::string::npos);
}

TEST_CASE("cli: bad inputs give nonzero exits with key names") {
    const fs::path cfg = g_root / "bad_config.json";
    {
        std::ofstream out(cfg);
        out << R"({"dataset": {"dir": "x"}, "model": "y", "turbo": true})";
    }
    CHECK(run("eval --config " + cfg.string()) != 0);
    const std::string log = slurp(g_root / "cli.log");
    CHECK(log.find("turbo") != std::string::npos);

    CHECK(run("eval --data /nonexistent --model /nonexistent.dseg") != 0);
    CHECK(run("adapt") != 0); // no dataset/model at all
}
