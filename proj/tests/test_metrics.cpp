// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "drift/metrics.hpp"
#include "drift/rng.hpp"

using namespace drift;

namespace {

Mask mask_of(int h, int w, std::initializer_list<int> labels) {
    Mask m(h, w);
    std::size_t i = 0;
    for (const int l : labels) m.labels[i++] = static_cast<std::uint8_t>(l);
    return m;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in),
            std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("accumulate: perfect prediction is diagonal") {
    ConfusionMatrix cm(3);
    const Mask gt = mask_of(2, 2, {0, 1, 2, 1});
    accumulate(cm, gt, gt);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.at(2, 2) == 1);
    CHECK(cm.at(0, 1) == 0);
    CHECK(cm.total() == 4);
}

TEST_CASE("accumulate: systematic confusion lands in one cell") {
    ConfusionMatrix cm(2);
    const Mask gt(2, 2);                       // all zeros
    const Mask pred = mask_of(2, 2, {1, 1, 1, 1});
    accumulate(cm, gt, pred);
    CHECK(cm.at(0, 1) == 4);
}

TEST_CASE("accumulate over halves equals accumulate over the whole") {
    Rng rng(17);
    Mask gt(4, 8), pred(4, 8), gt_a(4, 4), pred_a(4, 4), gt_b(4, 4),
        pred_b(4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 8; ++x) {
            gt.at(y, x) = static_cast<std::uint8_t>(rng.below(3));
            pred.at(y, x) = static_cast<std::uint8_t>(rng.below(3));
            Mask& gt_half = x < 4 ? gt_a : gt_b;
            Mask& pred_half = x < 4 ? pred_a : pred_b;
            gt_half.at(y, x % 4) = gt.at(y, x);
            pred_half.at(y, x % 4) = pred.at(y, x);
        }
    }
    ConfusionMatrix whole(3), halves(3);
    accumulate(whole, gt, pred);
    accumulate(halves, gt_a, pred_a);
    accumulate(halves, gt_b, pred_b);
    for (int g = 0; g < 3; ++g) {
        for (int p = 0; p < 3; ++p) {
            CHECK(whole.at(g, p) == halves.at(g, p));
        }
    }
}

TEST_CASE("accumulate rejects out-of-range labels") {
    ConfusionMatrix cm(2);
    const Mask gt = mask_of(1, 2, {0, 3});
    const Mask pred = mask_of(1, 2, {0, 1});
    CHECK_THROWS_WITH_AS(accumulate(cm, gt, pred), doctest::Contains("range"),
                         std::invalid_argument);
}

TEST_CASE("iou: perfect, disjoint and arithmetic cases") {
    ConfusionMatrix perfect(3);
    const Mask gt = mask_of(2, 2, {0, 1, 2, 2});
    accumulate(perfect, gt, gt);
    const IouResult p = compute_iou(perfect);
    for (int c = 0; c < 3; ++c) CHECK(p.per_class[c] == doctest::Approx(1.0));
    CHECK(p.miou == doctest::Approx(1.0));

    ConfusionMatrix disjoint(2);
    accumulate(disjoint, mask_of(1, 2, {0, 0}), mask_of(1, 2, {1, 1}));
    const IouResult d = compute_iou(disjoint);
    CHECK(d.per_class[0] == doctest::Approx(0.0));

    ConfusionMatrix third(2);
    // class 0: TP 10, FN 10 (gt 0 pred 1), FP 10 (gt 1 pred 0)
    for (int i = 0; i < 10; ++i) {
        ++third.at(0, 0);
        ++third.at(0, 1);
        ++third.at(1, 0);
    }
    const IouResult t = compute_iou(third);
    CHECK(t.per_class[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("iou excludes empty classes from the mean") {
    ConfusionMatrix cm(4); // class 3 never appears
    accumulate(cm, mask_of(1, 3, {0, 1, 2}), mask_of(1, 3, {0, 1, 1}));
    const IouResult r = compute_iou(cm);
    CHECK(!r.defined[3]);
    CHECK(std::isnan(r.per_class[3]));
    const double expected = (1.0 + 0.5 + 0.0) / 3.0;
    CHECK(r.miou == doctest::Approx(expected));
    CHECK(r.miou >= 0.0);
    CHECK(r.miou <= 1.0);
}

TEST_CASE("mask images: single class is uniform, round-trip exact") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "drift_ppm_test";
    fs::create_directories(dir);

    Mask uniform(3, 3);
    for (auto& v : uniform.labels) v = 2;
    write_mask_image(uniform, dir / "uniform.ppm");
    const auto bytes = file_bytes(dir / "uniform.ppm");
    const auto palette = class_palette();
    // All payload pixels carry the class-2 color.
    for (std::size_t i = bytes.size() - 27; i < bytes.size(); i += 3) {
        CHECK(static_cast<std::uint8_t>(bytes[i]) == palette[2][0]);
        CHECK(static_cast<std::uint8_t>(bytes[i + 1]) == palette[2][1]);
        CHECK(static_cast<std::uint8_t>(bytes[i + 2]) == palette[2][2]);
    }

    Rng rng(23);
    Mask random_mask(8, 8);
    for (auto& v : random_mask.labels) {
        v = static_cast<std::uint8_t>(rng.below(6));
    }
    write_mask_image(random_mask, dir / "random.ppm");
    const Mask back = read_mask_image(dir / "random.ppm");
    CHECK(back == random_mask);
    fs::remove_all(dir);
}

TEST_CASE("mask image writing rejects labels beyond the palette") {
    Mask m(1, 1);
    m.labels[0] = 200;
    CHECK_THROWS_AS(write_mask_image(m, "/tmp/never_written.ppm"),
                    std::invalid_argument);
}

TEST_CASE("golden mask image is byte-identical") {
    namespace fs = std::filesystem;
    const fs::path golden = fs::path(DRIFT_FIXTURE_DIR) / "fixture_mask.ppm";
    Rng rng(2026);
    Mask m(16, 16);
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.below(6));
    const fs::path out =
        fs::temp_directory_path() / "drift_golden_mask_test.ppm";
    write_mask_image(m, out);
    CHECK(file_bytes(out) == file_bytes(golden));
    fs::remove(out);
}
