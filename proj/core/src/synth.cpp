// Copyright 2026 The drift-adapt Authors
// SPDX-License-Identifier: Apache-2.0
#include "drift/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "drift/rng.hpp"

namespace drift {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
constexpr float kGrainStd = 0.02f;
constexpr float kTextureAmp = 0.10f;

struct ClassStyle {
    float r, g, b;  // base color
    float fx, fy;   // sinusoid cycles across the image
};

// Base colors loosely follow the satellite-class palette; frequencies give
// each class a distinct texture orientation.
constexpr ClassStyle kStyles[6] = {
    {0.85f, 0.75f, 0.25f, 3.0f, 0.0f}, // agriculture: horizontal furrows
    {0.75f, 0.45f, 0.70f, 0.0f, 3.0f}, // rangeland
    {0.10f, 0.50f, 0.15f, 2.0f, 2.0f}, // forest
    {0.10f, 0.25f, 0.80f, 4.0f, 1.0f}, // water: shallow waves
    {0.60f, 0.50f, 0.40f, 1.0f, 4.0f}, // barren
    {0.55f, 0.60f, 0.65f, 3.0f, 3.0f}, // urban: grid-ish
};

ClassStyle style_for(int cls, int num_classes) {
    if (cls < 6) return kStyles[cls];
    // Extra classes (K > 6): golden-angle hue wheel, diagonal textures.
    const double hue = std::fmod(0.618033988749895 * (cls - 5), 1.0) * 6.0;
    const int i = static_cast<int>(hue);
    const float f = static_cast<float>(hue - i);
    const float q = 1.0f - f;
    float r = 0, g = 0, b = 0;
    switch (i % 6) {
    case 0: r = 1; g = f; b = 0; break;
    case 1: r = q; g = 1; b = 0; break;
    case 2: r = 0; g = 1; b = f; break;
    case 3: r = 0; g = q; b = 1; break;
    case 4: r = f; g = 0; b = 1; break;
    default: r = 1; g = 0; b = q; break;
    }
    const float cycles = 2.0f + static_cast<float>(cls % 4);
    (void)num_classes;
    return {0.2f + 0.6f * r, 0.2f + 0.6f * g, 0.2f + 0.6f * b, cycles, cycles};
}

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

} // namespace

Scene generate_scene(std::uint64_t seed, int num_classes, int h, int w,
                     int k_cells) {
    if (num_classes < 1) {
        throw std::invalid_argument(
            fmt::format("generate_scene: num_classes {} < 1", num_classes));
    }
    if (h < 32 || w < 32 || h % 4 != 0 || w % 4 != 0) {
        throw std::invalid_argument(fmt::format(
            "generate_scene: dims {}x{} must be >= 32 and divisible by 4", h,
            w));
    }
    const int cells = std::max(k_cells, num_classes);
    Rng rng(seed);

    // Distinct random sites; the first min(K, cells) take classes 0..K-1 so
    // every class owns at least its own site pixel.
    std::vector<std::pair<int, int>> sites;
    sites.reserve(cells);
    while (static_cast<int>(sites.size()) < cells) {
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
        const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
        if (std::find(sites.begin(), sites.end(), std::make_pair(y, x)) ==
            sites.end()) {
            sites.emplace_back(y, x);
        }
    }
    std::vector<int> cell_class(cells);
    for (int i = 0; i < cells; ++i) {
        cell_class[i] = i < num_classes
                            ? i
                            : static_cast<int>(rng.below(
                                  static_cast<std::uint64_t>(num_classes)));
    }

    Scene scene;
    scene.mask = Mask(h, w);
    scene.image = Tensor(Shape4{1, 3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int best = 0;
            long best_d = std::numeric_limits<long>::max();
            for (int i = 0; i < cells; ++i) {
                const long dy = y - sites[i].first;
                const long dx = x - sites[i].second;
                const long d = dy * dy + dx * dx;
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            scene.mask.at(y, x) = static_cast<std::uint8_t>(cell_class[best]);
        }
    }

    float* rp = scene.image.plane(0, 0);
    float* gp = scene.image.plane(0, 1);
    float* bp = scene.image.plane(0, 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const ClassStyle st = style_for(scene.mask.labels[i], num_classes);
            const float tex = kTextureAmp *
                              static_cast<float>(
                                  std::sin(kTwoPi * (st.fx * x / w +
                                                     st.fy * y / h)));
            rp[i] = st.r + tex;
            gp[i] = st.g + tex;
            bp[i] = st.b + tex;
        }
    }
    // Gaussian grain, then clamp.
    for (std::size_t i = 0; i + 1 < scene.image.data.size(); i += 2) {
        const auto [z0, z1] = rng.gaussian_pair();
        scene.image.data[i] =
            clamp01(scene.image.data[i] + kGrainStd * static_cast<float>(z0));
        scene.image.data[i + 1] = clamp01(scene.image.data[i + 1] +
                                          kGrainStd * static_cast<float>(z1));
    }
    if (scene.image.data.size() % 2 == 1) {
        const auto [z0, z1] = rng.gaussian_pair();
        (void)z1;
        scene.image.data.back() = clamp01(scene.image.data.back() +
                                          kGrainStd * static_cast<float>(z0));
    }
    return scene;
}

std::vector<Scene> Dataset::split_scenes(
    const std::vector<std::size_t>& idx) const {
    std::vector<Scene> out;
    out.reserve(idx.size());
    for (const std::size_t i : idx) out.push_back(scenes[i]);
    return out;
}

Dataset generate_dataset(std::uint64_t seed, int num_classes, int h, int w,
                         int n_train, int n_val, int n_test) {
    if (n_train < 1 || n_val < 0 || n_test < 0) {
        throw std::invalid_argument(
            fmt::format("generate_dataset: bad split sizes {}/{}/{}", n_train,
                        n_val, n_test));
    }
    Dataset ds;
    ds.num_classes = num_classes;
    ds.h = h;
    ds.w = w;
    const int total = n_train + n_val + n_test;
    Rng seeder(seed);
    ds.scenes.reserve(total);
    for (int i = 0; i < total; ++i) {
        ds.scenes.push_back(generate_scene(seeder.next_u64(), num_classes, h, w));
    }
    for (int i = 0; i < n_train; ++i) ds.train.push_back(i);
    for (int i = 0; i < n_val; ++i) ds.val.push_back(n_train + i);
    for (int i = 0; i < n_test; ++i) ds.test.push_back(n_train + n_val + i);
    return ds;
}

void save_mask_pgm(const Mask& mask, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error(
            fmt::format("cannot open '{}' for writing", path.string()));
    }
    out << "P5\n" << mask.w << ' ' << mask.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.labels.data()),
              static_cast<std::streamsize>(mask.labels.size()));
    out.close();
    if (!out) {
        throw std::runtime_error(
            fmt::format("write to '{}' failed", path.string()));
    }
}

Mask load_mask_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(
            fmt::format("cannot open '{}' for reading", path.string()));
    }
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255 || w < 1 || h < 1) {
        throw std::runtime_error(fmt::format(
            "'{}' is not an 8-bit P5 mask (magic '{}', {}x{}, max {})",
            path.string(), magic, w, h, maxval));
    }
    in.get();
    Mask mask(h, w);
    in.read(reinterpret_cast<char*>(mask.labels.data()),
            static_cast<std::streamsize>(mask.labels.size()));
    if (!in) {
        throw std::runtime_error(fmt::format(
            "'{}' truncated: expected {} label bytes", path.string(),
            mask.labels.size()));
    }
    return mask;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["manifest_version"] = 1;
    manifest["num_classes"] = dataset.num_classes;
    manifest["height"] = dataset.h;
    manifest["width"] = dataset.w;
    auto split_of = [&](std::size_t i) -> const char* {
        if (std::find(dataset.train.begin(), dataset.train.end(), i) !=
            dataset.train.end()) {
            return "train";
        }
        if (std::find(dataset.val.begin(), dataset.val.end(), i) !=
            dataset.val.end()) {
            return "val";
        }
        return "test";
    };
    nlohmann::ordered_json scenes = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < dataset.scenes.size(); ++i) {
        const std::string image_name = fmt::format("scene_{:05}.dtns", i);
        const std::string mask_name = fmt::format("scene_{:05}.pgm", i);
        save_tensor(dataset.scenes[i].image, dir / image_name);
        save_mask_pgm(dataset.scenes[i].mask, dir / mask_name);
        scenes.push_back({{"id", i},
                          {"image", image_name},
                          {"mask", mask_name},
                          {"split", split_of(i)}});
    }
    manifest["scenes"] = std::move(scenes);
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error(fmt::format(
            "write to '{}' failed", (dir / "manifest.json").string()));
    }
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path =
        std::filesystem::is_directory(dir) ? dir / "manifest.json" : dir;
    std::ifstream in(manifest_path);
    if (!in) {
        throw std::runtime_error(fmt::format(
            "cannot open dataset manifest '{}'", manifest_path.string()));
    }
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(fmt::format("'{}' is not valid JSON: {}",
                                             manifest_path.string(), e.what()));
    }
    const auto root = manifest_path.parent_path();
    Dataset ds;
    ds.num_classes = manifest.at("num_classes").get<int>();
    ds.h = manifest.at("height").get<int>();
    ds.w = manifest.at("width").get<int>();
    for (const auto& entry : manifest.at("scenes")) {
        Scene scene;
        scene.image = load_tensor(root / entry.at("image").get<std::string>());
        scene.mask = load_mask_pgm(root / entry.at("mask").get<std::string>());
        if (scene.image.shape.h != scene.mask.h ||
            scene.image.shape.w != scene.mask.w) {
            throw std::runtime_error(fmt::format(
                "dataset scene {}: image {} does not match mask {}x{}",
                ds.scenes.size(), scene.image.shape.str(), scene.mask.h,
                scene.mask.w));
        }
        for (const auto label : scene.mask.labels) {
            if (label >= ds.num_classes) {
                throw std::runtime_error(fmt::format(
                    "dataset scene {}: label {} >= num_classes {}",
                    ds.scenes.size(), label, ds.num_classes));
            }
        }
        const std::string split = entry.at("split").get<std::string>();
        const std::size_t idx = ds.scenes.size();
        if (split == "train") {
            ds.train.push_back(idx);
        } else if (split == "val") {
            ds.val.push_back(idx);
        } else if (split == "test") {
            ds.test.push_back(idx);
        } else {
            throw std::runtime_error(
                fmt::format("dataset scene {}: unknown split '{}'", idx, split));
        }
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

std::vector<StreamBatch> make_stream(const std::vector<Scene>& scenes,
                                     int batch_size,
                                     const Corruption& corruption,
                                     std::uint64_t order_seed) {
    if (scenes.empty()) {
        throw std::invalid_argument("make_stream: empty scene list");
    }
    if (batch_size < 1) {
        throw std::invalid_argument(
            fmt::format("make_stream: batch_size {} < 1", batch_size));
    }
    std::vector<std::size_t> order(scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(order_seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(order[i - 1], order[j]);
    }

    std::vector<StreamBatch> stream;
    const auto& shape = scenes[0].image.shape;
    const std::size_t chw =
        static_cast<std::size_t>(shape.c) * shape.h * shape.w;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(
            order.size(), start + static_cast<std::size_t>(batch_size));
        StreamBatch batch;
        batch.batch_index = static_cast<int>(stream.size());
        batch.images = Tensor(
            Shape4{static_cast<int>(end - start), shape.c, shape.h, shape.w});
        for (std::size_t b = start; b < end; ++b) {
            const Scene& scene = scenes[order[b]];
            Corruption per_image = corruption;
            per_image.seed = derive_seed(corruption.seed, b); // stream position
            const Tensor corrupted = apply_corruption(scene.image, per_image);
            std::copy_n(corrupted.data.data(), chw,
                        batch.images.data.data() + (b - start) * chw);
            batch.masks.push_back(scene.mask);
        }
        stream.push_back(std::move(batch));
    }
    return stream;
}

} // namespace drift
