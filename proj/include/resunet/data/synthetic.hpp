#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "resunet/data/dataset.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

/// A constant-width band. `straight` is the infinite line through (x, y)
/// with direction `angle`; `l_shape` is two perpendicular rays leaving the
/// corner (x, y) along `angle` and `angle + pi/2`. Coordinates are in pixels,
/// pixel (i, j) having its centre at (i + 0.5, j + 0.5).
struct Road {
    enum class Kind { straight, l_shape };
    Kind kind = Kind::straight;
    double x = 0.0;
    double y = 0.0;
    double angle = 0.0;
    double width = 8.0;
};

struct SceneSpec {
    std::size_t width = 448;
    std::size_t height = 448;
    std::size_t road_count = 4;
    double min_road_width = 8.0;
    double max_road_width = 16.0;
    double noise = 0.04;
    std::optional<std::vector<Road>> roads;  // overrides random placement
};

namespace detail {

// Half-open band test on a signed distance, so a band of integer width w
// covers exactly w pixel rows when axis-aligned.
inline bool in_band(double d, double w) { return d >= -w / 2 && d < w / 2; }

inline bool covers(const Road& r, double px, double py) {
    const double ux = std::cos(r.angle), uy = std::sin(r.angle);
    const double rx = px - r.x, ry = py - r.y;
    const double along = rx * ux + ry * uy;
    const double across = -rx * uy + ry * ux;
    if (r.kind == Road::Kind::straight) return in_band(across, r.width);
    return (along >= -r.width / 2 && in_band(across, r.width)) ||
           (across >= -r.width / 2 && in_band(along, r.width));
}

inline std::vector<Road> random_roads(const SceneSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> width(spec.min_road_width, spec.max_road_width);
    std::vector<Road> roads;
    for (std::size_t i = 0; i < spec.road_count; ++i) {
        Road r;
        r.kind = unit(rng) < 0.5 ? Road::Kind::straight : Road::Kind::l_shape;
        const double margin = r.kind == Road::Kind::straight ? 0.15 : 0.25;
        r.x = (margin + (1 - 2 * margin) * unit(rng)) * static_cast<double>(spec.width);
        r.y = (margin + (1 - 2 * margin) * unit(rng)) * static_cast<double>(spec.height);
        r.angle = 2 * std::numbers::pi * unit(rng);
        r.width = std::round(width(rng));
        roads.push_back(r);
    }
    return roads;
}

inline float quantize(double v) { return static_cast<float>(std::round(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.f; }

}  // namespace detail

/// Renders gray roads over a green/brown textured background with additive
/// Gaussian noise. The mask is exactly the union of the road bands. Pixel
/// values lie on the 1/255 grid, so PNG export is lossless.
inline LabeledImage generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::vector<Road> roads = spec.roads ? *spec.roads : detail::random_roads(spec, rng);

    const std::size_t H = spec.height, W = spec.width;
    LabeledImage scene{Tensor<float>({1, 3, H, W}), Tensor<float>({1, 1, H, W}), "synthetic-" + std::to_string(seed)};

    // Low-frequency blend field between two ground colours.
    struct Wave {
        double fx, fy, phase;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 3; ++k) {
        waves.push_back({(0.5 + 2.5 * unit(rng)) * 2 * std::numbers::pi / static_cast<double>(W),
                         (0.5 + 2.5 * unit(rng)) * 2 * std::numbers::pi / static_cast<double>(H),
                         2 * std::numbers::pi * unit(rng)});
    }
    const double green[3] = {0.22 + 0.06 * unit(rng), 0.36 + 0.08 * unit(rng), 0.16 + 0.06 * unit(rng)};
    const double brown[3] = {0.40 + 0.08 * unit(rng), 0.32 + 0.06 * unit(rng), 0.20 + 0.05 * unit(rng)};
    std::vector<double> road_gray;
    for (std::size_t i = 0; i < roads.size(); ++i) road_gray.push_back(0.58 + 0.17 * unit(rng));

    std::normal_distribution<double> noise(0.0, 1.0);
    std::normal_distribution<double> grain(0.0, 0.03);
    float* mask = scene.mask.ptr();
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            std::optional<std::size_t> road;
            for (std::size_t i = 0; i < roads.size(); ++i) {
                if (detail::covers(roads[i], px, py)) road = i;
            }
            double t = 0.0;
            for (const Wave& w : waves) t += std::sin(w.fx * px + w.fy * py + w.phase);
            t = 0.5 + t / 6.0;
            const double g = grain(rng);
            const std::size_t idx = y * W + x;
            mask[idx] = road ? 1.f : 0.f;
            for (std::size_t c = 0; c < 3; ++c) {
                const double base = road ? road_gray[*road] : (1 - t) * green[c] + t * brown[c] + g;
                scene.image.plane(0, c)[idx] = detail::quantize(base + spec.noise * noise(rng));
            }
        }
    }
    return scene;
}

/// `count` scenes with seeds seed, seed + 1, ...
inline Dataset synthetic_dataset(std::size_t count, std::uint64_t seed, const SceneSpec& spec = {},
                                 std::size_t tile = kTileSize) {
    std::vector<LabeledImage> scenes;
    for (std::size_t i = 0; i < count; ++i) scenes.push_back(generate_synthetic_scene(spec, seed + i));
    return Dataset(std::move(scenes), tile);
}

inline double road_fraction(const LabeledImage& scene) {
    double sum = 0.0;
    for (float v : scene.mask.data()) sum += v;
    return sum / static_cast<double>(scene.mask.size());
}

}  // namespace resunet
