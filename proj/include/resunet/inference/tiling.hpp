#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "resunet/error.hpp"
#include "resunet/model/resunet.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

inline constexpr std::size_t kDefaultOverlap = 14;
inline constexpr float kDefaultThreshold = 0.5f;

struct TileOrigin2D {
    std::size_t x = 0;
    std::size_t y = 0;
    bool operator==(const TileOrigin2D&) const = default;
};

/// Tiles in row-major order: y outer, x inner.
struct TileGrid {
    std::size_t tile = kTileSize;
    std::size_t overlap = kDefaultOverlap;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::size_t> xs;
    std::vector<std::size_t> ys;
    std::vector<TileOrigin2D> origins;

    std::size_t stride() const { return tile - overlap; }
};

/// 0, s, 2s, ... with s = tile - overlap; the last origin is clamped to
/// dim - tile so the final tile ends exactly at the border.
inline std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t tile, std::size_t overlap) {
    std::vector<std::size_t> out{0};
    const std::size_t s = tile - overlap;
    while (out.back() + tile < dim) out.push_back(std::min(out.back() + s, dim - tile));
    return out;
}

inline TileGrid plan_tiles(std::size_t height, std::size_t width, std::size_t tile = kTileSize,
                           std::size_t overlap = kDefaultOverlap) {
    if (tile == 0 || overlap >= tile) {
        throw InputError("overlap " + std::to_string(overlap) + " must be smaller than the tile size " +
                         std::to_string(tile));
    }
    if (height < tile || width < tile) {
        throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than the " +
                         std::to_string(tile) + " tile");
    }
    TileGrid g{tile, overlap, height, width, axis_origins(width, tile, overlap), axis_origins(height, tile, overlap), {}};
    for (std::size_t y : g.ys)
        for (std::size_t x : g.xs) g.origins.push_back({x, y});
    return g;
}

struct SegmentationMap {
    Tensor<float> probs;                 // (1, 1, H, W)
    std::optional<Tensor<float>> binary;  // probs >= threshold
    float threshold = kDefaultThreshold;
};

inline Tensor<float> binarize(const Tensor<float>& probs, float threshold) {
    Tensor<float> out(probs.shape());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1.f : 0.f;
    return out;
}

/// Mean of all tile values covering each pixel. Sums are accumulated in
/// double in grid order, then divided by the coverage count.
inline SegmentationMap stitch(const std::vector<Tensor<float>>& tiles, const TileGrid& grid) {
    if (tiles.size() != grid.origins.size()) {
        throw ShapeError("stitch got " + std::to_string(tiles.size()) + " tiles for a grid of " +
                         std::to_string(grid.origins.size()));
    }
    const std::size_t W = grid.width, T = grid.tile;
    std::vector<double> sum(grid.height * W, 0.0);
    std::vector<unsigned> count(grid.height * W, 0);
    for (std::size_t k = 0; k < tiles.size(); ++k) {
        if (tiles[k].shape() != Shape{1, 1, T, T}) {
            throw ShapeError("stitch tile " + std::to_string(k) + " is " + tiles[k].shape().str());
        }
        const auto [ox, oy] = grid.origins[k];
        for (std::size_t r = 0; r < T; ++r) {
            const float* src = tiles[k].ptr() + r * T;
            double* dst = sum.data() + (oy + r) * W + ox;
            unsigned* cnt = count.data() + (oy + r) * W + ox;
            for (std::size_t c = 0; c < T; ++c) {
                dst[c] += static_cast<double>(src[c]);
                ++cnt[c];
            }
        }
    }
    SegmentationMap map{Tensor<float>({1, 1, grid.height, W}), std::nullopt, kDefaultThreshold};
    for (std::size_t i = 0; i < sum.size(); ++i) {
        map.probs[i] = static_cast<float>(sum[i] / static_cast<double>(count[i]));
    }
    return map;
}

/// Copies the T x T window at (x, y) of a (1, C, H, W) tensor.
inline Tensor<float> extract_tile(const Tensor<float>& image, std::size_t x, std::size_t y, std::size_t tile) {
    const Shape s = image.shape();
    Tensor<float> out({1, s.c, tile, tile});
    for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t r = 0; r < tile; ++r) {
            std::copy_n(image.plane(0, c) + (y + r) * s.w + x, tile, out.plane(0, c) + r * tile);
        }
    return out;
}

struct PredictOptions {
    std::size_t overlap = kDefaultOverlap;
    std::optional<float> threshold;
    std::size_t threads = 1;
};

/// Plan -> per-tile inference forward -> stitch -> optional binarize. Tile
/// forwards may run on `threads` workers; each tile's result depends only on
/// its own input, and stitching is serial in grid order, so the output does
/// not depend on the thread count.
inline SegmentationMap predict_image(const ModelGraph& graph, const ParamStore& params, const Tensor<float>& image,
                                     const PredictOptions& options = {}) {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != kInputChannels) {
        throw ShapeError("predict_image expects (1,3,H,W), got " + s.str());
    }
    const TileGrid grid = plan_tiles(s.h, s.w, kTileSize, options.overlap);
    std::vector<Tensor<float>> outputs(grid.origins.size());
    auto run = [&](std::size_t k) {
        const auto [x, y] = grid.origins[k];
        outputs[k] = forward(graph, params, extract_tile(image, x, y, grid.tile), Mode::inference);
    };

    const std::size_t workers = std::min(std::max<std::size_t>(options.threads, 1), outputs.size());
    if (workers <= 1) {
        for (std::size_t k = 0; k < outputs.size(); ++k) run(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < outputs.size(); k = next++) {
                    try {
                        run(k);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    SegmentationMap map = stitch(outputs, grid);
    if (options.threshold) {
        map.threshold = *options.threshold;
        map.binary = binarize(map.probs, map.threshold);
    }
    return map;
}

}  // namespace resunet
