#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "resunet/data/png_io.hpp"
#include "resunet/error.hpp"
#include "resunet/model/graph.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

inline constexpr float kInputScale = 1.0f / 255.0f;
inline constexpr std::uint8_t kMaskThreshold = 128;

class DatasetError : public InputError {
public:
    enum class Kind { dimension_mismatch, undersized, manifest };

    DatasetError(Kind kind, const std::string& what) : InputError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct LabeledImage {
    Tensor<float> image;  // (1, 3, H, W) in [0, 1]
    Tensor<float> mask;   // (1, 1, H, W) in {0, 1}
    std::string source_id;

    std::size_t height() const { return image.shape().h; }
    std::size_t width() const { return image.shape().w; }
};

/// RGB bytes to a (1,3,H,W) tensor scaled by 1/255. Gray images are
/// replicated across the three channels.
inline Tensor<float> image_tensor(const Image8& img) {
    Tensor<float> t({1, 3, img.height, img.width});
    for (std::size_t c = 0; c < 3; ++c) {
        float* out = t.plane(0, c);
        const std::size_t src_c = img.channels == 3 ? c : 0;
        for (std::size_t i = 0; i < img.width * img.height; ++i) {
            out[i] = static_cast<float>(img.pixels[i * img.channels + src_c]) / 255.f;
        }
    }
    return t;
}

/// Mask bytes to {0,1} with the >= 128 threshold. Colour masks use their
/// first channel.
inline Tensor<float> mask_tensor(const Image8& img) {
    Tensor<float> t({1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.width * img.height; ++i) {
        t[i] = img.pixels[i * img.channels] >= kMaskThreshold ? 1.f : 0.f;
    }
    return t;
}

/// Inverse of `image_tensor` for values on the 1/255 grid.
inline Image8 image_bytes(const Tensor<float>& image) {
    const Shape s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("image_bytes expects (1,3,H,W), got " + s.str());
    Image8 img{s.w, s.h, 3, std::vector<std::uint8_t>(s.w * s.h * 3)};
    for (std::size_t c = 0; c < 3; ++c) {
        const float* in = image.plane(0, c);
        for (std::size_t i = 0; i < s.w * s.h; ++i) {
            const float v = std::round(in[i] * 255.f);
            img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(v, 0.f, 255.f));
        }
    }
    return img;
}

/// A {0,1} (or probability) plane to gray bytes, round(p * 255).
inline Image8 gray_bytes(const Tensor<float>& plane) {
    const Shape s = plane.shape();
    if (s.n != 1 || s.c != 1) throw ShapeError("gray_bytes expects (1,1,H,W), got " + s.str());
    Image8 img{s.w, s.h, 1, std::vector<std::uint8_t>(s.w * s.h)};
    for (std::size_t i = 0; i < s.w * s.h; ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::round(plane[i] * 255.f), 0.f, 255.f));
    }
    return img;
}

inline LabeledImage load_labeled_image(const std::filesystem::path& image_path,
                                       const std::filesystem::path& mask_path) {
    const Image8 img = read_png(image_path);
    const Image8 mask = read_png(mask_path);
    if (img.width != mask.width || img.height != mask.height) {
        throw DatasetError(DatasetError::Kind::dimension_mismatch,
                           image_path.string() + " is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height) + " but mask " + mask_path.string() + " is " +
                               std::to_string(mask.width) + "x" + std::to_string(mask.height));
    }
    return {image_tensor(img), mask_tensor(mask), image_path.filename().string()};
}

inline void export_labeled_image(const LabeledImage& item, const std::filesystem::path& image_path,
                                 const std::filesystem::path& mask_path) {
    write_png(image_path, image_bytes(item.image));
    write_png(mask_path, gray_bytes(item.mask));
}

struct ManifestEntry {
    std::filesystem::path image;
    std::filesystem::path mask;
};

/// One `image<TAB>mask` pair per line. Blank lines and lines starting with
/// '#' are ignored; relative paths resolve against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError(DatasetError::Kind::manifest, "cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw DatasetError(DatasetError::Kind::manifest, path.string() + ":" + std::to_string(lineno) +
                                                                 ": expected image<TAB>mask");
        }
        std::filesystem::path image = line.substr(0, tab);
        std::filesystem::path mask = line.substr(tab + 1);
        if (image.is_relative()) image = base / image;
        if (mask.is_relative()) mask = base / mask;
        entries.push_back({image, mask});
    }
    if (entries.empty()) throw DatasetError(DatasetError::Kind::manifest, path.string() + " lists no images");
    return entries;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw DatasetError(DatasetError::Kind::manifest, "cannot create manifest " + path.string());
    for (const auto& e : entries) out << e.image.string() << '\t' << e.mask.string() << '\n';
}

/// Immutable collection of labeled images, each at least `tile` on a side.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<LabeledImage> items, std::size_t tile = kTileSize) : tile_(tile) {
        for (auto& item : items) add(std::move(item));
    }

    static Dataset from_manifest(const std::filesystem::path& manifest, std::size_t tile = kTileSize) {
        Dataset ds({}, tile);
        for (const auto& e : read_manifest(manifest)) ds.add(load_labeled_image(e.image, e.mask));
        return ds;
    }

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    std::size_t tile() const { return tile_; }
    const LabeledImage& operator[](std::size_t i) const { return items_[i]; }
    const std::vector<LabeledImage>& items() const { return items_; }

private:
    void add(LabeledImage item) {
        if (item.image.shape().h != item.mask.shape().h || item.image.shape().w != item.mask.shape().w) {
            throw DatasetError(DatasetError::Kind::dimension_mismatch,
                               item.source_id + ": image " + item.image.shape().str() + " vs mask " +
                                   item.mask.shape().str());
        }
        if (item.height() < tile_ || item.width() < tile_) {
            throw DatasetError(DatasetError::Kind::undersized,
                               item.source_id + " is " + std::to_string(item.width()) + "x" +
                                   std::to_string(item.height()) + ", smaller than the " +
                                   std::to_string(tile_) + " training tile");
        }
        items_.push_back(std::move(item));
    }

    std::size_t tile_ = kTileSize;
    std::vector<LabeledImage> items_;
};

struct TileOrigin {
    std::size_t source = 0;  // index into the dataset
    std::string source_id;
    std::size_t x = 0;
    std::size_t y = 0;

    bool operator==(const TileOrigin&) const = default;
};

struct TileSample {
    Tensor<float> image;  // (1, 3, T, T)
    Tensor<float> mask;   // (1, 1, T, T)
    TileOrigin origin;
};

/// Copies the T x T window at (x, y) of every channel of `src` (N = 1).
inline Tensor<float> crop(const Tensor<float>& src, std::size_t x, std::size_t y, std::size_t tile) {
    const Shape s = src.shape();
    if (x + tile > s.w || y + tile > s.h) {
        throw ShapeError("crop " + std::to_string(tile) + " at (" + std::to_string(x) + "," + std::to_string(y) +
                         ") leaves " + s.str());
    }
    Tensor<float> out({1, s.c, tile, tile});
    for (std::size_t c = 0; c < s.c; ++c) {
        const float* in = src.plane(0, c);
        float* o = out.plane(0, c);
        for (std::size_t r = 0; r < tile; ++r) {
            std::copy_n(in + (y + r) * s.w + x, tile, o + r * tile);
        }
    }
    return out;
}

/// Deterministic stream of random training tiles: a source image uniformly,
/// then a top-left corner uniformly over the positions where the tile fits.
class TileSampler {
public:
    TileSampler(const Dataset& dataset, std::uint64_t seed) : dataset_(&dataset), rng_(seed) {
        if (dataset.empty()) throw InputError("cannot sample tiles from an empty dataset");
    }

    TileOrigin next_origin() {
        const std::size_t src = std::uniform_int_distribution<std::size_t>(0, dataset_->size() - 1)(rng_);
        const LabeledImage& item = (*dataset_)[src];
        const std::size_t t = dataset_->tile();
        const std::size_t x = std::uniform_int_distribution<std::size_t>(0, item.width() - t)(rng_);
        const std::size_t y = std::uniform_int_distribution<std::size_t>(0, item.height() - t)(rng_);
        return {src, item.source_id, x, y};
    }

    TileSample next() {
        TileOrigin o = next_origin();
        const LabeledImage& item = (*dataset_)[o.source];
        const std::size_t t = dataset_->tile();
        return {crop(item.image, o.x, o.y, t), crop(item.mask, o.x, o.y, t), std::move(o)};
    }

private:
    const Dataset* dataset_;
    std::mt19937_64 rng_;
};

/// Exactly `count` tiles from a fresh sampler seeded with `seed`.
inline std::vector<TileSample> sample_tiles(const Dataset& dataset, std::size_t count, std::uint64_t seed) {
    TileSampler sampler(dataset, seed);
    std::vector<TileSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.next());
    return out;
}

/// Stacks tiles into (B,3,T,T) images and (B,1,T,T) masks.
inline std::pair<Tensor<float>, Tensor<float>> stack_batch(const std::vector<TileSample>& tiles) {
    if (tiles.empty()) throw ShapeError("stack_batch needs at least one tile");
    const Shape is = tiles.front().image.shape();
    const Shape ms = tiles.front().mask.shape();
    Tensor<float> images({tiles.size(), is.c, is.h, is.w});
    Tensor<float> masks({tiles.size(), ms.c, ms.h, ms.w});
    for (std::size_t b = 0; b < tiles.size(); ++b) {
        if (tiles[b].image.shape() != is || tiles[b].mask.shape() != ms) {
            throw ShapeError("stack_batch tile " + std::to_string(b) + " has a different shape");
        }
        std::copy_n(tiles[b].image.ptr(), is.numel(), images.ptr() + b * is.numel());
        std::copy_n(tiles[b].mask.ptr(), ms.numel(), masks.ptr() + b * ms.numel());
    }
    return {std::move(images), std::move(masks)};
}

}  // namespace resunet
