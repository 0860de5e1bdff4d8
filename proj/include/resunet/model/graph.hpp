#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "resunet/error.hpp"

namespace resunet {

/// One pre-activation residual unit: y = h(x) + F(x).
struct ResidualUnitSpec {
    std::string name;                 // "level1" ... "level7"
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t first_stride = 1;     // 2 on levels 2, 3 and 4
    bool preactivate_first = true;    // false only on level 1
    int first_conv_index = 1;         // Conv1..Conv15 numbering of the unit's first conv

    /// Identity shortcut only when the unit preserves shape.
    bool has_projection() const noexcept {
        return in_channels != out_channels || first_stride != 1;
    }

    std::string conv_a() const { return name + ".conv" + std::to_string(first_conv_index); }
    std::string conv_b() const { return name + ".conv" + std::to_string(first_conv_index + 1); }
    std::string shortcut() const { return name + ".shortcut"; }
    /// Batch norm in front of conv_a (absent when preactivate_first is false).
    std::string bn_a() const { return name + ".bn" + std::to_string(first_conv_index); }
    std::string bn_b() const { return name + ".bn" + std::to_string(first_conv_index + 1); }
};

inline constexpr std::array<std::size_t, 7> kLevelWidths{64, 128, 256, 512, 256, 128, 64};
inline constexpr std::size_t kInputChannels = 3;
inline constexpr std::size_t kTileSize = 224;
inline constexpr std::size_t kSpatialMultiple = 8;

/// Channel width after scaling; never below 1.
inline std::size_t scaled_width(std::size_t base, double width_scale) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(base * width_scale)));
}

/// The 7-level encoder / bridge / decoder layout plus the 1x1 output head.
///
/// Levels 1-3 encode, level 4 is the bridge, levels 5-7 decode. Decoder
/// level 5+i consumes the upsampled output of the level below concatenated
/// with the output of encoder level 3-i.
struct ModelGraph {
    double width_scale = 1.0;
    std::array<ResidualUnitSpec, 7> levels;
    std::size_t head_in_channels = 0;

    static constexpr std::array<std::pair<int, int>, 3> kSkipPairs{{{0, 6}, {1, 5}, {2, 4}}};

    static std::string head_name() { return "output.conv15"; }

    static ModelGraph build(double width_scale = 1.0) {
        if (!(width_scale > 0.0)) throw InputError("width_scale must be positive");
        ModelGraph g;
        g.width_scale = width_scale;
        std::array<std::size_t, 7> w{};
        for (std::size_t i = 0; i < 7; ++i) w[i] = scaled_width(kLevelWidths[i], width_scale);

        auto level = [](int index, std::size_t in, std::size_t out, std::size_t stride, bool pre) {
            return ResidualUnitSpec{"level" + std::to_string(index), in, out, stride, pre,
                                    2 * index - 1};
        };
        g.levels[0] = level(1, kInputChannels, w[0], 1, false);
        g.levels[1] = level(2, w[0], w[1], 2, true);
        g.levels[2] = level(3, w[1], w[2], 2, true);
        g.levels[3] = level(4, w[2], w[3], 2, true);
        g.levels[4] = level(5, w[3] + w[2], w[4], 1, true);
        g.levels[5] = level(6, w[4] + w[1], w[5], 1, true);
        g.levels[6] = level(7, w[5] + w[0], w[6], 1, true);
        g.head_in_channels = w[6];
        return g;
    }
};

}  // namespace resunet
