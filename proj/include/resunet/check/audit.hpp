#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "resunet/model/resunet.hpp"

namespace resunet::check {

inline constexpr std::size_t kMainPathConvParams = 7'780'096;
inline constexpr std::size_t kMinTotalParams = 7'400'000;
inline constexpr std::size_t kMaxTotalParams = 8'400'000;

/// Output size (C, H, W) after Conv1 ... Conv15 for a 224 x 224 input.
inline const std::array<Shape, 15>& expected_conv_output_sizes() {
    static const std::array<Shape, 15> rows{{
        {1, 64, 224, 224},
        {1, 64, 224, 224},
        {1, 128, 112, 112},
        {1, 128, 112, 112},
        {1, 256, 56, 56},
        {1, 256, 56, 56},
        {1, 512, 28, 28},
        {1, 512, 28, 28},
        {1, 256, 56, 56},
        {1, 256, 56, 56},
        {1, 128, 112, 112},
        {1, 128, 112, 112},
        {1, 64, 224, 224},
        {1, 64, 224, 224},
        {1, 1, 224, 224},
    }};
    return rows;
}

struct AuditLine {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Full-width forward of a 224 x 224 input, comparing every main-path
/// convolution output against the table.
inline AuditLine audit_shapes(std::uint64_t seed) {
    const ModelGraph graph = ModelGraph::build();
    const ParamStore params = init_params(graph, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    Tensor<float> x({1, kInputChannels, kTileSize, kTileSize});
    for (auto& v : x.data()) v = u(rng);
    std::vector<ConvTrace> trace;
    forward(graph, params, x, Mode::inference, nullptr, &trace);
    const auto& want = expected_conv_output_sizes();
    AuditLine line{"shapes", trace.size() == want.size(), "15 convolution outputs match"};
    if (!line.passed) {
        line.detail = "traced " + std::to_string(trace.size()) + " convolutions, expected 15";
        return line;
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (trace[i].shape != want[i]) {
            line.passed = false;
            line.detail = trace[i].layer + " produced " + trace[i].shape.str() + ", expected " + want[i].str();
            return line;
        }
    }
    return line;
}

inline std::vector<AuditLine> audit_counts() {
    const ParamStore params = init_params(ModelGraph::build(), 0);
    const std::size_t main_path = count_main_path_conv_params(params);
    const std::size_t total = count_params(params);
    return {
        {"main_path_conv_params", main_path == kMainPathConvParams,
         std::to_string(main_path) + " (expected " + std::to_string(kMainPathConvParams) + ")"},
        {"total_learnable_params", total >= kMinTotalParams && total <= kMaxTotalParams,
         std::to_string(total) + " (allowed " + std::to_string(kMinTotalParams) + ".." + std::to_string(kMaxTotalParams) +
             ")"},
    };
}

}  // namespace resunet::check
