// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Pass criterion names as arguments to run a subset.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "resunet/check/suites.hpp"
#include "resunet/data/synthetic.hpp"
#include "resunet/eval/metrics.hpp"
#include "resunet/inference/tiling.hpp"
#include "resunet/model/checkpoint.hpp"
#include "resunet/model/resunet.hpp"
#include "resunet/train/trainer.hpp"

using namespace resunet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = true;
    std::string detail;

    void require(bool ok, const std::string& why) {
        if (!ok && passed) {
            passed = false;
            detail = why;
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Tensor<float> mask_from(const std::vector<std::uint8_t>& m, std::size_t h, std::size_t w) {
    Tensor<float> t({1, 1, h, w});
    for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i] ? 1.f : 0.f;
    return t;
}

Outcome gradient_correctness() {
    const auto start = Clock::now();
    check::SuiteOptions options;
    options.seed = 2024;
    options.seeds = 20;
    options.model_params = 30;
    const auto results = check::run_gradient_suite(options);
    Outcome o;
    double worst_primitive = 0.0, model_error = 0.0;
    std::size_t model_checked = 0;
    for (const auto& r : results) {
        if (r.name == "full_model") {
            model_error = r.max_rel_error;
            model_checked = r.checked;
            o.require(r.max_rel_error < 1e-2, "full model rel error " + fmt(r.max_rel_error));
            o.require(r.checked >= 30, "full model checked only " + std::to_string(r.checked) + " parameters");
        } else {
            worst_primitive = std::max(worst_primitive, r.max_rel_error);
            o.require(r.max_rel_error < 1e-3, r.name + " rel error " + fmt(r.max_rel_error));
            o.require(r.checked > 0, r.name + " checked nothing");
        }
    }
    const double elapsed = seconds_since(start);
    o.require(elapsed < 120.0, "took " + fmt(elapsed) + " s");
    if (o.passed) {
        o.detail = "primitives max rel error " + fmt(worst_primitive) + " over 20 seeds, full model " +
                   fmt(model_error) + " on " + std::to_string(model_checked) + " parameters, " + fmt(elapsed, 3) + " s";
    }
    return o;
}

Outcome architecture_audit() {
    const auto start = Clock::now();
    const std::vector<Shape> table{
        {1, 64, 224, 224},  {1, 64, 224, 224},  {1, 128, 112, 112}, {1, 128, 112, 112}, {1, 256, 56, 56},
        {1, 256, 56, 56},   {1, 512, 28, 28},   {1, 512, 28, 28},   {1, 256, 56, 56},   {1, 256, 56, 56},
        {1, 128, 112, 112}, {1, 128, 112, 112}, {1, 64, 224, 224},  {1, 64, 224, 224},  {1, 1, 224, 224},
    };
    const ModelGraph graph = ModelGraph::build();
    const ParamStore params = init_params(graph, 5);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    Tensor<float> x({1, 3, 224, 224});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = u(rng);
    std::vector<ConvTrace> trace;
    forward(graph, params, x, Mode::inference, nullptr, &trace);

    Outcome o;
    o.require(trace.size() == 15, "traced " + std::to_string(trace.size()) + " convolutions");
    for (std::size_t i = 0; i < std::min<std::size_t>(trace.size(), 15); ++i) {
        o.require(trace[i].shape == table[i],
                  "conv" + std::to_string(i + 1) + " produced " + trace[i].shape.str() + ", table says " + table[i].str());
    }
    const std::size_t main_path = count_main_path_conv_params(params);
    const std::size_t total = count_params(params);
    o.require(main_path == 7'780'096, "main-path conv params " + std::to_string(main_path));
    o.require(total >= 7'400'000 && total <= 8'400'000, "total learnable params " + std::to_string(total));
    const double elapsed = seconds_since(start);
    o.require(elapsed < 60.0, "took " + fmt(elapsed) + " s");
    if (o.passed) {
        o.detail = "15 shapes match, main-path conv params " + std::to_string(main_path) + ", total " +
                   std::to_string(total) + ", " + fmt(elapsed, 3) + " s";
    }
    return o;
}

Outcome residual_identity() {
    const std::size_t channels = 16;
    const ResidualUnitSpec spec{"unit", channels, channels, 1, true, 1};
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(-2.f, 2.f);
    auto random = [&](Shape s, float lo) {
        Tensor<float> t(s);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::max(lo, u(rng));
        return t;
    };
    ParamStore store;
    const Shape vec{1, channels, 1, 1};
    for (const std::string bn : {spec.bn_a(), spec.bn_b()}) {
        store.add(bn + ".gamma", ParamKind::learnable, random(vec, -2.f));
        store.add(bn + ".beta", ParamKind::learnable, random(vec, -2.f));
        store.add(bn + ".running_mean", ParamKind::running_stat, random(vec, -2.f));
        store.add(bn + ".running_var", ParamKind::running_stat, random(vec, 0.1f));
    }
    store.add(spec.conv_a(), ParamKind::learnable, Tensor<float>({channels, channels, 3, 3}, 0.f));
    store.add(spec.conv_b(), ParamKind::learnable, Tensor<float>({channels, channels, 3, 3}, 0.f));
    const Tensor<float> x = random({2, channels, 17, 23}, -2.f);
    const Tensor<float> y = residual_unit_forward(x, spec, store, Mode::inference);
    Outcome o;
    o.require(bit_identical(x, y), "output differs from input");
    if (o.passed) o.detail = "16-channel unit on (2,16,17,23) returns its input bit-exactly";
    return o;
}

Outcome metric_oracle() {
    std::mt19937_64 rng(31);
    Outcome o;
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = oracle::random_mask(32 * 32, 0.1, rng);
        const auto g = oracle::random_mask(32 * 32, 0.1, rng);
        const Tensor<float> pt = mask_from(p, 32, 32), gt = mask_from(g, 32, 32);
        for (int rho : {0, 1, 3}) {
            const PR got = relaxed_pr(pt, gt, rho);
            const auto want = oracle::brute_relaxed_pr(p, g, 32, 32, rho);
            o.require(got.precision == want.precision && got.recall == want.recall,
                      "pair " + std::to_string(trial) + " rho " + std::to_string(rho) + " differs from the oracle");
        }
        std::size_t tp = 0, np = 0, ng = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            tp += p[i] && g[i];
            np += p[i];
            ng += g[i];
        }
        const PR strict = relaxed_pr(pt, gt, 0);
        o.require(strict.precision == double(tp) / double(np) && strict.recall == double(tp) / double(ng),
                  "pair " + std::to_string(trial) + " rho 0 differs from strict precision/recall");
    }
    PRPoint a, b;
    a.relaxed_precision = 0.9;
    a.relaxed_recall = 0.8;
    b.relaxed_precision = 0.8;
    b.relaxed_recall = 0.9;
    const double be = breakeven({a, b});
    o.require(std::abs(be - 0.85) <= 1e-9, "two-point breakeven " + fmt(be, 12));
    if (o.passed) o.detail = "50 pairs x rho {0,1,3} exact, rho 0 strict, breakeven " + fmt(be, 12);
    return o;
}

Outcome stitching_exactness() {
    Outcome o;
    const TileGrid grid = plan_tiles(1500, 1500, 224, 14);
    o.require(grid.origins.size() == 64, "1500x1500 plan has " + std::to_string(grid.origins.size()) + " tiles");

    std::mt19937_64 rng(77);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    std::vector<Tensor<float>> tiles;
    std::vector<std::vector<float>> raw;
    std::vector<std::pair<std::size_t, std::size_t>> origins;
    for (const auto& origin : grid.origins) {
        Tensor<float> t({1, 1, 224, 224});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
        raw.emplace_back(t.ptr(), t.ptr() + t.size());
        tiles.push_back(std::move(t));
        origins.emplace_back(origin.x, origin.y);
    }
    const SegmentationMap map = stitch(tiles, grid);
    const auto want = oracle::brute_stitch(raw, origins, 224, 1500, 1500);
    bool same = map.probs.size() == want.size();
    for (std::size_t i = 0; same && i < want.size(); ++i)
        same = std::memcmp(&map.probs[i], &want[i], sizeof(float)) == 0;
    o.require(same, "stitched map differs from the accumulate-and-divide oracle");

    const ModelGraph graph = ModelGraph::build();
    const ParamStore params = init_params(graph, 13);
    const LabeledImage scene = generate_synthetic_scene(SceneSpec{224, 224}, 13);
    const SegmentationMap single = predict_image(graph, params, scene.image);
    o.require(bit_identical(single.probs, forward(graph, params, scene.image, Mode::inference)),
              "single-tile prediction differs from direct forward");
    if (o.passed) o.detail = "oracle bit-exact on 64 tiles of 1500x1500, single tile equals forward";
    return o;
}

Outcome desk_end_to_end() {
    const auto start = Clock::now();
    TrainConfig config;
    config.width_scale = 0.125;
    config.epochs = 3;
    config.seed = 1;
    const Dataset dataset = synthetic_dataset(20, 1);
    const TrainResult result = train(dataset, config);
    const auto means = epoch_mean_losses(result.log);

    const ModelGraph graph = ModelGraph::build(0.125);
    std::vector<LabeledImage> held_out;
    std::vector<Tensor<float>> probs;
    for (std::uint64_t seed = 1001; seed <= 1005; ++seed) held_out.push_back(generate_synthetic_scene({}, seed));
    for (const auto& scene : held_out) probs.push_back(predict_image(graph, result.params, scene.image).probs);
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < held_out.size(); ++i) pairs.push_back({&probs[i], &held_out[i].mask});
    const PRCurve curve = pr_curve(pairs, 3);
    const double elapsed = seconds_since(start);

    Outcome o;
    o.require(means.size() == 3, "expected 3 epochs of losses");
    const double ratio = means.size() == 3 ? means[2] / means[0] : 1.0;
    o.require(ratio < 0.5, "final/first epoch mean MSE " + fmt(ratio));
    o.require(curve.breakeven >= 0.90, "held-out breakeven " + fmt(curve.breakeven));
    o.require(elapsed < 900.0, "took " + fmt(elapsed) + " s");
    o.detail = (o.passed ? "" : o.detail + "; ") + "epoch mean MSE " + fmt(means.front()) + " -> " +
               fmt(means.back()) + " (ratio " + fmt(ratio, 3) + "), breakeven " + fmt(curve.breakeven) +
               " at rho 3, " + fmt(elapsed, 4) + " s";
    return o;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(RESUNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / ("resunet_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const LabeledImage scene = generate_synthetic_scene(SceneSpec{500, 300}, 42);
    write_png(root / "scene.png", image_bytes(scene.image));

    Outcome o;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = root / run;
        o.require(run_cli("train --synthetic 2 --width-scale 0.125 --epochs 2 --samples-per-epoch 4 --batch-size 2 "
                          "--seed 7 --output-dir " + (dir / "train").string()) == 0,
                  std::string("train run ") + run + " failed");
        o.require(run_cli("predict --threads 1 --checkpoint " + (dir / "train/model.ckpt").string() + " --output-dir " +
                          (dir / "pred").string() + " " + (root / "scene.png").string()) == 0,
                  std::string("predict run ") + run + " failed");
    }
    std::size_t compared = 0;
    for (const char* file : {"train/model.ckpt", "train/checkpoints/epoch_001.ckpt", "train/checkpoints/epoch_002.ckpt",
                              "pred/scene_prob.png", "pred/scene_mask.png"}) {
        const std::string a = slurp(root / "a" / file), b = slurp(root / "b" / file);
        o.require(!a.empty(), std::string(file) + " missing");
        o.require(a == b, std::string(file) + " differs between runs");
        ++compared;
    }
    fs::remove_all(root);
    if (o.passed) o.detail = std::to_string(compared) + " checkpoint and PNG files bit-identical across two runs";
    return o;
}

Outcome lr_schedule() {
    const TrainConfig config;
    Outcome o;
    const double e0 = lr_at_epoch(config, 0), e20 = lr_at_epoch(config, 20), e45 = lr_at_epoch(config, 45);
    o.require(e0 == 0.001, "epoch 0 lr " + fmt(e0, 17));
    o.require(e20 == 0.0001, "epoch 20 lr " + fmt(e20, 17));
    o.require(e45 == 0.00001, "epoch 45 lr " + fmt(e45, 17));
    if (o.passed) o.detail = "0.001 / 0.0001 / 0.00001 at epochs 0 / 20 / 45";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient_correctness", gradient_correctness},
        {"architecture_audit", architecture_audit},
        {"residual_identity", residual_identity},
        {"metric_oracle", metric_oracle},
        {"stitching_exactness", stitching_exactness},
        {"desk_end_to_end", desk_end_to_end},
        {"determinism", determinism},
        {"lr_schedule", lr_schedule},
    };
    const std::vector<std::string> selected(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
        failures += !o.passed;
    }
    return failures == 0 ? 0 : 1;
}
