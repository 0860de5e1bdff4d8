#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "resunet/app/config.hpp"
#include "resunet/check/audit.hpp"
#include "resunet/check/suites.hpp"
#include "resunet/data/dataset.hpp"
#include "resunet/data/png_io.hpp"
#include "resunet/data/synthetic.hpp"
#include "resunet/eval/metrics.hpp"
#include "resunet/inference/tiling.hpp"
#include "resunet/model/checkpoint.hpp"
#include "resunet/train/trainer.hpp"

namespace resunet::app {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kBadInput = 2, kDiverged = 3 };

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

inline std::string epoch_checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch + 1);
    return buf;
}

inline int cmd_train(const RunConfig& cfg, Streams io) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir / "checkpoints");

    Dataset dataset;
    if (cfg.synthetic > 0) {
        dataset = synthetic_dataset(cfg.synthetic, cfg.train.seed);
        const fs::path dir = cfg.output_dir / "synthetic";
        fs::create_directories(dir);
        std::vector<ManifestEntry> entries;
        for (const auto& scene : dataset.items()) {
            const ManifestEntry e{scene.source_id + ".png", scene.source_id + "_mask.png"};
            export_labeled_image(scene, dir / e.image, dir / e.mask);
            entries.push_back(e);
        }
        write_manifest(dir / "manifest.tsv", entries);
    } else {
        dataset = Dataset::from_manifest(cfg.manifest);
    }
    io.out << "training on " << dataset.size() << " images, width_scale " << cfg.train.width_scale << ", "
           << cfg.train.epochs << " epochs of " << cfg.train.steps_per_epoch() << " steps\n";

    JsonLinesLog log(cfg.output_dir / "train_log.jsonl");
    TrainHooks hooks;
    hooks.on_step = [&](const TrainLogRecord& r) { log.write(r); };
    std::vector<double> epoch_sum;
    hooks.on_epoch_end = [&](std::size_t epoch, const ParamStore& params) {
        save_checkpoint(params, cfg.output_dir / "checkpoints" / epoch_checkpoint_name(epoch));
    };
    TrainResult result;
    try {
        result = train(dataset, cfg.train, hooks);
    } catch (const NonFiniteLossError& e) {
        io.err << "training diverged: " << e.what() << '\n';
        return kDiverged;
    }
    save_checkpoint(result.params, cfg.output_dir / "model.ckpt");
    const auto means = epoch_mean_losses(result.log);
    for (std::size_t e = 0; e < means.size(); ++e) {
        io.out << "epoch " << e + 1 << "/" << cfg.train.epochs << " lr " << lr_at_epoch(cfg.train, e) << " mean_mse "
               << std::setprecision(6) << means[e] << '\n';
    }
    io.out << "wrote " << (cfg.output_dir / "model.ckpt").string() << '\n';
    return kOk;
}

inline int cmd_predict(const RunConfig& cfg, Streams io) {
    namespace fs = std::filesystem;
    ParamStore params = load_checkpoint(cfg.checkpoint);
    const ModelGraph graph = graph_for(params);
    try {
        check_compatible(graph, params);
    } catch (const InputError& e) {
        throw CheckpointError(CheckpointError::Kind::graph_mismatch, cfg.checkpoint.string() + ": " + e.what());
    }
    fs::create_directories(cfg.output_dir);

    PredictOptions options;
    options.overlap = cfg.overlap;
    options.threshold = static_cast<float>(cfg.threshold);
    options.threads = cfg.threads;
    for (const auto& input : cfg.inputs) {
        const Tensor<float> image = image_tensor(read_png(input));
        const TileGrid grid = plan_tiles(image.shape().h, image.shape().w, kTileSize, cfg.overlap);
        const SegmentationMap map = predict_image(graph, params, image, options);
        const std::string stem = input.stem().string();
        write_png(cfg.output_dir / (stem + "_prob.png"), gray_bytes(map.probs));
        write_png(cfg.output_dir / (stem + "_mask.png"), gray_bytes(*map.binary));
        io.out << input.filename().string() << ": " << grid.width << "x" << grid.height << ", " << grid.origins.size()
               << " tiles (" << grid.xs.size() << "x" << grid.ys.size() << "), overlap " << grid.overlap << '\n';
    }
    return kOk;
}

inline Tensor<float> probability_tensor(const Image8& img) {
    Tensor<float> t({1, 1, img.height, img.width});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(img.pixels[i * img.channels]) / 255.f;
    return t;
}

inline int cmd_evaluate(const RunConfig& cfg, Streams io) {
    namespace fs = std::filesystem;
    const auto entries = read_manifest(cfg.manifest);
    std::vector<Tensor<float>> probs, gts;
    std::vector<std::string> mismatches;
    for (const auto& e : entries) {
        const Image8 p = read_png(e.image);
        const Image8 g = read_png(e.mask);
        if (p.width != g.width || p.height != g.height) {
            mismatches.push_back(e.image.string() + " is " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                                 ", " + e.mask.string() + " is " + std::to_string(g.width) + "x" +
                                 std::to_string(g.height));
            continue;
        }
        probs.push_back(probability_tensor(p));
        gts.push_back(mask_tensor(g));
    }
    if (!mismatches.empty()) {
        for (const auto& m : mismatches) io.err << "shape mismatch: " << m << '\n';
        return kBadInput;
    }
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < probs.size(); ++i) pairs.push_back({&probs[i], &gts[i]});
    const PRCurve curve = pr_curve(pairs, cfg.rho, cfg.thresholds, cfg.distance);

    std::size_t empty_pred = 0, empty_gt = 0;
    for (const auto& p : curve.points) {
        empty_pred += p.empty_pred;
        empty_gt += p.empty_gt;
    }
    if (empty_pred) io.out << "note: no predicted road at " << empty_pred << " thresholds, precision taken as 1\n";
    if (empty_gt) io.out << "note: ground truth has no road, recall taken as 1\n";

    fs::create_directories(cfg.output_dir);
    write_curve_csv(cfg.output_dir / "pr_curve.csv", curve);
    const std::string summary = summary_line(curve);
    std::ofstream(cfg.output_dir / "summary.txt") << summary << '\n';
    io.out << summary << '\n';
    return kOk;
}

struct VerifyOptions {
    bool inject_fault = false;
};

inline int cmd_verify(const RunConfig& cfg, Streams io, VerifyOptions options = {}) {
    std::vector<std::string> failed;
    auto report = [&](bool ok, const std::string& name, const std::string& detail) {
        io.out << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
        if (!ok) failed.push_back(name);
    };

    check::SuiteOptions suite;
    suite.seed = cfg.train.seed;
    suite.corrupt_backward = options.inject_fault;
    for (const auto& r : check::run_gradient_suite(suite)) {
        const double tol = check::tolerance_for(r);
        std::ostringstream detail;
        detail << std::setprecision(3) << "max_rel_error=" << r.max_rel_error << " tol=" << tol << " checked=" << r.checked
               << " skipped=" << r.skipped;
        report(r.passed(tol), "gradient/" + r.name, detail.str());
    }
    const auto shapes = check::audit_shapes(cfg.train.seed);
    report(shapes.passed, "architecture/" + shapes.name, shapes.detail);
    for (const auto& c : check::audit_counts()) report(c.passed, "architecture/" + c.name, c.detail);

    if (!failed.empty()) {
        io.out << "verify failed:";
        for (const auto& f : failed) io.out << ' ' << f;
        io.out << '\n';
        return kVerifyFailed;
    }
    io.out << "verify passed\n";
    return kOk;
}

/// Resolves the configuration, validates it, and runs one command, mapping
/// errors onto the exit-code contract.
inline int run_command(Command command, const KeyValues& file, const KeyValues& flags, Streams io,
                       VerifyOptions verify = {}) {
    try {
        const RunConfig cfg = resolve_config(command, file, flags);
        validate_config(command, cfg);
        switch (command) {
            case kTrain: return cmd_train(cfg, io);
            case kPredict: return cmd_predict(cfg, io);
            case kEvaluate: return cmd_evaluate(cfg, io);
            case kVerify: return cmd_verify(cfg, io, verify);
            default: break;
        }
        io.err << "unknown command\n";
        return kBadInput;
    } catch (const ConfigError& e) {
        io.err << "invalid setting " << e.what() << '\n';
        return kBadInput;
    } catch (const NonFiniteLossError& e) {
        io.err << e.what() << '\n';
        return kDiverged;
    } catch (const std::exception& e) {
        io.err << command_name(command) << ": " << e.what() << '\n';
        return kBadInput;
    }
}

}  // namespace resunet::app
