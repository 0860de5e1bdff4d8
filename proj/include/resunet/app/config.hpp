#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "resunet/error.hpp"
#include "resunet/eval/metrics.hpp"
#include "resunet/inference/tiling.hpp"
#include "resunet/train/trainer.hpp"

namespace resunet::app {

enum Command : unsigned { kTrain = 1, kPredict = 2, kEvaluate = 4, kVerify = 8, kAll = 15 };

inline const char* command_name(Command c) {
    switch (c) {
        case kTrain: return "train";
        case kPredict: return "predict";
        case kEvaluate: return "evaluate";
        case kVerify: return "verify";
        default: return "?";
    }
}

struct RunConfig {
    std::filesystem::path manifest;
    std::size_t synthetic = 0;
    TrainConfig train;
    std::filesystem::path checkpoint;
    std::size_t overlap = kDefaultOverlap;
    int rho = kDefaultRho;
    std::vector<double> thresholds = default_thresholds();
    double threshold = kDefaultThreshold;
    Distance distance = Distance::chebyshev;
    std::filesystem::path output_dir = "resunet_out";
    std::size_t threads = 1;
    std::vector<std::filesystem::path> inputs;
};

/// A configuration value that failed to parse or validate. `field` is the
/// flag / config-file key.
class ConfigError : public InputError {
public:
    ConfigError(std::string field, const std::string& what)
        : InputError(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    if constexpr (std::is_unsigned_v<T>) {
        if (!value.empty() && value.front() == '-') throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
    }
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || value.empty()) {
        throw ConfigError(key, "cannot parse '" + value + "'");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(out)) throw ConfigError(key, "must be finite");
    }
    return out;
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= value.size()) {
        const auto comma = value.find(',', start);
        const std::string item = trim(value.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace detail

/// One configurable setting: its key (used both as `--key` and in config
/// files), the commands it applies to, and how to store a textual value.
struct FieldSpec {
    std::string key;
    std::string help;
    unsigned commands;
    void (*apply)(RunConfig&, const std::string& key, const std::string& value);
};

inline const std::vector<FieldSpec>& config_fields() {
    using detail::parse_number;
    static const std::vector<FieldSpec> fields{
        {"manifest", "image<TAB>mask list (train) or prediction<TAB>mask list (evaluate)", kTrain | kEvaluate,
         [](RunConfig& c, const std::string&, const std::string& v) { c.manifest = v; }},
        {"synthetic", "train on N generated scenes instead of a manifest", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic = parse_number<std::size_t>(k, v); }},
        {"width-scale", "channel width multiplier", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.train.width_scale = parse_number<double>(k, v); }},
        {"batch-size", "mini-batch size", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_number<std::size_t>(k, v); }},
        {"lr", "initial learning rate", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.train.initial_lr = parse_number<double>(k, v); }},
        {"lr-decay-factor", "learning-rate multiplier per decay", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_decay_factor = parse_number<double>(k, v); }},
        {"lr-decay-every", "epochs between decays", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.lr_decay_every_epochs = parse_number<std::size_t>(k, v);
         }},
        {"epochs", "number of epochs", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = parse_number<std::size_t>(k, v); }},
        {"samples-per-epoch", "training tiles per epoch", kTrain,
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.samples_per_epoch = parse_number<std::size_t>(k, v);
         }},
        {"seed", "random seed", kTrain | kVerify,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
        {"checkpoint", "model checkpoint to load", kPredict,
         [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; }},
        {"overlap", "tile overlap in pixels", kPredict,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.overlap = parse_number<std::size_t>(k, v); }},
        {"threshold", "binarization threshold (probs >= t)", kPredict,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.threshold = parse_number<double>(k, v); }},
        {"rho", "relaxed-metric slack in pixels", kEvaluate,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.rho = parse_number<int>(k, v); }},
        {"thresholds", "comma-separated PR-curve thresholds", kEvaluate,
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.thresholds.clear();
             for (const auto& item : detail::split_list(v)) c.thresholds.push_back(parse_number<double>(k, item));
         }},
        {"distance", "chebyshev or euclidean", kEvaluate,
         [](RunConfig& c, const std::string& k, const std::string& v) {
             try {
                 c.distance = parse_distance(v);
             } catch (const InputError& e) {
                 throw ConfigError(k, e.what());
             }
         }},
        {"output-dir", "directory for every file the command writes", kTrain | kPredict | kEvaluate,
         [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
        {"threads", "worker threads for tiled prediction", kPredict,
         [](RunConfig& c, const std::string& k, const std::string& v) { c.threads = parse_number<std::size_t>(k, v); }},
        {"inputs", "comma-separated input PNGs", kPredict,
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.inputs.clear();
             for (const auto& item : detail::split_list(v)) c.inputs.emplace_back(item);
         }},
    };
    return fields;
}

inline const FieldSpec* find_field(const std::string& key) {
    for (const auto& f : config_fields())
        if (f.key == key) return &f;
    return nullptr;
}

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` lines; '#' starts a comment line. Keys are the flag
/// names without the leading dashes.
inline KeyValues parse_config_text(const std::string& text, const std::string& origin = "config") {
    KeyValues out;
    std::size_t lineno = 0, start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = detail::trim(std::string_view(text).substr(start, end - start));
        start = end + 1;
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where, "expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        if (!find_field(key)) throw ConfigError(key, "unknown setting at " + where);
        out[key] = detail::trim(line.substr(eq + 1));
    }
    return out;
}

inline KeyValues read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), {});
    return parse_config_text(text, path.string());
}

/// Defaults, then config-file values, then flags.
inline RunConfig resolve_config(Command command, const KeyValues& file, const KeyValues& flags) {
    RunConfig cfg;
    for (const KeyValues* layer : {&file, &flags}) {
        for (const auto& [key, value] : *layer) {
            const FieldSpec* f = find_field(key);
            if (!f) throw ConfigError(key, "unknown setting");
            if (!(f->commands & command)) continue;
            f->apply(cfg, key, value);
        }
    }
    return cfg;
}

/// Checks every setting the command reads before any work starts.
inline void validate_config(Command command, const RunConfig& c) {
    if (command == kTrain) {
        if (c.synthetic == 0 && c.manifest.empty()) throw ConfigError("manifest", "train needs --manifest or --synthetic N");
        if (c.synthetic == 0 && !std::filesystem::is_regular_file(c.manifest)) {
            throw ConfigError("manifest", "no such file " + c.manifest.string());
        }
        const TrainConfig& t = c.train;
        if (t.batch_size == 0) throw ConfigError("batch-size", "must be positive");
        if (!(t.initial_lr > 0)) throw ConfigError("lr", "must be positive");
        if (!(t.lr_decay_factor > 0 && t.lr_decay_factor <= 1)) throw ConfigError("lr-decay-factor", "must be in (0, 1]");
        if (t.lr_decay_every_epochs == 0) throw ConfigError("lr-decay-every", "must be positive");
        if (t.samples_per_epoch < t.batch_size) throw ConfigError("samples-per-epoch", "must be at least batch-size");
        if (!(t.width_scale > 0)) throw ConfigError("width-scale", "must be positive");
    }
    if (command == kPredict) {
        if (c.checkpoint.empty()) throw ConfigError("checkpoint", "predict needs --checkpoint");
        if (!std::filesystem::is_regular_file(c.checkpoint)) {
            throw ConfigError("checkpoint", "no such file " + c.checkpoint.string());
        }
        if (c.inputs.empty()) throw ConfigError("inputs", "predict needs at least one input image");
        for (const auto& p : c.inputs)
            if (!std::filesystem::is_regular_file(p)) throw ConfigError("inputs", "no such file " + p.string());
        if (c.overlap >= kTileSize) throw ConfigError("overlap", "must be smaller than the 224 tile");
        if (!(c.threshold > 0 && c.threshold < 1)) throw ConfigError("threshold", "must be in (0, 1)");
        if (c.threads == 0) throw ConfigError("threads", "must be positive");
    }
    if (command == kEvaluate) {
        if (c.manifest.empty()) throw ConfigError("manifest", "evaluate needs --manifest");
        if (!std::filesystem::is_regular_file(c.manifest)) {
            throw ConfigError("manifest", "no such file " + c.manifest.string());
        }
        if (c.rho < 0) throw ConfigError("rho", "must be non-negative");
        try {
            validate_thresholds(c.thresholds);
        } catch (const InputError& e) {
            throw ConfigError("thresholds", e.what());
        }
    }
}

}  // namespace resunet::app
