#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resunet/data/dataset.hpp"
#include "resunet/error.hpp"
#include "resunet/model/resunet.hpp"
#include "resunet/train/loss.hpp"

namespace resunet {

struct TrainConfig {
    std::size_t batch_size = 8;
    double initial_lr = 0.001;
    double lr_decay_factor = 0.1;
    std::size_t lr_decay_every_epochs = 20;
    std::size_t epochs = 50;
    std::size_t samples_per_epoch = 600;  // 30,000 samples over 50 epochs
    std::uint64_t seed = 0;
    double width_scale = 1.0;

    std::size_t steps_per_epoch() const { return samples_per_epoch / batch_size; }

    void validate() const {
        if (batch_size == 0) throw InputError("batch_size must be positive");
        if (!(initial_lr > 0) || !std::isfinite(initial_lr)) throw InputError("initial_lr must be positive");
        if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) throw InputError("lr_decay_factor must be in (0, 1]");
        if (lr_decay_every_epochs == 0) throw InputError("lr_decay_every_epochs must be positive");
        if (samples_per_epoch < batch_size) throw InputError("samples_per_epoch must be at least batch_size");
        if (!(width_scale > 0) || !std::isfinite(width_scale)) throw InputError("width_scale must be positive");
    }
};

struct TrainLogRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double lr = 0.0;
    double mse_loss = 0.0;
    double wall_time = 0.0;  // seconds since training started
};

inline nlohmann::json to_json(const TrainLogRecord& r) {
    return {{"epoch", r.epoch}, {"step", r.step}, {"lr", r.lr}, {"mse_loss", r.mse_loss}, {"wall_time", r.wall_time}};
}

/// Step decay: initial_lr * decay_factor ^ floor(epoch / decay_every).
inline double lr_at_epoch(const TrainConfig& config, std::size_t epoch) {
    const auto drops = static_cast<int>(epoch / config.lr_decay_every_epochs);
    double lr = config.initial_lr;
    for (int i = 0; i < drops; ++i) lr *= config.lr_decay_factor;
    return lr;
}

/// Plain SGD, w <- w - lr * g, on every learnable tensor.
inline void sgd_step(ParamStore& params, const ParamStore& grads, double lr) {
    const float step = static_cast<float>(lr);
    for (auto& e : params.entries()) {
        if (e.kind != ParamKind::learnable) continue;
        if (!grads.contains(e.name)) throw StateError("sgd_step: no gradient for " + e.name);
        const Tensor<float>& g = grads.at(e.name);
        if (g.shape() != e.tensor.shape()) {
            throw ShapeError("sgd_step: gradient " + g.shape().str() + " for " + e.name + " " +
                             e.tensor.shape().str());
        }
        for (std::size_t i = 0; i < g.size(); ++i) e.tensor[i] -= step * g[i];
    }
}

class NonFiniteLossError : public std::runtime_error {
public:
    NonFiniteLossError(std::size_t epoch, std::size_t step, double loss)
        : std::runtime_error("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step)),
          epoch_(epoch),
          step_(step) {}
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t epoch_;
    std::size_t step_;
};

struct TrainHooks {
    std::function<void(const TrainLogRecord&)> on_step;
    std::function<void(std::size_t epoch, const ParamStore&)> on_epoch_end;
};

struct TrainResult {
    ParamStore params;
    std::vector<TrainLogRecord> log;
};

/// Seed used for the tile stream; kept apart from the initialisation seed.
inline std::uint64_t sampler_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ull; }

/// epochs x steps_per_epoch iterations of sample -> forward -> MSE ->
/// backward -> SGD. Starts from `initial` if given, else init_params(seed).
inline TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainHooks& hooks = {},
                         std::optional<ParamStore> initial = std::nullopt) {
    config.validate();
    if (dataset.empty()) throw InputError("train needs a non-empty dataset");
    const ModelGraph graph = ModelGraph::build(config.width_scale);
    TrainResult result{initial ? std::move(*initial) : init_params(graph, config.seed), {}};
    check_compatible(graph, result.params);

    TileSampler sampler(dataset, sampler_seed(config.seed));
    ForwardCache<float> cache;
    std::vector<TileSample> batch;
    const auto start = std::chrono::steady_clock::now();
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at_epoch(config, epoch);
        for (std::size_t s = 0; s < config.steps_per_epoch(); ++s, ++step) {
            batch.clear();
            for (std::size_t b = 0; b < config.batch_size; ++b) batch.push_back(sampler.next());
            const auto [images, masks] = stack_batch(batch);
            const Tensor<float> pred = forward_train(graph, result.params, images, cache);
            const LossResult<float> loss = mse_loss(pred, masks);
            if (!std::isfinite(loss.value)) throw NonFiniteLossError(epoch, step, loss.value);
            const ParamStore grads = backward(graph, result.params, cache, loss.grad);
            sgd_step(result.params, grads, lr);

            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
            result.log.push_back({epoch, step, lr, loss.value, elapsed.count()});
            if (hooks.on_step) hooks.on_step(result.log.back());
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, result.params);
    }
    return result;
}

/// Mean of the logged losses of each epoch, indexed by epoch.
inline std::vector<double> epoch_mean_losses(const std::vector<TrainLogRecord>& log) {
    std::vector<double> sums, counts;
    for (const auto& r : log) {
        if (r.epoch >= sums.size()) {
            sums.resize(r.epoch + 1, 0.0);
            counts.resize(r.epoch + 1, 0.0);
        }
        sums[r.epoch] += r.mse_loss;
        counts[r.epoch] += 1.0;
    }
    for (std::size_t e = 0; e < sums.size(); ++e) sums[e] = counts[e] > 0 ? sums[e] / counts[e] : 0.0;
    return sums;
}

/// Appends one JSON object per line.
class JsonLinesLog {
public:
    explicit JsonLinesLog(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw InputError("cannot create log file " + path.string());
    }
    void write(const TrainLogRecord& r) { out_ << to_json(r).dump() << '\n' << std::flush; }

private:
    std::ofstream out_;
};

}  // namespace resunet
