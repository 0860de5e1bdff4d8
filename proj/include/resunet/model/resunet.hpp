#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "resunet/error.hpp"
#include "resunet/model/graph.hpp"
#include "resunet/model/param_store.hpp"
#include "resunet/ops/batch_norm.hpp"
#include "resunet/ops/conv2d.hpp"
#include "resunet/ops/elementwise.hpp"
#include "resunet/ops/resample.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

inline constexpr std::uint32_t kSchemaVersion = 1;

/// Name, kind and shape of one parameter tensor.
struct ParamSlot {
    std::string name;
    ParamKind kind;
    Shape shape;
};

/// Every tensor the graph owns, in canonical (checkpoint) order.
inline std::vector<ParamSlot> parameter_layout(const ModelGraph& graph) {
    std::vector<ParamSlot> slots;
    auto add_bn = [&](const std::string& prefix, std::size_t c) {
        slots.push_back({prefix + ".gamma", ParamKind::learnable, {1, c, 1, 1}});
        slots.push_back({prefix + ".beta", ParamKind::learnable, {1, c, 1, 1}});
        slots.push_back({prefix + ".running_mean", ParamKind::running_stat, {1, c, 1, 1}});
        slots.push_back({prefix + ".running_var", ParamKind::running_stat, {1, c, 1, 1}});
    };
    for (const auto& u : graph.levels) {
        if (u.preactivate_first) add_bn(u.bn_a(), u.in_channels);
        slots.push_back({u.conv_a(), ParamKind::learnable, {u.out_channels, u.in_channels, 3, 3}});
        add_bn(u.bn_b(), u.out_channels);
        slots.push_back({u.conv_b(), ParamKind::learnable, {u.out_channels, u.out_channels, 3, 3}});
        if (u.has_projection()) {
            slots.push_back({u.shortcut(), ParamKind::learnable, {u.out_channels, u.in_channels, 1, 1}});
        }
    }
    slots.push_back({ModelGraph::head_name(), ParamKind::learnable, {1, graph.head_in_channels, 1, 1}});
    return slots;
}

/// He-normal conv kernels (std = sqrt(2 / fan_in)), BN gamma 1 / beta 0,
/// running mean 0 / variance 1. Deterministic for a given seed.
template <typename T = float>
BasicParamStore<T> init_params(const ModelGraph& graph, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    BasicParamStore<T> store;
    for (const auto& slot : parameter_layout(graph)) {
        Tensor<T> t(slot.shape);
        const std::string& n = slot.name;
        if (n.ends_with(".gamma") || n.ends_with(".running_var")) {
            t.fill(T(1));
        } else if (!n.ends_with(".beta") && !n.ends_with(".running_mean")) {
            const double fan_in = static_cast<double>(slot.shape.c * slot.shape.h * slot.shape.w);
            std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
            for (auto& v : t.data()) v = static_cast<T>(normal(rng));
        }
        store.add(slot.name, slot.kind, std::move(t));
    }
    store.set_meta("schema_version", kSchemaVersion);
    store.set_meta("bn_epsilon", kBatchNormEpsilon);
    store.set_meta("bn_momentum", kBatchNormMomentum);
    store.set_meta("width_scale", graph.width_scale);
    // RGB bytes are scaled by 1/255 without mean-centering.
    store.set_meta("input_scale", 1.0 / 255.0);
    return store;
}

/// Rejects a store whose names, kinds or shapes differ from the graph.
template <typename T>
void check_compatible(const ModelGraph& graph, const BasicParamStore<T>& store) {
    const auto layout = parameter_layout(graph);
    if (layout.size() != store.size()) {
        throw InputError("parameter store holds " + std::to_string(store.size()) +
                         " tensors but the graph expects " + std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& e = store.entries()[i];
        if (e.name != layout[i].name || e.kind != layout[i].kind ||
            e.tensor.shape() != layout[i].shape) {
            throw InputError("parameter #" + std::to_string(i) + " is '" + e.name + "' " +
                             e.tensor.shape().str() + " but the graph expects '" + layout[i].name +
                             "' " + layout[i].shape.str());
        }
    }
}

/// Conv output shape recorded during a forward pass (used by the shape audit).
struct ConvTrace {
    std::string layer;
    Shape shape;
};

template <typename T>
struct UnitCache {
    Tensor<T> input;
    Tensor<T> preact;       // relu(bn_a(input)); empty on level 1
    BatchStats bn_a;
    Tensor<T> mid;          // conv_a output
    BatchStats bn_b;
    Tensor<T> mid_act;      // relu(bn_b(mid))
};

/// Activations retained by a training-mode forward pass.
template <typename T>
struct ForwardCache {
    bool valid = false;
    std::array<UnitCache<T>, 7> units;
    Tensor<T> head_input;
    Tensor<T> output;
};

namespace detail {

template <typename T>
double store_meta(const BasicParamStore<T>& store, const char* key, double fallback) {
    return store.meta(key).value_or(fallback);
}

template <typename T>
Tensor<T> bn_relu(const BasicParamStore<T>& store, const std::string& prefix, const Tensor<T>& x,
                  Mode mode, BatchStats* stats_out) {
    const double eps = store_meta(store, "bn_epsilon", kBatchNormEpsilon);
    auto gamma = store.at(prefix + ".gamma").data();
    auto beta = store.at(prefix + ".beta").data();
    Tensor<T> normalized;
    if (mode == Mode::training) {
        BatchStats stats = batch_statistics(x, eps);
        normalized = batchnorm_normalize(x, stats, gamma, beta);
        if (stats_out) *stats_out = std::move(stats);
    } else {
        normalized = batchnorm_inference(x, gamma, beta, store.at(prefix + ".running_mean").data(),
                                         store.at(prefix + ".running_var").data(), eps);
    }
    for (auto& v : normalized.data()) v = v < T(0) ? T(0) : v;
    return normalized;
}

template <typename T>
void accumulate(BasicParamStore<T>& grads, const std::string& name, const Tensor<T>& g) {
    add_inplace(grads.at(name), g);
}

template <typename T>
void accumulate(BasicParamStore<T>& grads, const std::string& name, const std::vector<T>& g) {
    auto dst = grads.at(name).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

/// h(x) + F(x) with F = [BN -> ReLU -> conv(stride s)] -> [BN -> ReLU -> conv]
/// and h the identity or a strided 1x1 projection. The leading BN -> ReLU is
/// skipped when spec.preactivate_first is false.
///
/// In training mode BN uses batch statistics; running statistics are not
/// touched here (see apply_running_updates).
template <typename T>
Tensor<T> residual_unit_forward(const Tensor<T>& x, const ResidualUnitSpec& spec,
                                const BasicParamStore<T>& store, Mode mode,
                                std::type_identity_t<UnitCache<T>>* cache = nullptr,
                                std::vector<ConvTrace>* trace = nullptr) {
    if (x.shape().c != spec.in_channels) {
        throw ShapeError(spec.name + " expects " + std::to_string(spec.in_channels) +
                         " input channels, got input " + x.shape().str());
    }
    const ConvGeometry first{spec.first_stride, 1};
    const ConvGeometry second{1, 1};

    Tensor<T> preact;
    if (spec.preactivate_first) {
        preact = detail::bn_relu(store, spec.bn_a(), x, mode, cache ? &cache->bn_a : nullptr);
    }
    Tensor<T> mid = conv2d_forward(spec.preactivate_first ? preact : x, store.at(spec.conv_a()), first);
    if (trace) trace->push_back({spec.conv_a(), mid.shape()});
    Tensor<T> mid_act = detail::bn_relu(store, spec.bn_b(), mid, mode, cache ? &cache->bn_b : nullptr);
    Tensor<T> y = conv2d_forward(mid_act, store.at(spec.conv_b()), second);
    if (trace) trace->push_back({spec.conv_b(), y.shape()});

    if (spec.has_projection()) {
        add_inplace(y, conv2d_forward(x, store.at(spec.shortcut()), ConvGeometry{spec.first_stride, 0}));
    } else {
        add_inplace(y, x);
    }

    if (cache) {
        cache->input = x;
        cache->preact = std::move(preact);
        cache->mid = std::move(mid);
        cache->mid_act = std::move(mid_act);
    }
    return y;
}

/// Backward pass of one unit. Parameter gradients are accumulated into
/// `grads`; the returned tensor is dL/dx (empty if not requested).
template <typename T>
Tensor<T> residual_unit_backward(const UnitCache<T>& cache, const ResidualUnitSpec& spec,
                                 const BasicParamStore<T>& store, const Tensor<T>& grad_y,
                                 BasicParamStore<T>& grads, bool need_input_grad = true) {
    const ConvGeometry first{spec.first_stride, 1};
    const ConvGeometry second{1, 1};

    auto gb = conv2d_backward(cache.mid_act, store.at(spec.conv_b()), second, grad_y);
    detail::accumulate(grads, spec.conv_b(), gb.kernel);
    // mid_act > 0 exactly where the BN output was > 0.
    Tensor<T> g_norm = relu_backward(cache.mid_act, gb.input);
    auto bnb = batchnorm_backward(cache.mid, cache.bn_b, store.at(spec.bn_b() + ".gamma").data(), g_norm);
    detail::accumulate(grads, spec.bn_b() + ".gamma", bnb.gamma);
    detail::accumulate(grads, spec.bn_b() + ".beta", bnb.beta);

    const Tensor<T>& conv_a_input = spec.preactivate_first ? cache.preact : cache.input;
    auto ga = conv2d_backward(conv_a_input, store.at(spec.conv_a()), first, bnb.input,
                              spec.preactivate_first || need_input_grad);
    detail::accumulate(grads, spec.conv_a(), ga.kernel);

    Tensor<T> grad_x;
    if (spec.preactivate_first) {
        Tensor<T> g_pre = relu_backward(cache.preact, ga.input);
        auto bna = batchnorm_backward(cache.input, cache.bn_a, store.at(spec.bn_a() + ".gamma").data(),
                                      g_pre);
        detail::accumulate(grads, spec.bn_a() + ".gamma", bna.gamma);
        detail::accumulate(grads, spec.bn_a() + ".beta", bna.beta);
        grad_x = std::move(bna.input);
    } else if (need_input_grad) {
        grad_x = std::move(ga.input);
    }

    if (spec.has_projection()) {
        auto gp = conv2d_backward(cache.input, store.at(spec.shortcut()),
                                  ConvGeometry{spec.first_stride, 0}, grad_y, need_input_grad);
        detail::accumulate(grads, spec.shortcut(), gp.kernel);
        if (need_input_grad) add_inplace(grad_x, gp.input);
    } else if (need_input_grad) {
        add_inplace(grad_x, grad_y);
    }
    if (!need_input_grad) return Tensor<T>();
    return grad_x;
}

/// Rejects inputs the graph cannot process.
inline void check_model_input(const ModelGraph& graph, const Shape& s) {
    if (s.c != graph.levels[0].in_channels) {
        throw ShapeError("model input " + s.str() + " must have " +
                         std::to_string(graph.levels[0].in_channels) + " channels");
    }
    if (s.n == 0 || s.h % kSpatialMultiple != 0 || s.w % kSpatialMultiple != 0 || s.h < 16 ||
        s.w < 16) {
        throw ShapeError("model input " + s.str() +
                         " needs a non-empty batch and H, W multiples of 8 that are at least 16");
    }
}

/// Saturated logits round to exactly 0 or 1 in float. Pull those onto the
/// nearest representable values inside the open interval.
template <typename T>
void clamp_probabilities(Tensor<T>& p) {
    const T lo = std::numeric_limits<T>::min();
    const T hi = std::nextafter(T(1), T(0));
    for (auto& v : p.data()) v = std::clamp(v, lo, hi);
}

/// Full ResUnet: three encoder units, the bridge, three decoder units fed by
/// upsample + skip concatenation, then a bias-free 1x1 conv and a sigmoid.
///
/// With a cache in training mode every activation needed by `backward` is
/// retained. `trace` receives the output shape of each of the 15 main-path
/// convolutions in order.
template <typename T>
Tensor<T> forward(const ModelGraph& graph, const BasicParamStore<T>& store, const Tensor<T>& x,
                  Mode mode, std::type_identity_t<ForwardCache<T>>* cache = nullptr,
                  std::vector<ConvTrace>* trace = nullptr) {
    check_model_input(graph, x.shape());
    if (cache) cache->valid = false;
    auto unit_cache = [&](std::size_t i) -> UnitCache<T>* { return cache ? &cache->units[i] : nullptr; };

    std::array<Tensor<T>, 7> y;
    y[0] = residual_unit_forward(x, graph.levels[0], store, mode, unit_cache(0), trace);
    for (std::size_t i = 1; i < 4; ++i) {
        y[i] = residual_unit_forward(y[i - 1], graph.levels[i], store, mode, unit_cache(i), trace);
    }
    for (std::size_t i = 4; i < 7; ++i) {
        const Tensor<T> joined = concat_channels(upsample2x_forward(y[i - 1]), y[6 - i]);
        y[i] = residual_unit_forward(joined, graph.levels[i], store, mode, unit_cache(i), trace);
    }
    Tensor<T> logits = conv2d_forward(y[6], store.at(ModelGraph::head_name()), ConvGeometry{1, 0});
    if (trace) trace->push_back({ModelGraph::head_name(), logits.shape()});
    Tensor<T> out = sigmoid_forward(logits);
    clamp_probabilities(out);

    if (cache) {
        cache->head_input = std::move(y[6]);
        cache->output = out;
        cache->valid = mode == Mode::training;
    }
    return out;
}

/// Gradients of a scalar loss with respect to every learnable tensor, given
/// dL/d(output probabilities). Requires a cache filled by a training-mode
/// forward pass; running statistics receive no gradient.
template <typename T>
BasicParamStore<T> backward(const ModelGraph& graph, const BasicParamStore<T>& store,
                            const ForwardCache<T>& cache, const Tensor<T>& loss_grad) {
    if (!cache.valid) {
        throw StateError("backward needs the activations of a training-mode forward pass");
    }
    if (loss_grad.shape() != cache.output.shape()) {
        throw ShapeError("loss gradient " + loss_grad.shape().str() + " does not match model output " +
                         cache.output.shape().str());
    }
    BasicParamStore<T> grads = store.zeros_like_learnable();

    Tensor<T> g_logits = sigmoid_backward(cache.output, loss_grad);
    auto head = conv2d_backward(cache.head_input, store.at(ModelGraph::head_name()), ConvGeometry{1, 0},
                                g_logits);
    detail::accumulate(grads, ModelGraph::head_name(), head.kernel);

    // Decoder: split each unit's input gradient into the upsampled path and
    // the skip path from the paired encoder level.
    std::array<Tensor<T>, 3> skip;
    Tensor<T> g = std::move(head.input);
    for (std::size_t i = 6; i >= 4; --i) {
        Tensor<T> g_in = residual_unit_backward(cache.units[i], graph.levels[i], store, g, grads);
        auto [g_up, g_skip] = concat_backward(g_in, graph.levels[i - 1].out_channels);
        skip[6 - i] = std::move(g_skip);
        g = upsample2x_backward(g_up);
    }
    // Bridge and encoder.
    for (std::size_t i = 3; i >= 1; --i) {
        Tensor<T> g_in = residual_unit_backward(cache.units[i], graph.levels[i], store, g, grads);
        add_inplace(g_in, skip[i - 1]);
        g = std::move(g_in);
    }
    residual_unit_backward(cache.units[0], graph.levels[0], store, g, grads, false);
    return grads;
}

/// Folds the batch statistics of a training forward pass into the running
/// statistics: running <- momentum * running + (1 - momentum) * batch.
template <typename T>
void apply_running_updates(const ModelGraph& graph, BasicParamStore<T>& store,
                           const ForwardCache<T>& cache) {
    const double momentum = detail::store_meta(store, "bn_momentum", kBatchNormMomentum);
    auto update = [&](const std::string& prefix, const BatchStats& stats) {
        update_running_statistics(stats, store.at(prefix + ".running_mean").data(),
                                  store.at(prefix + ".running_var").data(), momentum);
    };
    for (std::size_t i = 0; i < 7; ++i) {
        const auto& spec = graph.levels[i];
        if (spec.preactivate_first) update(spec.bn_a(), cache.units[i].bn_a);
        update(spec.bn_b(), cache.units[i].bn_b);
    }
}

/// Training-mode forward that also updates the running statistics.
template <typename T>
Tensor<T> forward_train(const ModelGraph& graph, BasicParamStore<T>& store, const Tensor<T>& x,
                        ForwardCache<T>& cache) {
    Tensor<T> out = forward(graph, store, x, Mode::training, &cache);
    apply_running_updates(graph, store, cache);
    return out;
}

/// Scalar count of the main-path convolutions Conv1..Conv15, excluding
/// shortcut projections and BN parameters.
template <typename T>
std::size_t count_main_path_conv_params(const BasicParamStore<T>& store) {
    std::size_t total = 0;
    for (const auto& e : store.entries()) {
        if (e.name.find(".conv") != std::string::npos) total += e.tensor.size();
    }
    return total;
}

}  // namespace resunet
