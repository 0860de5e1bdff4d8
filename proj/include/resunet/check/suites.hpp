#pragma once

// Finite-difference gradient suites shared by the `verify` command and the
// acceptance tests. Every check evaluates the forward path in double
// precision and compares central differences with the analytic backward.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "resunet/check/gradcheck.hpp"
#include "resunet/model/resunet.hpp"
#include "resunet/ops/batch_norm.hpp"
#include "resunet/ops/conv2d.hpp"
#include "resunet/ops/elementwise.hpp"
#include "resunet/ops/resample.hpp"
#include "resunet/train/loss.hpp"

namespace resunet::check {

inline constexpr double kPrimitiveTolerance = 1e-3;
inline constexpr double kModelTolerance = 1e-2;

struct SuiteOptions {
    std::uint64_t seed = 1;
    std::size_t seeds = 20;            // random trials per primitive
    std::size_t model_params = 30;     // sampled scalars in the full-model check
    bool corrupt_backward = false;     // harness sanity: perturbs one analytic gradient
};

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Shape random_shape(std::mt19937_64& rng, std::size_t min_hw = 2) {
    return {pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, min_hw, 8), pick(rng, min_hw, 8)};
}

inline std::span<const double> view(const Tensor<double>& t) { return t.data(); }
inline std::span<double> view(Tensor<double>& t) { return t.data(); }

}  // namespace detail

inline GradCheckResult check_conv2d(std::mt19937_64& rng, bool corrupt = false) {
    GradCheckResult r{"conv2d"};
    const std::size_t k = detail::pick(rng, 0, 1) ? 3 : 1;
    const ConvGeometry g{detail::pick(rng, 1, 2), k / 2};
    Tensor<double> x = random_tensor(detail::random_shape(rng, k), rng);
    Tensor<double> kernel = random_tensor({detail::pick(rng, 1, 4), x.shape().c, k, k}, rng);
    const Tensor<double> probe = random_tensor(conv2d_forward(x, kernel, g).shape(), rng);

    auto grads = conv2d_backward(x, kernel, g, probe);
    if (corrupt) {
        for (auto& v : grads.kernel.data()) v *= 1.05;
    }
    auto objective = [&] { return weighted_sum(conv2d_forward(x, kernel, g), probe); };
    compare_central_differences(detail::view(x), detail::view(grads.input), all_indices(x.size()), objective, r);
    compare_central_differences(detail::view(kernel), detail::view(grads.kernel), all_indices(kernel.size()),
                                objective, r);
    return r;
}

inline GradCheckResult check_batchnorm(std::mt19937_64& rng) {
    GradCheckResult r{"batchnorm"};
    Tensor<double> x = random_tensor(detail::random_shape(rng), rng);
    const std::size_t C = x.shape().c;
    std::uniform_real_distribution<double> u(0.5, 1.5);
    std::vector<double> gamma(C), beta(C);
    for (std::size_t c = 0; c < C; ++c) {
        gamma[c] = u(rng);
        beta[c] = u(rng) - 1.0;
    }
    const Tensor<double> probe = random_tensor(x.shape(), rng);
    auto forward_value = [&] {
        const BatchStats s = batch_statistics(x, kBatchNormEpsilon);
        return weighted_sum(batchnorm_normalize(x, s, std::span<const double>(gamma), std::span<const double>(beta)),
                            probe);
    };
    const BatchStats stats = batch_statistics(x, kBatchNormEpsilon);
    auto grads = batchnorm_backward(x, stats, std::span<const double>(gamma), probe);
    compare_central_differences(detail::view(x), detail::view(grads.input), all_indices(x.size()), forward_value, r);
    compare_central_differences(std::span<double>(gamma), std::span<const double>(grads.gamma), all_indices(C),
                                forward_value, r);
    compare_central_differences(std::span<double>(beta), std::span<const double>(grads.beta), all_indices(C),
                                forward_value, r);
    return r;
}

inline GradCheckResult check_relu(std::mt19937_64& rng) {
    GradCheckResult r{"relu"};
    Tensor<double> x = random_tensor(detail::random_shape(rng), rng);
    const Tensor<double> probe = random_tensor(x.shape(), rng);
    const Tensor<double> g = relu_backward(x, probe);
    // Stay away from the kink: central differences straddling 0 are not a
    // derivative.
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i]) >= 1e-2) idx.push_back(i);
    }
    compare_central_differences(detail::view(x), detail::view(g), idx,
                                [&] { return weighted_sum(relu_forward(x), probe); }, r);
    return r;
}

inline GradCheckResult check_sigmoid(std::mt19937_64& rng) {
    GradCheckResult r{"sigmoid"};
    Tensor<double> x = random_tensor(detail::random_shape(rng), rng, -4.0, 4.0);
    const Tensor<double> probe = random_tensor(x.shape(), rng);
    const Tensor<double> g = sigmoid_backward(sigmoid_forward(x), probe);
    compare_central_differences(detail::view(x), detail::view(g), all_indices(x.size()),
                                [&] { return weighted_sum(sigmoid_forward(x), probe); }, r);
    return r;
}

inline GradCheckResult check_upsample(std::mt19937_64& rng) {
    GradCheckResult r{"upsample2x"};
    Tensor<double> x = random_tensor(detail::random_shape(rng, 1), rng);
    const Shape s = x.shape();
    const Tensor<double> probe = random_tensor({s.n, s.c, 2 * s.h, 2 * s.w}, rng);
    const Tensor<double> g = upsample2x_backward(probe);
    compare_central_differences(detail::view(x), detail::view(g), all_indices(x.size()),
                                [&] { return weighted_sum(upsample2x_forward(x), probe); }, r);
    return r;
}

inline GradCheckResult check_concat(std::mt19937_64& rng) {
    GradCheckResult r{"concat"};
    Tensor<double> a = random_tensor(detail::random_shape(rng), rng);
    const Shape sa = a.shape();
    Tensor<double> b = random_tensor({sa.n, detail::pick(rng, 1, 4), sa.h, sa.w}, rng);
    const Tensor<double> probe = random_tensor(concat_channels(a, b).shape(), rng);
    auto [ga, gb] = concat_backward(probe, sa.c);
    auto objective = [&] { return weighted_sum(concat_channels(a, b), probe); };
    compare_central_differences(detail::view(a), detail::view(ga), all_indices(a.size()), objective, r);
    compare_central_differences(detail::view(b), detail::view(gb), all_indices(b.size()), objective, r);
    return r;
}

inline GradCheckResult check_add(std::mt19937_64& rng) {
    GradCheckResult r{"add"};
    Tensor<double> a = random_tensor(detail::random_shape(rng), rng);
    Tensor<double> b = random_tensor(a.shape(), rng);
    const Tensor<double> probe = random_tensor(a.shape(), rng);
    // d(a+b)/da = d(a+b)/db = identity, so both gradients equal the probe.
    auto objective = [&] { return weighted_sum(add(a, b), probe); };
    compare_central_differences(detail::view(a), detail::view(probe), all_indices(a.size()), objective, r);
    compare_central_differences(detail::view(b), detail::view(probe), all_indices(b.size()), objective, r);
    return r;
}

inline GradCheckResult check_mse(std::mt19937_64& rng) {
    GradCheckResult r{"mse_loss"};
    Tensor<double> pred = random_tensor(detail::random_shape(rng), rng, 0.0, 1.0);
    const Tensor<double> target = random_tensor(pred.shape(), rng, 0.0, 1.0);
    const auto loss = mse_loss(pred, target);
    compare_central_differences(detail::view(pred), detail::view(loss.grad), all_indices(pred.size()),
                                [&] { return mse_loss(pred, target).value; }, r);
    return r;
}

/// Gradient of one residual unit (training-mode BN) with respect to its input
/// and every learnable tensor of the unit.
inline GradCheckResult check_residual_unit(std::mt19937_64& rng, const ResidualUnitSpec& spec, Shape input_shape) {
    GradCheckResult r{"residual_unit"};
    BasicParamStore<double> store;
    auto add_bn = [&](const std::string& prefix, std::size_t c) {
        store.add(prefix + ".gamma", ParamKind::learnable, random_tensor({1, c, 1, 1}, rng, 0.5, 1.5));
        store.add(prefix + ".beta", ParamKind::learnable, random_tensor({1, c, 1, 1}, rng, -0.5, 0.5));
        store.add(prefix + ".running_mean", ParamKind::running_stat, Tensor<double>({1, c, 1, 1}, 0.0));
        store.add(prefix + ".running_var", ParamKind::running_stat, Tensor<double>({1, c, 1, 1}, 1.0));
    };
    if (spec.preactivate_first) add_bn(spec.bn_a(), spec.in_channels);
    store.add(spec.conv_a(), ParamKind::learnable, random_tensor({spec.out_channels, spec.in_channels, 3, 3}, rng));
    add_bn(spec.bn_b(), spec.out_channels);
    store.add(spec.conv_b(), ParamKind::learnable, random_tensor({spec.out_channels, spec.out_channels, 3, 3}, rng));
    if (spec.has_projection()) {
        store.add(spec.shortcut(), ParamKind::learnable, random_tensor({spec.out_channels, spec.in_channels, 1, 1}, rng));
    }
    Tensor<double> x = random_tensor(input_shape, rng);
    UnitCache<double> cache;
    const Tensor<double> y = residual_unit_forward(x, spec, store, Mode::training, &cache);
    const Tensor<double> probe = random_tensor(y.shape(), rng);
    BasicParamStore<double> grads = store.zeros_like_learnable();
    const Tensor<double> gx = residual_unit_backward(cache, spec, store, probe, grads);

    auto objective = [&] { return weighted_sum(residual_unit_forward(x, spec, store, Mode::training), probe); };
    compare_central_differences(detail::view(x), detail::view(gx), all_indices(x.size()), objective, r);
    for (auto& e : store.entries()) {
        if (e.kind != ParamKind::learnable) continue;
        compare_central_differences(detail::view(e.tensor), detail::view(grads.at(e.name)),
                                    all_indices(e.tensor.size()), objective, r);
    }
    return r;
}

/// Full-model check on a width-reduced graph: MSE loss against a random
/// target, `samples` randomly chosen learnable scalars.
inline GradCheckResult check_full_model(std::mt19937_64& rng, double width_scale, std::size_t samples,
                                        std::size_t side = 16) {
    GradCheckResult r{"full_model"};
    const ModelGraph graph = ModelGraph::build(width_scale);
    BasicParamStore<double> store = init_params<double>(graph, rng());
    // Non-trivial BN affine parameters so their gradients are exercised.
    for (auto& e : store.entries()) {
        if (e.name.ends_with(".gamma")) e.tensor = random_tensor(e.tensor.shape(), rng, 0.5, 1.5);
        if (e.name.ends_with(".beta")) e.tensor = random_tensor(e.tensor.shape(), rng, -0.2, 0.2);
    }
    const Tensor<double> x = random_tensor({2, kInputChannels, side, side}, rng, 0.0, 1.0);
    const Tensor<double> target = random_tensor({2, 1, side, side}, rng, 0.0, 1.0);

    ForwardCache<double> cache;
    const Tensor<double> out = forward(graph, store, x, Mode::training, &cache);
    const BasicParamStore<double> grads = backward(graph, store, cache, mse_loss(out, target).grad);

    // Flatten all learnable scalars into (entry, offset) pairs and sample.
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.entries()[i];
        if (e.kind != ParamKind::learnable) continue;
        for (std::size_t j = 0; j < e.tensor.size(); ++j) slots.emplace_back(i, j);
    }
    auto objective = [&] { return mse_loss(forward(graph, store, x, Mode::training), target).value; };
    for (std::size_t s : shuffled_indices(slots.size(), rng)) {
        if (r.checked >= samples) break;
        auto& e = store.entries()[slots[s].first];
        const std::size_t j = slots[s].second;
        std::span<double> values = e.tensor.data();
        const double analytic = grads.at(e.name)[j];
        std::vector<double> one{analytic};
        compare_central_differences(values.subspan(j, 1), std::span<const double>(one), {0}, objective, r);
    }
    return r;
}

/// Every primitive over `options.seeds` random trials, then the residual unit
/// and the width-reduced full model.
inline std::vector<GradCheckResult> run_gradient_suite(const SuiteOptions& options) {
    std::mt19937_64 rng(options.seed);
    std::vector<GradCheckResult> results;
    auto merge = [&](GradCheckResult acc, auto&& fn) {
        for (std::size_t s = 0; s < options.seeds; ++s) {
            const GradCheckResult one = fn();
            acc.max_rel_error = std::max(acc.max_rel_error, one.max_rel_error);
            acc.checked += one.checked;
            acc.skipped += one.skipped;
        }
        results.push_back(acc);
    };
    merge(GradCheckResult{"conv2d"}, [&] { return check_conv2d(rng, options.corrupt_backward); });
    merge(GradCheckResult{"batchnorm"}, [&] { return check_batchnorm(rng); });
    merge(GradCheckResult{"relu"}, [&] { return check_relu(rng); });
    merge(GradCheckResult{"sigmoid"}, [&] { return check_sigmoid(rng); });
    merge(GradCheckResult{"upsample2x"}, [&] { return check_upsample(rng); });
    merge(GradCheckResult{"concat"}, [&] { return check_concat(rng); });
    merge(GradCheckResult{"add"}, [&] { return check_add(rng); });
    merge(GradCheckResult{"mse_loss"}, [&] { return check_mse(rng); });
    GradCheckResult units{"residual_unit"};
    for (const auto& [spec, shape] : {std::pair{ResidualUnitSpec{"down", 2, 4, 2, true, 1}, Shape{2, 2, 8, 8}},
                                      std::pair{ResidualUnitSpec{"stem", 3, 4, 1, false, 1}, Shape{2, 3, 6, 6}},
                                      std::pair{ResidualUnitSpec{"same", 3, 3, 1, true, 1}, Shape{1, 3, 6, 6}}}) {
        const GradCheckResult one = check_residual_unit(rng, spec, shape);
        units.max_rel_error = std::max(units.max_rel_error, one.max_rel_error);
        units.checked += one.checked;
        units.skipped += one.skipped;
    }
    results.push_back(units);
    results.push_back(check_full_model(rng, 1.0 / 16.0, options.model_params));
    return results;
}

inline double tolerance_for(const GradCheckResult& r) {
    return r.name == "full_model" ? kModelTolerance : kPrimitiveTolerance;
}

}  // namespace resunet::check
