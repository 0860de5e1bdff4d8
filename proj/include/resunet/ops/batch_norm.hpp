#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "resunet/error.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

enum class Mode { training, inference };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Per-channel batch normalization parameters and running statistics.
template <typename T>
struct BNState {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    double momentum = kBatchNormMomentum;
    double epsilon = kBatchNormEpsilon;
    Mode mode = Mode::training;

    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    static BNState fresh(std::size_t channels, Mode mode = Mode::training) {
        return {std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0)),
                std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1)),
                kBatchNormMomentum, kBatchNormEpsilon, mode};
    }
};

/// Statistics of one training batch, kept for the backward pass.
struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;      // biased (divides by N*H*W)
    std::vector<double> inv_std;  // 1 / sqrt(var + epsilon)
};

template <typename T>
struct BNGrads {
    Tensor<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

namespace detail {

inline void check_bn_channels(const Shape& s, std::size_t gamma, std::size_t beta) {
    if (gamma != s.c || beta != s.c) {
        throw ShapeError("batch norm parameters of length " + std::to_string(gamma) + "/" +
                         std::to_string(beta) + " do not match input " + s.str());
    }
}

}  // namespace detail

/// Mean and biased variance over (N, H, W), accumulated in double.
template <typename T>
BatchStats batch_statistics(const Tensor<T>& input, double epsilon) {
    const Shape& s = input.shape();
    const std::size_t count = s.n * s.plane();
    if (count < 2) {
        throw StateError("batch norm training needs N*H*W > 1, got input " + s.str());
    }
    BatchStats stats{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0),
                     std::vector<double>(s.c, 0.0)};
    for (std::size_t c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = input.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) sum += static_cast<double>(p[i]);
        }
        const double mean = sum / static_cast<double>(count);
        double sq = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* p = input.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double d = static_cast<double>(p[i]) - mean;
                sq += d * d;
            }
        }
        stats.mean[c] = mean;
        stats.var[c] = sq / static_cast<double>(count);
        stats.inv_std[c] = 1.0 / std::sqrt(stats.var[c] + epsilon);
    }
    return stats;
}

/// Applies y = x * scale[c] + shift[c] per channel.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& input, std::span<const double> scale,
                         std::span<const double> shift) {
    const Shape& s = input.shape();
    Tensor<T> out(s);
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T a = static_cast<T>(scale[c]);
            const T b = static_cast<T>(shift[c]);
            const T* src = input.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * a + b;
        }
    }
    return out;
}

/// Training-mode normalization with the given batch statistics.
template <typename T>
Tensor<T> batchnorm_normalize(const Tensor<T>& input, const BatchStats& stats,
                              std::span<const T> gamma, std::span<const T> beta) {
    detail::check_bn_channels(input.shape(), gamma.size(), beta.size());
    const std::size_t C = input.shape().c;
    std::vector<double> scale(C), shift(C);
    for (std::size_t c = 0; c < C; ++c) {
        scale[c] = static_cast<double>(gamma[c]) * stats.inv_std[c];
        shift[c] = static_cast<double>(beta[c]) - stats.mean[c] * scale[c];
    }
    return channel_affine(input, std::span<const double>(scale), std::span<const double>(shift));
}

/// Inference-mode normalization: a fixed per-element affine map built from
/// the running statistics, so the result does not depend on the batch.
template <typename T>
Tensor<T> batchnorm_inference(const Tensor<T>& input, std::span<const T> gamma,
                              std::span<const T> beta, std::span<const T> running_mean,
                              std::span<const T> running_var, double epsilon) {
    detail::check_bn_channels(input.shape(), gamma.size(), beta.size());
    detail::check_bn_channels(input.shape(), running_mean.size(), running_var.size());
    const std::size_t C = input.shape().c;
    std::vector<double> scale(C), shift(C);
    for (std::size_t c = 0; c < C; ++c) {
        scale[c] = static_cast<double>(gamma[c]) /
                   std::sqrt(static_cast<double>(running_var[c]) + epsilon);
        shift[c] = static_cast<double>(beta[c]) - static_cast<double>(running_mean[c]) * scale[c];
    }
    return channel_affine(input, std::span<const double>(scale), std::span<const double>(shift));
}

/// running <- momentum * running + (1 - momentum) * batch
template <typename T>
void update_running_statistics(const BatchStats& stats, std::span<T> running_mean,
                               std::span<T> running_var, double momentum) {
    for (std::size_t c = 0; c < running_mean.size(); ++c) {
        running_mean[c] = static_cast<T>(momentum * static_cast<double>(running_mean[c]) +
                                         (1.0 - momentum) * stats.mean[c]);
        running_var[c] = static_cast<T>(momentum * static_cast<double>(running_var[c]) +
                                        (1.0 - momentum) * stats.var[c]);
    }
}

/// Full batch-statistics gradient, including the dependence of the mean and
/// variance on every input element:
///   dx = gamma * inv_std / M * (M * g - sum(g) - xhat * sum(g * xhat))
template <typename T>
BNGrads<T> batchnorm_backward(const Tensor<T>& input, const BatchStats& stats,
                              std::span<const T> gamma, const Tensor<T>& grad_out) {
    const Shape& s = input.shape();
    if (grad_out.shape() != s) {
        throw ShapeError("batch norm grad_out " + grad_out.shape().str() + " does not match input " +
                         s.str());
    }
    detail::check_bn_channels(s, gamma.size(), gamma.size());
    const double M = static_cast<double>(s.n * s.plane());
    BNGrads<T> grads{Tensor<T>(s), std::vector<T>(s.c), std::vector<T>(s.c)};
    for (std::size_t c = 0; c < s.c; ++c) {
        const double mean = stats.mean[c];
        const double inv_std = stats.inv_std[c];
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* x = input.plane(n, c);
            const T* g = grad_out.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double gi = static_cast<double>(g[i]);
                sum_g += gi;
                sum_gx += gi * (static_cast<double>(x[i]) - mean) * inv_std;
            }
        }
        grads.beta[c] = static_cast<T>(sum_g);
        grads.gamma[c] = static_cast<T>(sum_gx);
        const double k = static_cast<double>(gamma[c]) * inv_std / M;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* x = input.plane(n, c);
            const T* g = grad_out.plane(n, c);
            T* dx = grads.input.plane(n, c);
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double xhat = (static_cast<double>(x[i]) - mean) * inv_std;
                dx[i] = static_cast<T>(k * (M * static_cast<double>(g[i]) - sum_g - xhat * sum_gx));
            }
        }
    }
    return grads;
}

/// Mode-dispatching forward. Training mode normalizes with batch statistics
/// and updates the running statistics in `state`.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BNState<T>& state) {
    detail::check_bn_channels(input.shape(), state.gamma.size(), state.beta.size());
    detail::check_bn_channels(input.shape(), state.running_mean.size(), state.running_var.size());
    if (state.mode == Mode::inference) {
        return batchnorm_inference(input, std::span<const T>(state.gamma),
                                   std::span<const T>(state.beta),
                                   std::span<const T>(state.running_mean),
                                   std::span<const T>(state.running_var), state.epsilon);
    }
    const BatchStats stats = batch_statistics(input, state.epsilon);
    Tensor<T> out = batchnorm_normalize(input, stats, std::span<const T>(state.gamma),
                                        std::span<const T>(state.beta));
    update_running_statistics(stats, std::span<T>(state.running_mean),
                              std::span<T>(state.running_var), state.momentum);
    return out;
}

/// Recomputes the batch statistics of `input` and returns the training-mode
/// gradients. Undefined (and rejected) in inference mode.
template <typename T>
BNGrads<T> batchnorm_backward(const Tensor<T>& input, const BNState<T>& state,
                              const Tensor<T>& grad_out) {
    if (state.mode != Mode::training) {
        throw StateError("batch norm backward is only defined in training mode");
    }
    detail::check_bn_channels(input.shape(), state.gamma.size(), state.beta.size());
    return batchnorm_backward(input, batch_statistics(input, state.epsilon),
                              std::span<const T>(state.gamma), grad_out);
}

}  // namespace resunet
