#pragma once

#include <cstddef>

#include "resunet/error.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

template <typename T>
struct LossResult {
    double value = 0.0;
    Tensor<T> grad;
};

/// Mean squared error over all N*C*H*W elements:
///   loss = mean((pred - target)^2),  grad = 2 (pred - target) / numel.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mse_loss prediction " + pred.shape().str() + " and target " +
                         target.shape().str() + " differ in shape");
    }
    LossResult<T> result{0.0, Tensor<T>(pred.shape())};
    if (pred.empty()) return result;
    const double count = static_cast<double>(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        sum += d * d;
        result.grad[i] = static_cast<T>(2.0 * d / count);
    }
    result.value = sum / count;
    return result;
}

}  // namespace resunet
