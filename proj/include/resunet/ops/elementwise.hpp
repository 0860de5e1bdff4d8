#pragma once

#include <cmath>
#include <cstddef>

#include "resunet/error.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] < T(0) ? T(0) : input[i];
    return out;
}

/// Passes the gradient where the forward input was strictly positive; the
/// subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    if (input.shape() != grad_out.shape()) {
        throw ShapeError("relu grad_out " + grad_out.shape().str() + " does not match input " +
                         input.shape().str());
    }
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? grad_out[i] : T(0);
    return out;
}

template <typename T>
T sigmoid(T x) {
    // Split on sign so exp never overflows.
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid(input[i]);
    return out;
}

/// Takes the forward *output* y: dx = grad_out * y * (1 - y).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
    if (output.shape() != grad_out.shape()) {
        throw ShapeError("sigmoid grad_out " + grad_out.shape().str() + " does not match output " +
                         output.shape().str());
    }
    Tensor<T> out(output.shape());
    for (std::size_t i = 0; i < output.size(); ++i) {
        out[i] = grad_out[i] * output[i] * (T(1) - output[i]);
    }
    return out;
}

/// Elementwise sum. The backward pass hands grad_out unchanged to both
/// operands, so no separate backward function exists.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("cannot add tensors of shape " + a.shape().str() + " and " + b.shape().str());
    }
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

/// a += b
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("cannot add tensors of shape " + a.shape().str() + " and " + b.shape().str());
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace resunet
