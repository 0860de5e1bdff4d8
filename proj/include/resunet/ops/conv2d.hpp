#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "resunet/error.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

/// Stride and symmetric zero padding of a square-kernel convolution.
struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// A convolution kernel shaped (C_out, C_in, k, k) together with its geometry.
template <typename T>
struct ConvParams {
    Tensor<T> kernel;
    std::size_t stride = 1;
    std::size_t padding = 0;

    ConvGeometry geometry() const { return {stride, padding}; }
};

template <typename T>
struct ConvGrads {
    Tensor<T> input;   // empty when the input gradient was not requested
    Tensor<T> kernel;
};

/// Output extent along one axis; zero-sized when the kernel does not fit.
constexpr std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                      std::size_t pad) noexcept {
    return in + 2 * pad < k ? 0 : (in + 2 * pad - k) / stride + 1;
}

namespace detail {

template <typename T>
using RowMajorMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMajorMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix<T>>;

inline Shape conv_output_shape(const Shape& in, const Shape& kernel, const ConvGeometry& g) {
    if (kernel.h != kernel.w || kernel.h == 0) {
        throw ShapeError("convolution kernel must be square and non-empty, got " + kernel.str());
    }
    if (in.c != kernel.c) {
        throw ShapeError("convolution input " + in.str() + " has " + std::to_string(in.c) +
                         " channels but kernel " + kernel.str() + " expects " +
                         std::to_string(kernel.c));
    }
    if (g.stride == 0) throw ShapeError("convolution stride must be positive");
    const std::size_t ho = conv_out_extent(in.h, kernel.h, g.stride, g.padding);
    const std::size_t wo = conv_out_extent(in.w, kernel.w, g.stride, g.padding);
    if (ho == 0 || wo == 0) {
        throw ShapeError("convolution kernel " + kernel.str() + " does not fit input " + in.str());
    }
    return {in.n, kernel.n, ho, wo};
}

/// Unfolds one (C, H, W) image into a (C*k*k, Ho*Wo) row-major patch matrix.
template <typename T>
void im2col(const T* image, const Shape& in, std::size_t k, const ConvGeometry& g, std::size_t ho,
            std::size_t wo, T* col) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const auto stride = static_cast<std::ptrdiff_t>(g.stride);
    const auto H = static_cast<std::ptrdiff_t>(in.h);
    const auto W = static_cast<std::ptrdiff_t>(in.w);
    for (std::size_t c = 0; c < in.c; ++c) {
        const T* src = image + c * in.plane();
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad +
                                              static_cast<std::ptrdiff_t>(ky);
                    T* dst = row + oy * wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* line = src + iy * W;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride - pad +
                                                  static_cast<std::ptrdiff_t>(kx);
                        dst[ox] = (ix < 0 || ix >= W) ? T(0) : line[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters a patch matrix back onto a zeroed image.
template <typename T>
void col2im(const T* col, const Shape& in, std::size_t k, const ConvGeometry& g, std::size_t ho,
            std::size_t wo, T* image) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const auto stride = static_cast<std::ptrdiff_t>(g.stride);
    const auto H = static_cast<std::ptrdiff_t>(in.h);
    const auto W = static_cast<std::ptrdiff_t>(in.w);
    for (std::size_t c = 0; c < in.c; ++c) {
        T* dst = image + c * in.plane();
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * ho * wo;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad +
                                              static_cast<std::ptrdiff_t>(ky);
                    if (iy < 0 || iy >= H) continue;
                    T* line = dst + iy * W;
                    const T* src = row + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride - pad +
                                                  static_cast<std::ptrdiff_t>(kx);
                        if (ix >= 0 && ix < W) line[ix] += src[ox];
                    }
                }
            }
        }
    }
}

inline bool is_pointwise(std::size_t k, const ConvGeometry& g) {
    return k == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace detail

/// Direct 2-D cross-correlation over a zero-padded input.
///
/// Each image of the batch is lowered to a patch matrix and multiplied by the
/// (C_out, C_in*k*k) kernel matrix. Images are processed in batch order so
/// results are independent of batch composition.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& g) {
    const Shape& in = input.shape();
    const Shape out_shape = detail::conv_output_shape(in, kernel.shape(), g);
    const std::size_t k = kernel.shape().h;
    const std::size_t rows = in.c * k * k;
    const std::size_t cols = out_shape.h * out_shape.w;

    Tensor<T> out(out_shape);
    detail::ConstMatrixMap<T> weights(kernel.ptr(), static_cast<Eigen::Index>(out_shape.c),
                                      static_cast<Eigen::Index>(rows));
    std::vector<T> patches;
    const bool pointwise = detail::is_pointwise(k, g);
    if (!pointwise) patches.resize(rows * cols);

    for (std::size_t n = 0; n < in.n; ++n) {
        const T* lowered = input.plane(n, 0);
        if (!pointwise) {
            detail::im2col(input.plane(n, 0), in, k, g, out_shape.h, out_shape.w, patches.data());
            lowered = patches.data();
        }
        detail::ConstMatrixMap<T> col(lowered, static_cast<Eigen::Index>(rows),
                                      static_cast<Eigen::Index>(cols));
        detail::MatrixMap<T> dst(out.plane(n, 0), static_cast<Eigen::Index>(out_shape.c),
                                 static_cast<Eigen::Index>(cols));
        dst.noalias() = weights * col;
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& params) {
    return conv2d_forward(input, params.kernel, params.geometry());
}

/// Gradients of sum(grad_out * conv2d_forward(input, kernel)) with respect to
/// the input and the kernel. The input gradient is skipped when
/// `need_input_grad` is false (first layer of a network).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& g,
                             const Tensor<T>& grad_out, bool need_input_grad = true) {
    const Shape& in = input.shape();
    const Shape out_shape = detail::conv_output_shape(in, kernel.shape(), g);
    if (grad_out.shape() != out_shape) {
        throw ShapeError("convolution grad_out " + grad_out.shape().str() +
                         " does not match forward output " + out_shape.str());
    }
    const std::size_t k = kernel.shape().h;
    const std::size_t rows = in.c * k * k;
    const std::size_t cols = out_shape.h * out_shape.w;
    const auto rows_i = static_cast<Eigen::Index>(rows);
    const auto cols_i = static_cast<Eigen::Index>(cols);
    const auto cout_i = static_cast<Eigen::Index>(out_shape.c);

    ConvGrads<T> grads{need_input_grad ? Tensor<T>(in) : Tensor<T>(), Tensor<T>(kernel.shape())};
    detail::ConstMatrixMap<T> weights(kernel.ptr(), cout_i, rows_i);
    detail::MatrixMap<T> grad_weights(grads.kernel.ptr(), cout_i, rows_i);

    const bool pointwise = detail::is_pointwise(k, g);
    std::vector<T> patches(pointwise ? 0 : rows * cols);
    std::vector<T> grad_patches(pointwise || !need_input_grad ? 0 : rows * cols);

    for (std::size_t n = 0; n < in.n; ++n) {
        detail::ConstMatrixMap<T> dout(grad_out.plane(n, 0), cout_i, cols_i);
        const T* lowered = input.plane(n, 0);
        if (!pointwise) {
            detail::im2col(input.plane(n, 0), in, k, g, out_shape.h, out_shape.w, patches.data());
            lowered = patches.data();
        }
        detail::ConstMatrixMap<T> col(lowered, rows_i, cols_i);
        grad_weights.noalias() += dout * col.transpose();

        if (!need_input_grad) continue;
        if (pointwise) {
            detail::MatrixMap<T> dcol(grads.input.plane(n, 0), rows_i, cols_i);
            dcol.noalias() = weights.transpose() * dout;
        } else {
            detail::MatrixMap<T> dcol(grad_patches.data(), rows_i, cols_i);
            dcol.noalias() = weights.transpose() * dout;
            detail::col2im(grad_patches.data(), in, k, g, out_shape.h, out_shape.w,
                           grads.input.plane(n, 0));
        }
    }
    return grads;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out) {
    return conv2d_backward(input, params.kernel, params.geometry(), grad_out);
}

}  // namespace resunet
