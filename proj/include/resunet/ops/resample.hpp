#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>

#include "resunet/error.hpp"
#include "resunet/tensor.hpp"

namespace resunet {

/// Nearest-neighbour 2x spatial replication: (N,C,H,W) -> (N,C,2H,2W).
template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& input) {
    const Shape& s = input.shape();
    Tensor<T> out({s.n, s.c, 2 * s.h, 2 * s.w});
    const std::size_t W2 = 2 * s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* src = input.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t y = 0; y < s.h; ++y) {
                T* row = dst + 2 * y * W2;
                for (std::size_t x = 0; x < s.w; ++x) {
                    row[2 * x] = row[2 * x + 1] = src[y * s.w + x];
                }
                std::copy(row, row + W2, row + W2);
            }
        }
    }
    return out;
}

/// Adjoint of upsample2x_forward: sums each 2x2 block of grad_out.
template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out) {
    const Shape& s = grad_out.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw ShapeError("upsample grad_out " + s.str() + " has odd spatial extent");
    }
    const std::size_t h = s.h / 2;
    const std::size_t w = s.w / 2;
    Tensor<T> out({s.n, s.c, h, w});
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* src = grad_out.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t y = 0; y < h; ++y) {
                const T* r0 = src + 2 * y * s.w;
                const T* r1 = r0 + s.w;
                for (std::size_t x = 0; x < w; ++x) {
                    dst[y * w + x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
                }
            }
        }
    }
    return out;
}

/// Channel concatenation, channels of `a` first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw ShapeError("cannot concatenate " + sa.str() + " and " + sb.str() +
                         " along channels: batch or spatial extents differ");
    }
    Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::size_t block_a = sa.c * sa.plane();
    const std::size_t block_b = sb.c * sb.plane();
    for (std::size_t n = 0; n < sa.n; ++n) {
        T* dst = out.ptr() + n * (block_a + block_b);
        std::copy_n(a.ptr() + n * block_a, block_a, dst);
        std::copy_n(b.ptr() + n * block_b, block_b, dst + block_a);
    }
    return out;
}

/// Splits grad_out at channel `channels_a` into the gradients of the two
/// concatenated operands.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& grad_out, std::size_t channels_a) {
    const Shape& s = grad_out.shape();
    if (channels_a > s.c) {
        throw ShapeError("concat split at channel " + std::to_string(channels_a) +
                         " exceeds grad_out " + s.str());
    }
    Tensor<T> ga({s.n, channels_a, s.h, s.w});
    Tensor<T> gb({s.n, s.c - channels_a, s.h, s.w});
    const std::size_t block_a = channels_a * s.plane();
    const std::size_t block_b = (s.c - channels_a) * s.plane();
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = grad_out.ptr() + n * (block_a + block_b);
        std::copy_n(src, block_a, ga.ptr() + n * block_a);
        std::copy_n(src + block_a, block_b, gb.ptr() + n * block_b);
    }
    return {std::move(ga), std::move(gb)};
}

}  // namespace resunet
