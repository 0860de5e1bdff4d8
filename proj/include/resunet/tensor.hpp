#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "resunet/error.hpp"

namespace resunet {

/// Extents of a rank-4 tensor in batch x channel x height x width order.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

/// Dense NCHW tensor with an optional gradient buffer of the same length.
///
/// Storage is a single contiguous row-major array. The scalar type is a
/// template parameter so the same kernels serve float32 production runs and
/// float64 gradient checks.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape_.numel()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
        }
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() & noexcept { return data_; }
    std::span<const T> data() const& noexcept { return data_; }
    std::span<const T> data() && = delete;
    const std::vector<T>& values() const noexcept { return data_; }

    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }

    /// Pointer to the first element of channel plane (n, c).
    T* plane(std::size_t n, std::size_t c) noexcept {
        return data_.data() + (n * shape_.c + c) * shape_.plane();
    }
    const T* plane(std::size_t n, std::size_t c) const noexcept {
        return data_.data() + (n * shape_.c + c) * shape_.plane();
    }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
        assert(n < shape_.n && c < shape_.c && y < shape_.h && x < shape_.w);
        return data_[offset(n, c, y, x)];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        assert(n < shape_.n && c < shape_.c && y < shape_.h && x < shape_.w);
        return data_[offset(n, c, y, x)];
    }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    // Gradient buffer.

    bool has_grad() const noexcept { return grad_.has_value(); }

    /// Allocates a zeroed gradient buffer if none exists yet.
    std::span<T> ensure_grad() {
        if (!grad_) grad_.emplace(data_.size(), T(0));
        return *grad_;
    }
    std::span<T> grad() {
        if (!grad_) throw StateError("tensor has no gradient buffer");
        return *grad_;
    }
    std::span<const T> grad() const {
        if (!grad_) throw StateError("tensor has no gradient buffer");
        return *grad_;
    }
    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }
    void drop_grad() noexcept { grad_.reset(); }

    /// Copies values into a tensor of another scalar type; the gradient
    /// buffer is not carried over.
    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    /// Reinterprets the same values under a new shape of equal element count.
    Tensor reshaped(Shape s) const {
        if (s.numel() != shape_.numel()) {
            throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
        }
        return Tensor(s, data_);
    }

private:
    Shape shape_{};
    std::vector<T> data_;
    std::optional<std::vector<T>> grad_;
};

/// Bitwise equality on shape and data, ignoring gradient buffers.
template <typename T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() &&
           (a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(T)) == 0);
}

}  // namespace resunet
