#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "attendseg/error.hpp"

namespace attendseg {

/// Ordered tensor extents, rank 1 to 4. Activations are N,H,W,C.
class Shape {
public:
    Shape() : dims_{1} {}
    Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
    explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
        if (dims_.empty() || dims_.size() > 4) {
            throw ShapeError("shape rank must be 1..4, got " + std::to_string(dims_.size()));
        }
        numel_ = 1;
        for (std::size_t d : dims_) {
            if (d == 0) throw ShapeError("shape " + str() + " has a zero extent");
            if (numel_ > std::numeric_limits<std::uint64_t>::max() / d) {
                throw ShapeError("element count of shape " + str() + " overflows 64 bits");
            }
            numel_ *= d;
        }
    }

    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::uint64_t numel() const noexcept { return numel_; }

    bool operator==(const Shape& o) const noexcept { return dims_ == o.dims_; }
    bool operator!=(const Shape& o) const noexcept { return dims_ != o.dims_; }

    std::string str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
        os << ']';
        return os.str();
    }

private:
    std::vector<std::size_t> dims_;
    std::uint64_t numel_ = 1;
};

/// Dense row-major tensor. `Tensor` is the f32 compute type; `F64Tensor`
/// exists for finite-difference verification.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() : shape_{1}, data_(1, T(0)) {}
    explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel(), T(0)) {}
    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_.numel()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// NHWC element access for rank-4 tensors.
    T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }
    const T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return data_[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return BasicTensor<U>(shape_, std::move(out));
    }

    BasicTensor reshaped(Shape s) const {
        if (s.numel() != shape_.numel()) {
            throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
        }
        return BasicTensor(std::move(s), data_);
    }

    bool operator==(const BasicTensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using F64Tensor = BasicTensor<double>;

template <typename T = float>
BasicTensor<T> zeros(const Shape& shape) {
    return BasicTensor<T>(shape);
}

template <typename T>
BasicTensor<T> zeros_like(const BasicTensor<T>& t) {
    return BasicTensor<T>(t.shape());
}

template <typename T = float>
BasicTensor<T> full(const Shape& shape, T value) {
    return BasicTensor<T>(shape, std::vector<T>(shape.numel(), value));
}

enum class ElementwiseOp { add, mul, max };
enum class ReduceOp { sum, mean, max };

namespace detail {

// Number of elements b repeats over when broadcast against a, or 0 if the
// shapes are incompatible. b may carry leading unit extents and must match
// the trailing extents of a.
inline std::size_t broadcast_period(const Shape& a, const Shape& b) {
    if (a == b) return a.numel();
    std::vector<std::size_t> bd = b.dims();
    while (bd.size() > 1 && bd.front() == 1) bd.erase(bd.begin());
    const auto& ad = a.dims();
    if (bd.size() > ad.size()) return 0;
    if (!std::equal(bd.begin(), bd.end(), ad.end() - static_cast<std::ptrdiff_t>(bd.size()))) return 0;
    return static_cast<std::size_t>(b.numel());
}

}  // namespace detail

/// Pointwise a (op) b. b is either the same shape as a or a trailing-dims
/// tensor (e.g. [1,1,1,C] or [C]) repeated over a's leading axes.
template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const std::size_t period = detail::broadcast_period(a.shape(), b.shape());
    if (period == 0) {
        throw ShapeError("elementwise: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
    }
    BasicTensor<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    const std::size_t n = a.size();
    for (std::size_t i = 0, j = 0; i < n; ++i, j = (j + 1 == period ? 0 : j + 1)) {
        switch (op) {
            case ElementwiseOp::add: po[i] = pa[i] + pb[j]; break;
            case ElementwiseOp::mul: po[i] = pa[i] * pb[j]; break;
            case ElementwiseOp::max: po[i] = std::max(pa[i], pb[j]); break;
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::add, a, b);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return elementwise(ElementwiseOp::mul, a, b);
}

/// Reduces along one axis; the result drops that axis (a rank-1 input
/// reduces to shape [1]).
template <typename T>
BasicTensor<T> reduce(ReduceOp op, const BasicTensor<T>& t, std::size_t axis) {
    const auto& dims = t.shape().dims();
    if (axis >= dims.size()) {
        throw ShapeError("reduce: axis " + std::to_string(axis) + " out of range for " + t.shape().str());
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
    const std::size_t extent = dims[axis];

    std::vector<std::size_t> out_dims;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i != axis) out_dims.push_back(dims[i]);
    }
    if (out_dims.empty()) out_dims.push_back(1);
    BasicTensor<T> out{Shape(out_dims)};

    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            T acc = t[o * extent * inner + i];
            for (std::size_t e = 1; e < extent; ++e) {
                const T v = t[(o * extent + e) * inner + i];
                acc = op == ReduceOp::max ? std::max(acc, v) : acc + v;
            }
            if (op == ReduceOp::mean) acc /= static_cast<T>(extent);
            out[o * inner + i] = acc;
        }
    }
    return out;
}

}  // namespace attendseg
