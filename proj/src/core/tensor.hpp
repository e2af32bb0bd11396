// Dense row-major tensor of rank <= 4, layout [batch,] channels x height x width.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace occ {

using Shape = std::vector<int>;

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        os << (i ? "x" : "") << s[i];
    }
    os << "]";
    return os.str();
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_size(shape_)), T{});
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_)) {
            throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Rank-specific indexers; hot loops use raw pointers instead.
    T& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    const T& at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    T& at(int n, int c, int y, int x) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& at(int n, int c, int y, int x) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != shape_size(shape_)) {
            throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                             " changes element count");
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 4) {
            throw ShapeError("tensor rank must be 1..4, got " + shape_str(shape_));
        }
        for (int d : shape_) {
            if (d <= 0) {
                throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Finite-output contract: ops call this on their results so NaN/Inf surfaces
// as an error instead of propagating. The scan compares |v| against the type
// maximum, which vectorizes (NaN compares false, Inf exceeds the maximum).
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
    const T limit = std::numeric_limits<T>::max();
    const T* d = t.data();
    const std::size_t n = t.size();
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ok += (d[i] <= limit) & (d[i] >= -limit) ? 1u : 0u;
    }
    if (ok != n) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(static_cast<double>(d[i]))) {
                throw NumericError(std::string(op) + ": non-finite value at flat index " +
                                   std::to_string(i));
            }
        }
    }
}

template <typename T>
void ensure_finite_scalar(T v, const char* op) {
    if (!std::isfinite(static_cast<double>(v))) {
        throw NumericError(std::string(op) + ": non-finite result");
    }
}

}  // namespace occ
