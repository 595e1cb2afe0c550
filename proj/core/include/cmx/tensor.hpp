#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmx {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::uint32_t>;

std::string shape_string(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major tensor, rank 1-4, last axis fastest. Image tensors are H x W x C.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_numel(shape_), T(0));
    }

    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static TensorT full(Shape shape, T v) {
        TensorT t(std::move(shape));
        for (auto& e : t.data_) e = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::uint32_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* raw() { return data_.data(); }
    const T* raw() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // (row, col) access for rank-2 tensors.
    T& at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& at2(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    // (h, w, c) access for rank-3 tensors.
    T& at3(std::size_t h, std::size_t w, std::size_t c) {
        return data_[(h * shape_[1] + w) * shape_[2] + c];
    }
    const T& at3(std::size_t h, std::size_t w, std::size_t c) const {
        return data_[(h * shape_[1] + w) * shape_[2] + c];
    }

    /// Same data, new shape; element count must be preserved.
    TensorT reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size()) {
            throw ShapeError("reshape " + shape_string(shape_) + " -> " + shape_string(shape) +
                             " changes element count");
        }
        return TensorT(std::move(shape), data_);
    }

private:
    void check_shape() const {
        if (shape_.empty() || shape_.size() > 4) {
            throw ShapeError("tensor rank must be 1-4, got shape " + shape_string(shape_));
        }
        for (auto e : shape_) {
            if (e == 0) throw ShapeError("zero extent in shape " + shape_string(shape_));
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
    return a.shape() == b.shape();
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* where) {
    if (!same_shape(a, b)) {
        throw ShapeError(std::string(where) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
    }
}

template <typename T>
void require_rank(const TensorT<T>& t, std::size_t rank, const char* where) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(where) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
    }
}

template <typename To, typename From>
TensorT<To> cast(const TensorT<From>& t) {
    std::vector<To> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
    return TensorT<To>(t.shape(), std::move(out));
}

template <typename T>
bool all_finite(const TensorT<T>& t);

}  // namespace cmx
