#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cmx/rng.hpp"
#include "cmx/tensor.hpp"

namespace cmx {

/// Learnable tensor plus its gradient accumulator.
template <typename T>
struct ParamT {
    TensorT<T> value;
    TensorT<T> grad;

    ParamT() = default;
    explicit ParamT(TensorT<T> v) : value(std::move(v)), grad(value.shape()) {}
    explicit ParamT(Shape shape) : value(shape), grad(std::move(shape)) {}

    void reset_grad() {
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = T(0);
    }
};

using Param = ParamT<float>;

template <typename T>
struct NamedParam {
    std::string name;
    ParamT<T>* param;
};

/// Uniform init in +-sqrt(1/fan_in), the library-wide weight scheme.
template <typename T>
void init_uniform(ParamT<T>& p, std::size_t fan_in, Rng& rng) {
    const float bound = std::sqrt(1.0f / static_cast<float>(fan_in));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        p.value[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
}

template <typename T>
void init_zero(ParamT<T>& p) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = T(0);
}

/// Copy values between same-structure param sets enumerated by fields().
template <typename To, typename From>
void cast_param_values(const std::vector<NamedParam<From>>& src,
                       const std::vector<NamedParam<To>>& dst) {
    if (src.size() != dst.size()) {
        throw ShapeError("param field count mismatch: " + std::to_string(src.size()) + " vs " +
                         std::to_string(dst.size()));
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i].param->value = cast<To>(src[i].param->value);
        dst[i].param->grad = TensorT<To>(dst[i].param->value.shape());
    }
}

}  // namespace cmx
