#include "cmx/tensor.hpp"

#include <cmath>

namespace cmx {

std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) return false;
    }
    return true;
}

template bool all_finite<float>(const TensorT<float>&);
template bool all_finite<double>(const TensorT<double>&);

}  // namespace cmx
