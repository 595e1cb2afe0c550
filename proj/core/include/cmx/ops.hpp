#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cmx/tensor.hpp"

namespace cmx {

enum class Pointwise { Sigmoid, Relu, Gelu };
enum class PoolKind { Avg, Max };

// --- elementwise -----------------------------------------------------------

template <typename T>
TensorT<T> pointwise(Pointwise kind, const TensorT<T>& x);

/// d(pointwise)/dx evaluated at the saved input, times upstream.
template <typename T>
TensorT<T> pointwise_backward(Pointwise kind, const TensorT<T>& x, const TensorT<T>& upstream);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s);
template <typename T>
void axpy(T a, const TensorT<T>& x, TensorT<T>& y);  // y += a*x
template <typename T>
T sum(const TensorT<T>& a);

// --- softmax ---------------------------------------------------------------

/// Softmax along the last axis with max-subtraction.
template <typename T>
TensorT<T> softmax_last(const TensorT<T>& x);

/// Backward from the softmax *output* y: dx = y .* (up - rowsum(up .* y)).
template <typename T>
TensorT<T> softmax_last_backward(const TensorT<T>& y, const TensorT<T>& upstream);

// --- matmul / linear -------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);  // (M.K)x(K.N)
template <typename T>
TensorT<T> matmul_at(const TensorT<T>& a, const TensorT<T>& b);  // A^T B: (K.M)x(K.N)
template <typename T>
TensorT<T> matmul_bt(const TensorT<T>& a, const TensorT<T>& b);  // A B^T: (M.K)x(N.K)

/// y = x.W + b with x: N x Cin, W: Cin x Cout, b: Cout (b optional).
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b);

/// Accumulates (+=) into any non-null output.
template <typename T>
void linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& upstream,
                     TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db);

// --- convolutions ----------------------------------------------------------

/// Per-pixel channel mix: x H x W x Cin, w Cin x Cout. Evaluates exactly as
/// flatten + linear (same summation order).
template <typename T>
TensorT<T> conv1x1(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b);
template <typename T>
void conv1x1_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& upstream,
                      TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db);

/// Depthwise 3x3, zero padding 1, shape preserved. w: 3 x 3 x C, b: C.
template <typename T>
TensorT<T> dwconv3x3(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b);
template <typename T>
void dwconv3x3_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& upstream,
                        TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db);

// --- pooling / resampling --------------------------------------------------

/// Global per-channel reduction of an H x W x C map to a C vector.
/// For Max, argmax (flat h*W+w per channel) is written when requested.
template <typename T>
TensorT<T> global_pool(PoolKind kind, const TensorT<T>& x,
                       std::vector<std::uint32_t>* argmax = nullptr);
template <typename T>
void global_avg_pool_backward(const Shape& in_shape, const TensorT<T>& upstream, TensorT<T>* dx);
template <typename T>
void global_max_pool_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax,
                              const TensorT<T>& upstream, TensorT<T>* dx);

/// Non-overlapping s x s mean pooling; H, W must divide by s.
template <typename T>
TensorT<T> avgpool(const TensorT<T>& x, std::uint32_t s);
template <typename T>
void avgpool_backward(const Shape& in_shape, std::uint32_t s, const TensorT<T>& upstream,
                      TensorT<T>* dx);

/// Nearest-neighbour upsampling by integer factor s.
template <typename T>
TensorT<T> upsample_nearest(const TensorT<T>& x, std::uint32_t s);
template <typename T>
void upsample_nearest_backward(const Shape& in_shape, std::uint32_t s, const TensorT<T>& upstream,
                               TensorT<T>* dx);

// --- concat / slicing ------------------------------------------------------

/// Concatenate along the last axis; all leading extents must agree.
template <typename T>
TensorT<T> concat_last(const TensorT<T>& a, const TensorT<T>& b);
/// Splits an upstream gradient of concat_last back into the two operands (+=).
template <typename T>
void concat_last_backward(const TensorT<T>& upstream, TensorT<T>* da, TensorT<T>* db);

/// Columns [c0, c1) of the last axis.
template <typename T>
TensorT<T> slice_last(const TensorT<T>& x, std::uint32_t c0, std::uint32_t c1);
/// dx[..., c0:c1] += upstream
template <typename T>
void slice_last_backward(const TensorT<T>& upstream, std::uint32_t c0, TensorT<T>* dx);

// --- broadcast products (rectification) -------------------------------------

/// out[h,w,c] = x[h,w,c] * v[c]
template <typename T>
TensorT<T> mul_channel_vec(const TensorT<T>& x, const TensorT<T>& v);
template <typename T>
void mul_channel_vec_backward(const TensorT<T>& x, const TensorT<T>& v, const TensorT<T>& upstream,
                              TensorT<T>* dx, TensorT<T>* dv);

/// out[h,w,c] = x[h,w,c] * m[h,w]
template <typename T>
TensorT<T> mul_spatial_map(const TensorT<T>& x, const TensorT<T>& m);
template <typename T>
void mul_spatial_map_backward(const TensorT<T>& x, const TensorT<T>& m, const TensorT<T>& upstream,
                              TensorT<T>* dx, TensorT<T>* dm);

}  // namespace cmx
