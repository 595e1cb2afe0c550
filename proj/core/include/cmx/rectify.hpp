#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cmx/ops.hpp"
#include "cmx/param.hpp"
#include "cmx/tensor.hpp"

namespace cmx {

enum class PoolMode { Both, AvgOnly, MaxOnly };
enum class RectifyMode { Both, ChannelOnly, SpatialOnly };

/// (lambda_c, lambda_s) for a rectification mode; Both uses the paper defaults.
std::pair<float, float> lambdas_for(RectifyMode mode);

/// Weights of one cross-modal feature rectification block at channel count C.
/// Channel path: pooled descriptor -> MLP (hidden C, relu) -> sigmoid -> 2C weights.
/// Spatial path: concat -> 1x1 conv (hidden C, relu) -> 1x1 conv -> sigmoid -> 2 maps.
template <typename T>
struct RectifyParamsT {
    ParamT<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    ParamT<T> sconv_w1, sconv_b1, sconv_w2, sconv_b2;
    T lambda_c = T(0.5);
    T lambda_s = T(0.5);
    PoolMode pool_mode = PoolMode::Both;
    std::uint32_t channels = 0;

    RectifyParamsT() = default;
    RectifyParamsT(std::uint32_t c, PoolMode pm = PoolMode::Both);

    std::uint32_t pooled_dim() const {
        return pool_mode == PoolMode::Both ? 4 * channels : 2 * channels;
    }

    /// Draws every weight in fields() order; biases stay zero.
    void init(Rng& rng);
    std::vector<NamedParam<T>> fields();
    void reset_grads();
};

using RectifyParams = RectifyParamsT<float>;

template <typename T>
struct ChannelWeightsT {
    TensorT<T> w_rgb, w_x;  // each C, entries in (0,1)
};

template <typename T>
struct SpatialWeightsT {
    TensorT<T> m_rgb, m_x;  // each H x W, entries in (0,1)
};

using ChannelWeights = ChannelWeightsT<float>;
using SpatialWeights = SpatialWeightsT<float>;

template <typename T>
struct CmFrmCache {
    bool valid = false;
    bool ran_channel = false, ran_spatial = false;
    TensorT<T> rgb, x;
    // channel path
    TensorT<T> pooled;   // 1 x pooled_dim
    TensorT<T> h1_pre;   // 1 x C
    TensorT<T> weights;  // 1 x 2C, post-sigmoid
    std::vector<std::uint32_t> argmax_rgb, argmax_x;
    ChannelWeightsT<T> cw;
    // spatial path
    TensorT<T> cat;     // H x W x 2C
    TensorT<T> s1_pre;  // H x W x C
    TensorT<T> fmap;    // H x W x 2, post-sigmoid
    SpatialWeightsT<T> sw;
};

template <typename T>
ChannelWeightsT<T> channel_weights(const TensorT<T>& rgb, const TensorT<T>& x,
                                   const RectifyParamsT<T>& p, CmFrmCache<T>* cache = nullptr);

template <typename T>
std::pair<TensorT<T>, TensorT<T>> channel_rectify(const TensorT<T>& rgb, const TensorT<T>& x,
                                                  const ChannelWeightsT<T>& cw);

template <typename T>
SpatialWeightsT<T> spatial_weights(const TensorT<T>& rgb, const TensorT<T>& x,
                                   const RectifyParamsT<T>& p, CmFrmCache<T>* cache = nullptr);

template <typename T>
std::pair<TensorT<T>, TensorT<T>> spatial_rectify(const TensorT<T>& rgb, const TensorT<T>& x,
                                                  const SpatialWeightsT<T>& sw);

/// Full rectification: out = in + lambda_c * rec_c + lambda_s * rec_s, where each
/// rectification term is the weighted feature of the other modality. A path with
/// zero lambda is never evaluated.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> cm_frm(const TensorT<T>& rgb, const TensorT<T>& x,
                                         const RectifyParamsT<T>& p,
                                         CmFrmCache<T>* cache = nullptr);

/// Accumulates into p grads; returns (d_rgb, d_x). Requires a cache from cm_frm.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> cm_frm_backward(const CmFrmCache<T>& cache,
                                                  RectifyParamsT<T>& p, const TensorT<T>& d_rgb_out,
                                                  const TensorT<T>& d_x_out);

}  // namespace cmx
