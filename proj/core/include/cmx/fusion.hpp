#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cmx/ops.hpp"
#include "cmx/param.hpp"
#include "cmx/tensor.hpp"

namespace cmx {

enum class FfmMode { Full, Stage2Only, SelfAttn, Avg };

/// Per-path weights of the information-exchange stage. The residual and
/// interactive embeddings keep the channel width C; key/value projections act
/// on contiguous C/n_heads slices of the interactive vector.
template <typename T>
struct FfmPathParamsT {
    ParamT<T> e_res_w, e_res_b;
    ParamT<T> e_inter_w, e_inter_b;
    std::vector<ParamT<T>> k_proj, v_proj;  // per head, C_head x C_head, no bias
    ParamT<T> out_w, out_b;                 // 2C -> C
};

template <typename T>
struct FfmParamsT {
    FfmPathParamsT<T> rgb, x;
    ParamT<T> fuse_w1, fuse_b1;  // 2C -> C
    ParamT<T> fuse_dw, fuse_db;  // depthwise 3x3
    ParamT<T> fuse_w2, fuse_b2;  // C -> C
    std::uint32_t channels = 0;
    std::uint32_t n_heads = 1;

    FfmParamsT() = default;
    FfmParamsT(std::uint32_t c, std::uint32_t heads);

    std::uint32_t head_dim() const { return channels / n_heads; }

    void init(Rng& rng);
    std::vector<NamedParam<T>> fields();
    void reset_grads();
};

using FfmParams = FfmParamsT<float>;

template <typename T>
struct FfmPathCache {
    TensorT<T> flat;  // N x C input
    TensorT<T> res, inter;
    std::vector<TensorT<T>> k, v, attn;  // per head; attn = softmax(K^T V)
    TensorT<T> u;                        // N x C attended result
    TensorT<T> cat;                      // N x 2C = [u | res]
};

template <typename T>
struct FfmCache {
    bool valid = false;
    FfmMode mode = FfmMode::Full;
    Shape in_shape;
    bool ran_exchange = false, ran_fuse = false;
    FfmPathCache<T> rgb, x;
    TensorT<T> fuse_cat;  // H x W x 2C
    TensorT<T> z;         // after first channel embedding
    TensorT<T> t;         // z + dwconv(z), pre-gelu
};

/// Residual and interactive embeddings of one flattened feature map.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_vectors(const TensorT<T>& feat,
                                                const FfmPathParamsT<T>& path);

/// Global context matrix K^T V of one head's interactive slice; O(N * C_head^2),
/// no N x N attention map is ever formed.
template <typename T>
TensorT<T> head_context(const TensorT<T>& inter_slice, const FfmPathParamsT<T>& path,
                        std::size_t head);

/// Information-exchange stage. With exchange_contexts, each path attends with
/// the other path's softmaxed context (cross-attention); otherwise its own.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> cross_exchange(const TensorT<T>& rgb_feat,
                                                 const TensorT<T>& x_feat, const FfmParamsT<T>& p,
                                                 bool exchange_contexts = true,
                                                 FfmCache<T>* cache = nullptr);

/// Fusion stage: mixed channel embedding with a depthwise-conv skip.
template <typename T>
TensorT<T> fuse(const TensorT<T>& rgb_ex, const TensorT<T>& x_ex, const FfmParamsT<T>& p,
                FfmCache<T>* cache = nullptr);

template <typename T>
TensorT<T> ffm(const TensorT<T>& rgb_feat, const TensorT<T>& x_feat, const FfmParamsT<T>& p,
               FfmMode mode, FfmCache<T>* cache = nullptr);

/// Accumulates into p grads; returns (d_rgb_feat, d_x_feat).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> ffm_backward(const FfmCache<T>& cache, FfmParamsT<T>& p,
                                               const TensorT<T>& d_out);

}  // namespace cmx
