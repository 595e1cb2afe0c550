#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cmx/fusion.hpp"
#include "cmx/param.hpp"
#include "cmx/rectify.hpp"
#include "cmx/tensor.hpp"

namespace cmx {

enum class SecondModality { Real, RgbCopy, Noise, None };

struct StageSpec {
    std::uint32_t in_ch = 0, out_ch = 0;
    std::uint32_t downsample = 2;  // 2 or 4
    std::uint32_t n_heads = 1;
};

struct NetworkSpec {
    std::vector<StageSpec> stages;
    std::uint32_t in_ch_rgb = 3, in_ch_x = 3;
    std::uint32_t decoder_dim = 64;
    std::uint32_t num_classes = 4;

    /// Toy default: channels (32,64,128,256), strides (4,2,2,2), heads (1,2,4,8).
    static NetworkSpec default_spec(std::uint32_t num_classes = 4, std::uint32_t in_ch_x = 3);
    /// Reduced instance for gradient checking: channels (8,16,32,64), strides
    /// (2,2,2,2) so a 16x16 input reaches 1x1 at stage 4.
    static NetworkSpec gradcheck_spec(std::uint32_t num_classes = 3);

    std::uint32_t total_downsample() const;
    void validate() const;
};

struct AblationConfig {
    bool use_cm_frm = true;
    RectifyMode rectify_mode = RectifyMode::Both;
    PoolMode pool_mode = PoolMode::Both;
    FfmMode ffm_mode = FfmMode::Full;
    SecondModality second_modality = SecondModality::Real;
};

/// One backbone stage: s x s mean downsample, then 1x1 mix, gelu, 1x1.
template <typename T>
struct StageBlockT {
    ParamT<T> w1, b1, w2, b2;
    std::uint32_t stride = 1;

    StageBlockT() = default;
    StageBlockT(std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t stride);
};

template <typename T>
struct StageCacheT {
    TensorT<T> input;   // pre-pool
    TensorT<T> pooled;  // conv1 input
    TensorT<T> h_pre;   // pre-gelu
};

template <typename T>
struct DecoderParamsT {
    std::vector<ParamT<T>> proj_w, proj_b;  // per stage, C_i -> D
    ParamT<T> cls_w, cls_b;                 // 4D -> K
};

template <typename T>
struct DecoderCacheT {
    std::vector<TensorT<T>> proj_out;  // pre-upsample
    TensorT<T> cat;                    // classifier input
};

template <typename T>
struct NetworkParamsT {
    NetworkSpec spec;
    AblationConfig cfg;

    std::optional<ParamT<T>> x_adapter_w, x_adapter_b;  // only when in_ch_x != 3
    std::vector<StageBlockT<T>> rgb_stages, x_stages;
    std::vector<RectifyParamsT<T>> rectify;  // empty unless use_cm_frm
    std::vector<FfmParamsT<T>> ffm_params;   // empty for mode avg / single stream
    DecoderParamsT<T> decoder;

    NetworkParamsT() = default;
    NetworkParamsT(NetworkSpec s, AblationConfig c);

    bool single_stream() const { return cfg.second_modality == SecondModality::None; }
    void init(Rng& rng);
    std::vector<NamedParam<T>> fields();
    void reset_grads();
};

using NetworkParams = NetworkParamsT<float>;

template <typename T>
struct NetworkCache {
    bool valid = false;
    TensorT<T> x_raw;  // pre-adapter input (adapter backward)
    std::vector<StageCacheT<T>> rgb_stage, x_stage;
    std::vector<CmFrmCache<T>> rect;
    std::vector<FfmCache<T>> ffm_cache;
    std::vector<TensorT<T>> fused;  // decoder inputs
    DecoderCacheT<T> dec;
};

/// Two-stream forward to per-pixel logits H x W x K. In single-stream configs
/// `x` is ignored and may be empty.
template <typename T>
TensorT<T> network_forward(const TensorT<T>& rgb, const TensorT<T>& x,
                           const NetworkParamsT<T>& p, NetworkCache<T>* cache = nullptr);

/// Accumulates parameter grads; returns (d_rgb, d_x) (d_x empty when single-stream).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> network_backward(const NetworkCache<T>& cache,
                                                   NetworkParamsT<T>& p,
                                                   const TensorT<T>& d_logits);

// --- loss / metrics ----------------------------------------------------------

/// Mean over non-ignored pixels of -log softmax(logits)[label]. Labels are an
/// H x W map of class ids (stored as floats); id == ignore_id contributes
/// nothing. If d_logits is non-null the gradient is written (not accumulated).
template <typename T>
T cross_entropy(const TensorT<T>& logits, const Tensor& labels, std::int32_t ignore_id,
                TensorT<T>* d_logits = nullptr);

/// Per-pixel argmax class ids of an H x W x K logits map.
Tensor argmax_classes(const Tensor& logits);

struct SegMetrics {
    double miou = 0;
    double pixel_acc = 0;
    std::vector<double> per_class_iou;  // NaN for classes absent from pred and gt
};

SegMetrics segmentation_metrics(const Tensor& pred, const Tensor& gt, std::uint32_t num_classes,
                                std::int32_t ignore_id);

// --- optimizer ----------------------------------------------------------------

struct SgdConfig {
    float lr = 0.05f;
    float momentum = 0.9f;
};

struct SgdState {
    std::vector<Tensor> velocity;  // parallel to params.fields()
};

void sgd_init(NetworkParams& params, SgdState& state);
void sgd_step(NetworkParams& params, SgdState& state, const SgdConfig& cfg);

struct TrainStepResult {
    float loss = 0;
};

/// One optimization step on a single scene: reset grads, forward, loss,
/// backward, SGD update. Aborts (throws) on non-finite loss.
TrainStepResult train_step(const Tensor& rgb, const Tensor& x, const Tensor& labels,
                           std::int32_t ignore_id, NetworkParams& params, SgdState& state,
                           const SgdConfig& cfg);

}  // namespace cmx
