#include "cmx/network.hpp"

#include <cmath>
#include <stdexcept>

namespace cmx {

NetworkSpec NetworkSpec::default_spec(std::uint32_t num_classes, std::uint32_t in_ch_x) {
    NetworkSpec s;
    s.stages = {{3, 32, 4, 1}, {32, 64, 2, 2}, {64, 128, 2, 4}, {128, 256, 2, 8}};
    s.in_ch_x = in_ch_x;
    s.decoder_dim = 64;
    s.num_classes = num_classes;
    s.validate();
    return s;
}

NetworkSpec NetworkSpec::gradcheck_spec(std::uint32_t num_classes) {
    NetworkSpec s;
    s.stages = {{3, 8, 2, 1}, {8, 16, 2, 2}, {16, 32, 2, 4}, {32, 64, 2, 8}};
    s.decoder_dim = 16;
    s.num_classes = num_classes;
    s.validate();
    return s;
}

std::uint32_t NetworkSpec::total_downsample() const {
    std::uint32_t d = 1;
    for (const auto& st : stages) d *= st.downsample;
    return d;
}

void NetworkSpec::validate() const {
    if (stages.empty()) throw std::invalid_argument("network spec: no stages");
    if (stages[0].in_ch != 3) throw std::invalid_argument("network spec: stem expects 3 channels");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& st = stages[i];
        if (st.downsample != 2 && st.downsample != 4) {
            throw std::invalid_argument("network spec: stage downsample must be 2 or 4");
        }
        if (st.n_heads == 0 || st.out_ch % st.n_heads != 0) {
            throw std::invalid_argument("network spec: stage heads must divide out_ch");
        }
        if (i > 0 && st.in_ch != stages[i - 1].out_ch) {
            throw std::invalid_argument("network spec: stage channel chain broken");
        }
    }
}

template <typename T>
StageBlockT<T>::StageBlockT(std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t s)
    : w1({in_ch, out_ch}), b1({out_ch}), w2({out_ch, out_ch}), b2({out_ch}), stride(s) {}

namespace {

template <typename T>
TensorT<T> stage_forward(const StageBlockT<T>& blk, const TensorT<T>& in,
                         StageCacheT<T>* cache) {
    TensorT<T> pooled = blk.stride > 1 ? avgpool(in, blk.stride) : in;
    TensorT<T> h_pre = conv1x1(pooled, blk.w1.value, &blk.b1.value);
    TensorT<T> out =
        conv1x1(pointwise(Pointwise::Gelu, h_pre), blk.w2.value, &blk.b2.value);
    if (cache) {
        cache->input = in;
        cache->pooled = std::move(pooled);
        cache->h_pre = std::move(h_pre);
    }
    return out;
}

template <typename T>
TensorT<T> stage_backward(const StageCacheT<T>& cache, StageBlockT<T>& blk,
                          const TensorT<T>& upstream) {
    TensorT<T> g = pointwise(Pointwise::Gelu, cache.h_pre);
    TensorT<T> d_g(g.shape());
    conv1x1_backward(g, blk.w2.value, upstream, &d_g, &blk.w2.grad, &blk.b2.grad);
    TensorT<T> d_h = pointwise_backward(Pointwise::Gelu, cache.h_pre, d_g);
    TensorT<T> d_pooled(cache.pooled.shape());
    conv1x1_backward(cache.pooled, blk.w1.value, d_h, &d_pooled, &blk.w1.grad, &blk.b1.grad);
    if (blk.stride <= 1) return d_pooled;
    TensorT<T> d_in(cache.input.shape());
    avgpool_backward(cache.input.shape(), blk.stride, d_pooled, &d_in);
    return d_in;
}

}  // namespace

template <typename T>
NetworkParamsT<T>::NetworkParamsT(NetworkSpec s, AblationConfig c) : spec(std::move(s)), cfg(c) {
    spec.validate();
    const bool single = cfg.second_modality == SecondModality::None;
    if (!single && spec.in_ch_x != 3) {
        x_adapter_w.emplace(Shape{spec.in_ch_x, 3u});
        x_adapter_b.emplace(Shape{3u});
    }
    const auto [lc, ls] = lambdas_for(cfg.rectify_mode);
    for (const auto& st : spec.stages) {
        rgb_stages.emplace_back(st.in_ch, st.out_ch, st.downsample);
        if (!single) {
            x_stages.emplace_back(st.in_ch, st.out_ch, st.downsample);
            if (cfg.use_cm_frm) {
                auto& r = rectify.emplace_back(st.out_ch, cfg.pool_mode);
                r.lambda_c = static_cast<T>(lc);
                r.lambda_s = static_cast<T>(ls);
            }
            if (cfg.ffm_mode != FfmMode::Avg) {
                ffm_params.emplace_back(st.out_ch, st.n_heads);
            }
        }
        decoder.proj_w.emplace_back(Shape{st.out_ch, spec.decoder_dim});
        decoder.proj_b.emplace_back(Shape{spec.decoder_dim});
    }
    const std::uint32_t cat_dim = spec.decoder_dim * static_cast<std::uint32_t>(spec.stages.size());
    decoder.cls_w = ParamT<T>({cat_dim, spec.num_classes});
    decoder.cls_b = ParamT<T>({spec.num_classes});
}

template <typename T>
void NetworkParamsT<T>::init(Rng& rng) {
    // Fixed draw order: adapter, rgb stages, x stages, rectify, ffm, decoder.
    if (x_adapter_w) {
        init_uniform(*x_adapter_w, spec.in_ch_x, rng);
        init_zero(*x_adapter_b);
    }
    for (auto& st : rgb_stages) {
        init_uniform(st.w1, st.w1.value.extent(0), rng);
        init_zero(st.b1);
        init_uniform(st.w2, st.w2.value.extent(0), rng);
        init_zero(st.b2);
    }
    for (auto& st : x_stages) {
        init_uniform(st.w1, st.w1.value.extent(0), rng);
        init_zero(st.b1);
        init_uniform(st.w2, st.w2.value.extent(0), rng);
        init_zero(st.b2);
    }
    for (auto& r : rectify) r.init(rng);
    for (auto& f : ffm_params) f.init(rng);
    for (std::size_t i = 0; i < decoder.proj_w.size(); ++i) {
        init_uniform(decoder.proj_w[i], decoder.proj_w[i].value.extent(0), rng);
        init_zero(decoder.proj_b[i]);
    }
    init_uniform(decoder.cls_w, decoder.cls_w.value.extent(0), rng);
    init_zero(decoder.cls_b);
}

template <typename T>
std::vector<NamedParam<T>> NetworkParamsT<T>::fields() {
    std::vector<NamedParam<T>> out;
    if (x_adapter_w) {
        out.push_back({"x_adapter.w", &*x_adapter_w});
        out.push_back({"x_adapter.b", &*x_adapter_b});
    }
    auto add_stage = [&out](const std::string& base, StageBlockT<T>& st) {
        out.push_back({base + ".w1", &st.w1});
        out.push_back({base + ".b1", &st.b1});
        out.push_back({base + ".w2", &st.w2});
        out.push_back({base + ".b2", &st.b2});
    };
    for (std::size_t i = 0; i < rgb_stages.size(); ++i) {
        add_stage("rgb_stage" + std::to_string(i), rgb_stages[i]);
    }
    for (std::size_t i = 0; i < x_stages.size(); ++i) {
        add_stage("x_stage" + std::to_string(i), x_stages[i]);
    }
    for (std::size_t i = 0; i < rectify.size(); ++i) {
        for (auto& f : rectify[i].fields()) {
            out.push_back({"rectify" + std::to_string(i) + "." + f.name, f.param});
        }
    }
    for (std::size_t i = 0; i < ffm_params.size(); ++i) {
        for (auto& f : ffm_params[i].fields()) {
            out.push_back({"ffm" + std::to_string(i) + "." + f.name, f.param});
        }
    }
    for (std::size_t i = 0; i < decoder.proj_w.size(); ++i) {
        out.push_back({"decoder.proj" + std::to_string(i) + ".w", &decoder.proj_w[i]});
        out.push_back({"decoder.proj" + std::to_string(i) + ".b", &decoder.proj_b[i]});
    }
    out.push_back({"decoder.cls_w", &decoder.cls_w});
    out.push_back({"decoder.cls_b", &decoder.cls_b});
    return out;
}

template <typename T>
void NetworkParamsT<T>::reset_grads() {
    for (auto& f : fields()) f.param->reset_grad();
}

template <typename T>
TensorT<T> network_forward(const TensorT<T>& rgb, const TensorT<T>& x,
                           const NetworkParamsT<T>& p, NetworkCache<T>* cache) {
    require_rank(rgb, 3, "network_forward");
    const std::uint32_t down = p.spec.total_downsample();
    if (rgb.extent(0) % down != 0 || rgb.extent(1) % down != 0) {
        throw ShapeError("network_forward: input " + shape_string(rgb.shape()) +
                         " not divisible by total downsampling " + std::to_string(down));
    }
    const bool single = p.single_stream();
    const std::size_t n_stages = p.spec.stages.size();

    if (cache) {
        cache->rgb_stage.assign(n_stages, {});
        cache->x_stage.assign(n_stages, {});
        cache->rect.assign(n_stages, {});
        cache->ffm_cache.assign(n_stages, {});
        cache->fused.assign(n_stages, TensorT<T>());
    }

    TensorT<T> r = rgb;
    TensorT<T> xx;
    if (!single) {
        if (x.rank() != 3 || x.extent(0) != rgb.extent(0) || x.extent(1) != rgb.extent(1) ||
            x.extent(2) != p.spec.in_ch_x) {
            throw ShapeError("network_forward: x input " + shape_string(x.shape()) +
                             " does not pair with rgb " + shape_string(rgb.shape()) +
                             " at x channels " + std::to_string(p.spec.in_ch_x));
        }
        if (cache) cache->x_raw = x;
        xx = p.x_adapter_w ? conv1x1(x, p.x_adapter_w->value, &p.x_adapter_b->value) : x;
    }

    std::vector<TensorT<T>> fused(n_stages);
    for (std::size_t i = 0; i < n_stages; ++i) {
        r = stage_forward(p.rgb_stages[i], r, cache ? &cache->rgb_stage[i] : nullptr);
        if (single) {
            fused[i] = r;
        } else {
            xx = stage_forward(p.x_stages[i], xx, cache ? &cache->x_stage[i] : nullptr);
            if (p.cfg.use_cm_frm) {
                auto [rr, rx] = cm_frm(r, xx, p.rectify[i], cache ? &cache->rect[i] : nullptr);
                r = std::move(rr);
                xx = std::move(rx);
            }
            static const FfmParamsT<T> k_empty_ffm;
            const FfmParamsT<T>& fp =
                p.cfg.ffm_mode == FfmMode::Avg ? k_empty_ffm : p.ffm_params[i];
            fused[i] = ffm(r, xx, fp, p.cfg.ffm_mode, cache ? &cache->ffm_cache[i] : nullptr);
        }
    }

    // decoder: project, upsample to stage-1 resolution, concatenate, classify
    DecoderCacheT<T> dec;
    dec.proj_out.resize(n_stages);
    TensorT<T> cat;
    std::uint32_t up_factor = 1;
    for (std::size_t i = 0; i < n_stages; ++i) {
        TensorT<T> pr = conv1x1(fused[i], p.decoder.proj_w[i].value, &p.decoder.proj_b[i].value);
        dec.proj_out[i] = pr;
        if (i > 0) up_factor *= p.spec.stages[i].downsample;
        TensorT<T> up = i == 0 ? pr : upsample_nearest(pr, up_factor);
        cat = i == 0 ? std::move(up) : concat_last(cat, up);
    }
    TensorT<T> logits_low = conv1x1(cat, p.decoder.cls_w.value, &p.decoder.cls_b.value);
    TensorT<T> logits = upsample_nearest(logits_low, p.spec.stages[0].downsample);

    if (cache) {
        cache->fused = std::move(fused);
        cache->dec = std::move(dec);
        cache->dec.cat = std::move(cat);
        cache->valid = true;
    }
    return logits;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> network_backward(const NetworkCache<T>& cache,
                                                   NetworkParamsT<T>& p,
                                                   const TensorT<T>& d_logits) {
    if (!cache.valid) throw std::logic_error("network_backward called before forward");
    const bool single = p.single_stream();
    const std::size_t n_stages = p.spec.stages.size();

    // decoder backward
    TensorT<T> d_low({d_logits.extent(0) / p.spec.stages[0].downsample,
                      d_logits.extent(1) / p.spec.stages[0].downsample, p.spec.num_classes});
    upsample_nearest_backward(d_low.shape(), p.spec.stages[0].downsample, d_logits, &d_low);
    TensorT<T> d_cat(cache.dec.cat.shape());
    conv1x1_backward(cache.dec.cat, p.decoder.cls_w.value, d_low, &d_cat, &p.decoder.cls_w.grad,
                     &p.decoder.cls_b.grad);

    std::vector<TensorT<T>> d_fused(n_stages);
    std::uint32_t col = 0;
    std::uint32_t up_factor = 1;
    const std::uint32_t d = p.spec.decoder_dim;
    for (std::size_t i = 0; i < n_stages; ++i) {
        TensorT<T> d_up = slice_last(d_cat, col, col + d);
        col += d;
        if (i > 0) up_factor *= p.spec.stages[i].downsample;
        TensorT<T> d_proj(cache.dec.proj_out[i].shape());
        if (i == 0) {
            d_proj = d_up;
        } else {
            upsample_nearest_backward(d_proj.shape(), up_factor, d_up, &d_proj);
        }
        d_fused[i] = TensorT<T>(cache.fused[i].shape());
        conv1x1_backward(cache.fused[i], p.decoder.proj_w[i].value, d_proj, &d_fused[i],
                         &p.decoder.proj_w[i].grad, &p.decoder.proj_b[i].grad);
    }

    // stage chain backward
    TensorT<T> carried_r, carried_x;
    for (std::size_t ii = n_stages; ii-- > 0;) {
        if (single) {
            TensorT<T> d_r = d_fused[ii];
            if (!carried_r.empty()) {
                for (std::size_t e = 0; e < d_r.size(); ++e) d_r[e] += carried_r[e];
            }
            carried_r = stage_backward(cache.rgb_stage[ii], p.rgb_stages[ii], d_r);
            continue;
        }
        static FfmParamsT<T> k_empty_ffm;
        FfmParamsT<T>& fp = p.cfg.ffm_mode == FfmMode::Avg ? k_empty_ffm : p.ffm_params[ii];
        auto [f_r, f_x] = ffm_backward(cache.ffm_cache[ii], fp, d_fused[ii]);
        TensorT<T> d_rr = std::move(f_r);
        TensorT<T> d_xx = std::move(f_x);
        if (!carried_r.empty()) {
            for (std::size_t e = 0; e < d_rr.size(); ++e) d_rr[e] += carried_r[e];
            for (std::size_t e = 0; e < d_xx.size(); ++e) d_xx[e] += carried_x[e];
        }
        if (p.cfg.use_cm_frm) {
            auto [b_r, b_x] = cm_frm_backward(cache.rect[ii], p.rectify[ii], d_rr, d_xx);
            d_rr = std::move(b_r);
            d_xx = std::move(b_x);
        }
        carried_r = stage_backward(cache.rgb_stage[ii], p.rgb_stages[ii], d_rr);
        carried_x = stage_backward(cache.x_stage[ii], p.x_stages[ii], d_xx);
    }

    if (single) return {std::move(carried_r), TensorT<T>()};
    if (p.x_adapter_w) {
        TensorT<T> d_x(cache.x_raw.shape());
        conv1x1_backward(cache.x_raw, p.x_adapter_w->value, carried_x, &d_x, &p.x_adapter_w->grad,
                         &p.x_adapter_b->grad);
        return {std::move(carried_r), std::move(d_x)};
    }
    return {std::move(carried_r), std::move(carried_x)};
}

// --- loss / metrics ----------------------------------------------------------

template <typename T>
T cross_entropy(const TensorT<T>& logits, const Tensor& labels, std::int32_t ignore_id,
                TensorT<T>* d_logits) {
    require_rank(logits, 3, "cross_entropy");
    const std::size_t hw = static_cast<std::size_t>(logits.extent(0)) * logits.extent(1);
    const std::uint32_t k = logits.extent(2);
    if (labels.size() != hw) {
        throw ShapeError("cross_entropy: labels " + shape_string(labels.shape()) +
                         " do not cover logits " + shape_string(logits.shape()));
    }
    if (d_logits) *d_logits = TensorT<T>(logits.shape());

    // first pass: count valid pixels
    std::size_t valid = 0;
    for (std::size_t p = 0; p < hw; ++p) {
        const auto id = static_cast<std::int32_t>(std::lround(labels[p]));
        if (id == ignore_id) continue;
        if (id < 0 || id >= static_cast<std::int32_t>(k)) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(id) +
                                    " out of range [0," + std::to_string(k) + ")");
        }
        ++valid;
    }
    if (valid == 0) return T(0);

    T loss = T(0);
    const T inv = T(1) / static_cast<T>(valid);
    for (std::size_t p = 0; p < hw; ++p) {
        const auto id = static_cast<std::int32_t>(std::lround(labels[p]));
        if (id == ignore_id) continue;
        const T* row = logits.raw() + p * k;
        T m = row[0];
        for (std::uint32_t c = 1; c < k; ++c) m = std::max(m, row[c]);
        T z = T(0);
        for (std::uint32_t c = 0; c < k; ++c) z += std::exp(row[c] - m);
        const T lse = m + std::log(z);
        loss += (lse - row[id]) * inv;
        if (d_logits) {
            T* g = d_logits->raw() + p * k;
            for (std::uint32_t c = 0; c < k; ++c) {
                const T soft = std::exp(row[c] - lse);
                g[c] = (soft - (static_cast<std::int32_t>(c) == id ? T(1) : T(0))) * inv;
            }
        }
    }
    return loss;
}

Tensor argmax_classes(const Tensor& logits) {
    require_rank(logits, 3, "argmax_classes");
    const std::uint32_t h = logits.extent(0), w = logits.extent(1), k = logits.extent(2);
    Tensor out({h, w});
    for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) {
        const float* row = logits.raw() + p * k;
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < k; ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[p] = static_cast<float>(best);
    }
    return out;
}

SegMetrics segmentation_metrics(const Tensor& pred, const Tensor& gt, std::uint32_t num_classes,
                                std::int32_t ignore_id) {
    require_same_shape(pred, gt, "segmentation_metrics");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    std::size_t correct = 0, valid = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto g = static_cast<std::int32_t>(std::lround(gt[i]));
        if (g == ignore_id) continue;
        const auto p = static_cast<std::int32_t>(std::lround(pred[i]));
        ++valid;
        if (p == g) {
            ++correct;
            ++tp[g];
        } else {
            ++fp[p];
            ++fn[g];
        }
    }
    SegMetrics m;
    m.per_class_iou.assign(num_classes, std::nan(""));
    double iou_sum = 0;
    std::size_t present = 0;
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        const std::size_t denom = tp[c] + fp[c] + fn[c];
        if (denom == 0) continue;  // absent from both pred and gt
        m.per_class_iou[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
        iou_sum += m.per_class_iou[c];
        ++present;
    }
    m.miou = present ? iou_sum / static_cast<double>(present) : 0.0;
    m.pixel_acc = valid ? static_cast<double>(correct) / static_cast<double>(valid) : 0.0;
    return m;
}

// --- optimizer ----------------------------------------------------------------

void sgd_init(NetworkParams& params, SgdState& state) {
    state.velocity.clear();
    for (auto& f : params.fields()) {
        state.velocity.emplace_back(f.param->value.shape());
    }
}

void sgd_step(NetworkParams& params, SgdState& state, const SgdConfig& cfg) {
    auto fields = params.fields();
    if (state.velocity.size() != fields.size()) {
        throw std::logic_error("sgd_step: optimizer state does not match parameter set");
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
        Tensor& v = state.velocity[i];
        Param& p = *fields[i].param;
        for (std::size_t e = 0; e < v.size(); ++e) {
            v[e] = cfg.momentum * v[e] - cfg.lr * p.grad[e];
            p.value[e] += v[e];
        }
    }
}

TrainStepResult train_step(const Tensor& rgb, const Tensor& x, const Tensor& labels,
                           std::int32_t ignore_id, NetworkParams& params, SgdState& state,
                           const SgdConfig& cfg) {
    params.reset_grads();
    NetworkCache<float> cache;
    Tensor logits = network_forward(rgb, x, params, &cache);
    Tensor d_logits;
    const float loss = cross_entropy(logits, labels, ignore_id, &d_logits);
    if (!std::isfinite(loss)) {
        throw std::runtime_error("train_step: non-finite loss " + std::to_string(loss));
    }
    network_backward(cache, params, d_logits);
    sgd_step(params, state, cfg);
    return {loss};
}

#define CMX_INSTANTIATE_NETWORK(T)                                                            \
    template struct StageBlockT<T>;                                                           \
    template struct NetworkParamsT<T>;                                                        \
    template TensorT<T> network_forward(const TensorT<T>&, const TensorT<T>&,                 \
                                        const NetworkParamsT<T>&, NetworkCache<T>*);          \
    template std::pair<TensorT<T>, TensorT<T>> network_backward(                              \
        const NetworkCache<T>&, NetworkParamsT<T>&, const TensorT<T>&);                       \
    template T cross_entropy(const TensorT<T>&, const Tensor&, std::int32_t, TensorT<T>*);

CMX_INSTANTIATE_NETWORK(float)
CMX_INSTANTIATE_NETWORK(double)

#undef CMX_INSTANTIATE_NETWORK

}  // namespace cmx
