#include "cmx/rectify.hpp"

#include <stdexcept>

namespace cmx {

std::pair<float, float> lambdas_for(RectifyMode mode) {
    switch (mode) {
        case RectifyMode::Both: return {0.5f, 0.5f};
        case RectifyMode::ChannelOnly: return {1.0f, 0.0f};
        case RectifyMode::SpatialOnly: return {0.0f, 1.0f};
    }
    throw std::invalid_argument("unknown rectify mode");
}

template <typename T>
RectifyParamsT<T>::RectifyParamsT(std::uint32_t c, PoolMode pm)
    : mlp_w1({pm == PoolMode::Both ? 4 * c : 2 * c, c}),
      mlp_b1({c}),
      mlp_w2({c, 2 * c}),
      mlp_b2({2 * c}),
      sconv_w1({2 * c, c}),
      sconv_b1({c}),
      sconv_w2({c, 2u}),
      sconv_b2({2u}),
      pool_mode(pm),
      channels(c) {}

template <typename T>
void RectifyParamsT<T>::init(Rng& rng) {
    init_uniform(mlp_w1, pooled_dim(), rng);
    init_zero(mlp_b1);
    init_uniform(mlp_w2, channels, rng);
    init_zero(mlp_b2);
    init_uniform(sconv_w1, 2 * channels, rng);
    init_zero(sconv_b1);
    init_uniform(sconv_w2, channels, rng);
    init_zero(sconv_b2);
}

template <typename T>
std::vector<NamedParam<T>> RectifyParamsT<T>::fields() {
    return {{"mlp_w1", &mlp_w1},     {"mlp_b1", &mlp_b1},     {"mlp_w2", &mlp_w2},
            {"mlp_b2", &mlp_b2},     {"sconv_w1", &sconv_w1}, {"sconv_b1", &sconv_b1},
            {"sconv_w2", &sconv_w2}, {"sconv_b2", &sconv_b2}};
}

template <typename T>
void RectifyParamsT<T>::reset_grads() {
    for (auto& f : fields()) f.param->reset_grad();
}

template <typename T>
ChannelWeightsT<T> channel_weights(const TensorT<T>& rgb, const TensorT<T>& x,
                                   const RectifyParamsT<T>& p, CmFrmCache<T>* cache) {
    require_same_shape(rgb, x, "channel_weights");
    const std::uint32_t c = rgb.extent(2);

    std::vector<std::uint32_t> amax_rgb, amax_x;
    TensorT<T> pooled;
    // Fixed concatenation order: (avg_rgb, max_rgb, avg_x, max_x).
    switch (p.pool_mode) {
        case PoolMode::Both: {
            TensorT<T> a = global_pool(PoolKind::Avg, rgb);
            TensorT<T> m = global_pool(PoolKind::Max, rgb, &amax_rgb);
            TensorT<T> ax = global_pool(PoolKind::Avg, x);
            TensorT<T> mx = global_pool(PoolKind::Max, x, &amax_x);
            pooled = concat_last(concat_last(a, m), concat_last(ax, mx));
            break;
        }
        case PoolMode::AvgOnly:
            pooled = concat_last(global_pool(PoolKind::Avg, rgb), global_pool(PoolKind::Avg, x));
            break;
        case PoolMode::MaxOnly:
            pooled = concat_last(global_pool(PoolKind::Max, rgb, &amax_rgb),
                                 global_pool(PoolKind::Max, x, &amax_x));
            break;
    }
    TensorT<T> y = pooled.reshaped({1, p.pooled_dim()});
    TensorT<T> h1_pre = linear(y, p.mlp_w1.value, &p.mlp_b1.value);
    TensorT<T> h1 = pointwise(Pointwise::Relu, h1_pre);
    TensorT<T> w = pointwise(Pointwise::Sigmoid, linear(h1, p.mlp_w2.value, &p.mlp_b2.value));

    ChannelWeightsT<T> cw{slice_last(w, 0, c).reshaped({c}), slice_last(w, c, 2 * c).reshaped({c})};
    if (cache) {
        cache->pooled = y;
        cache->h1_pre = h1_pre;
        cache->weights = w;
        cache->argmax_rgb = std::move(amax_rgb);
        cache->argmax_x = std::move(amax_x);
        cache->cw = cw;
    }
    return cw;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> channel_rectify(const TensorT<T>& rgb, const TensorT<T>& x,
                                                  const ChannelWeightsT<T>& cw) {
    // Eq-literal cross application: each modality is rectified by the other's feature.
    return {mul_channel_vec(x, cw.w_x), mul_channel_vec(rgb, cw.w_rgb)};
}

template <typename T>
SpatialWeightsT<T> spatial_weights(const TensorT<T>& rgb, const TensorT<T>& x,
                                   const RectifyParamsT<T>& p, CmFrmCache<T>* cache) {
    require_same_shape(rgb, x, "spatial_weights");
    const std::uint32_t h = rgb.extent(0), w = rgb.extent(1);

    TensorT<T> cat = concat_last(rgb, x);
    TensorT<T> s1_pre = conv1x1(cat, p.sconv_w1.value, &p.sconv_b1.value);
    TensorT<T> s1 = pointwise(Pointwise::Relu, s1_pre);
    TensorT<T> fmap =
        pointwise(Pointwise::Sigmoid, conv1x1(s1, p.sconv_w2.value, &p.sconv_b2.value));

    SpatialWeightsT<T> sw{slice_last(fmap, 0, 1).reshaped({h, w}),
                          slice_last(fmap, 1, 2).reshaped({h, w})};
    if (cache) {
        cache->cat = std::move(cat);
        cache->s1_pre = std::move(s1_pre);
        cache->fmap = fmap;
        cache->sw = sw;
    }
    return sw;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> spatial_rectify(const TensorT<T>& rgb, const TensorT<T>& x,
                                                  const SpatialWeightsT<T>& sw) {
    return {mul_spatial_map(x, sw.m_x), mul_spatial_map(rgb, sw.m_rgb)};
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> cm_frm(const TensorT<T>& rgb, const TensorT<T>& x,
                                         const RectifyParamsT<T>& p, CmFrmCache<T>* cache) {
    require_same_shape(rgb, x, "cm_frm");
    TensorT<T> rgb_out = rgb;
    TensorT<T> x_out = x;

    if (cache) {
        cache->rgb = rgb;
        cache->x = x;
        cache->ran_channel = cache->ran_spatial = false;
    }
    if (p.lambda_c != T(0)) {
        ChannelWeightsT<T> cw = channel_weights(rgb, x, p, cache);
        auto [rgb_rec, x_rec] = channel_rectify(rgb, x, cw);
        axpy(p.lambda_c, rgb_rec, rgb_out);
        axpy(p.lambda_c, x_rec, x_out);
        if (cache) cache->ran_channel = true;
    }
    if (p.lambda_s != T(0)) {
        SpatialWeightsT<T> sw = spatial_weights(rgb, x, p, cache);
        auto [rgb_rec, x_rec] = spatial_rectify(rgb, x, sw);
        axpy(p.lambda_s, rgb_rec, rgb_out);
        axpy(p.lambda_s, x_rec, x_out);
        if (cache) cache->ran_spatial = true;
    }
    if (cache) cache->valid = true;
    return {std::move(rgb_out), std::move(x_out)};
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> cm_frm_backward(const CmFrmCache<T>& cache, RectifyParamsT<T>& p,
                                                  const TensorT<T>& d_rgb_out,
                                                  const TensorT<T>& d_x_out) {
    if (!cache.valid) throw std::logic_error("cm_frm_backward called before cm_frm forward");
    const std::uint32_t c = p.channels;
    const std::size_t hw = cache.rgb.size() / c;

    TensorT<T> d_rgb = d_rgb_out;  // identity residual
    TensorT<T> d_x = d_x_out;

    if (cache.ran_channel) {
        TensorT<T> up_rgb = scale(d_rgb_out, p.lambda_c);
        TensorT<T> up_x = scale(d_x_out, p.lambda_c);
        TensorT<T> d_wx({c}), d_wrgb({c});
        // rgb_out term: lambda_c * (w_x (.) x)
        mul_channel_vec_backward(cache.x, cache.cw.w_x, up_rgb, &d_x, &d_wx);
        // x_out term: lambda_c * (w_rgb (.) rgb)
        mul_channel_vec_backward(cache.rgb, cache.cw.w_rgb, up_x, &d_rgb, &d_wrgb);

        // sigmoid backward through the joint 2C vector
        TensorT<T> d_w({1, 2 * c});
        for (std::uint32_t i = 0; i < c; ++i) {
            const T w0 = cache.weights[i], w1 = cache.weights[c + i];
            d_w[i] = d_wrgb[i] * w0 * (T(1) - w0);
            d_w[c + i] = d_wx[i] * w1 * (T(1) - w1);
        }
        TensorT<T> h1 = pointwise(Pointwise::Relu, cache.h1_pre);
        TensorT<T> d_h1({1, c});
        linear_backward(h1, p.mlp_w2.value, d_w, &d_h1, &p.mlp_w2.grad, &p.mlp_b2.grad);
        TensorT<T> d_h1_pre = pointwise_backward(Pointwise::Relu, cache.h1_pre, d_h1);
        TensorT<T> d_pooled({1, p.pooled_dim()});
        linear_backward(cache.pooled, p.mlp_w1.value, d_h1_pre, &d_pooled, &p.mlp_w1.grad,
                        &p.mlp_b1.grad);

        // route pooled-descriptor gradients back into the feature maps
        const Shape& fshape = cache.rgb.shape();
        auto seg = [&](std::uint32_t s) {
            return slice_last(d_pooled, s * c, (s + 1) * c).reshaped({c});
        };
        switch (p.pool_mode) {
            case PoolMode::Both: {
                TensorT<T> g;
                g = seg(0);
                global_avg_pool_backward(fshape, g, &d_rgb);
                g = seg(1);
                global_max_pool_backward(fshape, cache.argmax_rgb, g, &d_rgb);
                g = seg(2);
                global_avg_pool_backward(fshape, g, &d_x);
                g = seg(3);
                global_max_pool_backward(fshape, cache.argmax_x, g, &d_x);
                break;
            }
            case PoolMode::AvgOnly: {
                TensorT<T> g = seg(0);
                global_avg_pool_backward(fshape, g, &d_rgb);
                g = seg(1);
                global_avg_pool_backward(fshape, g, &d_x);
                break;
            }
            case PoolMode::MaxOnly: {
                TensorT<T> g = seg(0);
                global_max_pool_backward(fshape, cache.argmax_rgb, g, &d_rgb);
                g = seg(1);
                global_max_pool_backward(fshape, cache.argmax_x, g, &d_x);
                break;
            }
        }
    }

    if (cache.ran_spatial) {
        const std::uint32_t h = cache.rgb.extent(0), w = cache.rgb.extent(1);
        TensorT<T> up_rgb = scale(d_rgb_out, p.lambda_s);
        TensorT<T> up_x = scale(d_x_out, p.lambda_s);
        TensorT<T> d_mx({h, w}), d_mrgb({h, w});
        mul_spatial_map_backward(cache.x, cache.sw.m_x, up_rgb, &d_x, &d_mx);
        mul_spatial_map_backward(cache.rgb, cache.sw.m_rgb, up_x, &d_rgb, &d_mrgb);

        TensorT<T> d_f({h, w, 2});
        for (std::size_t pidx = 0; pidx < hw; ++pidx) {
            const T f0 = cache.fmap[pidx * 2], f1 = cache.fmap[pidx * 2 + 1];
            d_f[pidx * 2] = d_mrgb[pidx] * f0 * (T(1) - f0);
            d_f[pidx * 2 + 1] = d_mx[pidx] * f1 * (T(1) - f1);
        }
        TensorT<T> s1 = pointwise(Pointwise::Relu, cache.s1_pre);
        TensorT<T> d_s1(s1.shape());
        conv1x1_backward(s1, p.sconv_w2.value, d_f, &d_s1, &p.sconv_w2.grad, &p.sconv_b2.grad);
        TensorT<T> d_s1_pre = pointwise_backward(Pointwise::Relu, cache.s1_pre, d_s1);
        TensorT<T> d_cat(cache.cat.shape());
        conv1x1_backward(cache.cat, p.sconv_w1.value, d_s1_pre, &d_cat, &p.sconv_w1.grad,
                         &p.sconv_b1.grad);
        concat_last_backward(d_cat, &d_rgb, &d_x);
    }

    return {std::move(d_rgb), std::move(d_x)};
}

#define CMX_INSTANTIATE_RECTIFY(T)                                                               \
    template struct RectifyParamsT<T>;                                                           \
    template ChannelWeightsT<T> channel_weights(const TensorT<T>&, const TensorT<T>&,            \
                                                const RectifyParamsT<T>&, CmFrmCache<T>*);       \
    template std::pair<TensorT<T>, TensorT<T>> channel_rectify(                                  \
        const TensorT<T>&, const TensorT<T>&, const ChannelWeightsT<T>&);                        \
    template SpatialWeightsT<T> spatial_weights(const TensorT<T>&, const TensorT<T>&,            \
                                                const RectifyParamsT<T>&, CmFrmCache<T>*);       \
    template std::pair<TensorT<T>, TensorT<T>> spatial_rectify(                                  \
        const TensorT<T>&, const TensorT<T>&, const SpatialWeightsT<T>&);                        \
    template std::pair<TensorT<T>, TensorT<T>> cm_frm(const TensorT<T>&, const TensorT<T>&,      \
                                                      const RectifyParamsT<T>&, CmFrmCache<T>*); \
    template std::pair<TensorT<T>, TensorT<T>> cm_frm_backward(                                  \
        const CmFrmCache<T>&, RectifyParamsT<T>&, const TensorT<T>&, const TensorT<T>&);

CMX_INSTANTIATE_RECTIFY(float)
CMX_INSTANTIATE_RECTIFY(double)

#undef CMX_INSTANTIATE_RECTIFY

}  // namespace cmx
