#include "cmx/fusion.hpp"

#include <stdexcept>

namespace cmx {

template <typename T>
FfmParamsT<T>::FfmParamsT(std::uint32_t c, std::uint32_t heads)
    : fuse_w1({2 * c, c}),
      fuse_b1({c}),
      fuse_dw({3, 3, c}),
      fuse_db({c}),
      fuse_w2({c, c}),
      fuse_b2({c}),
      channels(c),
      n_heads(heads) {
    if (heads == 0 || c % heads != 0) {
        throw ShapeError("ffm: n_heads " + std::to_string(heads) + " must divide channels " +
                         std::to_string(c));
    }
    const std::uint32_t ch = c / heads;
    for (auto* path : {&rgb, &x}) {
        path->e_res_w = ParamT<T>({c, c});
        path->e_res_b = ParamT<T>({c});
        path->e_inter_w = ParamT<T>({c, c});
        path->e_inter_b = ParamT<T>({c});
        path->k_proj.clear();
        path->v_proj.clear();
        for (std::uint32_t h = 0; h < heads; ++h) {
            path->k_proj.emplace_back(Shape{ch, ch});
            path->v_proj.emplace_back(Shape{ch, ch});
        }
        path->out_w = ParamT<T>({2 * c, c});
        path->out_b = ParamT<T>({c});
    }
}

template <typename T>
void FfmParamsT<T>::init(Rng& rng) {
    const std::uint32_t ch = head_dim();
    for (auto* path : {&rgb, &x}) {
        init_uniform(path->e_res_w, channels, rng);
        init_zero(path->e_res_b);
        init_uniform(path->e_inter_w, channels, rng);
        init_zero(path->e_inter_b);
        for (std::uint32_t h = 0; h < n_heads; ++h) {
            init_uniform(path->k_proj[h], ch, rng);
            init_uniform(path->v_proj[h], ch, rng);
        }
        init_uniform(path->out_w, 2 * channels, rng);
        init_zero(path->out_b);
    }
    init_uniform(fuse_w1, 2 * channels, rng);
    init_zero(fuse_b1);
    init_uniform(fuse_dw, 9, rng);
    init_zero(fuse_db);
    init_uniform(fuse_w2, channels, rng);
    init_zero(fuse_b2);
}

template <typename T>
std::vector<NamedParam<T>> FfmParamsT<T>::fields() {
    std::vector<NamedParam<T>> out;
    const char* names[2] = {"rgb", "x"};
    FfmPathParamsT<T>* paths[2] = {&rgb, &x};
    for (int i = 0; i < 2; ++i) {
        const std::string base = names[i];
        out.push_back({base + ".e_res_w", &paths[i]->e_res_w});
        out.push_back({base + ".e_res_b", &paths[i]->e_res_b});
        out.push_back({base + ".e_inter_w", &paths[i]->e_inter_w});
        out.push_back({base + ".e_inter_b", &paths[i]->e_inter_b});
        for (std::size_t h = 0; h < paths[i]->k_proj.size(); ++h) {
            out.push_back({base + ".k_proj." + std::to_string(h), &paths[i]->k_proj[h]});
            out.push_back({base + ".v_proj." + std::to_string(h), &paths[i]->v_proj[h]});
        }
        out.push_back({base + ".out_w", &paths[i]->out_w});
        out.push_back({base + ".out_b", &paths[i]->out_b});
    }
    out.push_back({"fuse_w1", &fuse_w1});
    out.push_back({"fuse_b1", &fuse_b1});
    out.push_back({"fuse_dw", &fuse_dw});
    out.push_back({"fuse_db", &fuse_db});
    out.push_back({"fuse_w2", &fuse_w2});
    out.push_back({"fuse_b2", &fuse_b2});
    return out;
}

template <typename T>
void FfmParamsT<T>::reset_grads() {
    for (auto& f : fields()) f.param->reset_grad();
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_vectors(const TensorT<T>& feat,
                                                const FfmPathParamsT<T>& path) {
    require_rank(feat, 3, "split_vectors");
    const std::uint32_t n = feat.extent(0) * feat.extent(1);
    const std::uint32_t c = feat.extent(2);
    TensorT<T> flat = feat.reshaped({n, c});
    return {linear(flat, path.e_res_w.value, &path.e_res_b.value),
            linear(flat, path.e_inter_w.value, &path.e_inter_b.value)};
}

template <typename T>
TensorT<T> head_context(const TensorT<T>& inter_slice, const FfmPathParamsT<T>& path,
                        std::size_t head) {
    TensorT<T> k = matmul(inter_slice, path.k_proj[head].value);
    TensorT<T> v = matmul(inter_slice, path.v_proj[head].value);
    return matmul_at(k, v);
}

namespace {

template <typename T>
void exchange_path_forward(const TensorT<T>& feat, const FfmPathParamsT<T>& path,
                           std::uint32_t n_heads, FfmPathCache<T>& cache) {
    const std::uint32_t n = feat.extent(0) * feat.extent(1);
    const std::uint32_t c = feat.extent(2);
    const std::uint32_t ch = c / n_heads;
    cache.flat = feat.reshaped({n, c});
    cache.res = linear(cache.flat, path.e_res_w.value, &path.e_res_b.value);
    cache.inter = linear(cache.flat, path.e_inter_w.value, &path.e_inter_b.value);
    cache.k.clear();
    cache.v.clear();
    cache.attn.clear();
    for (std::uint32_t h = 0; h < n_heads; ++h) {
        TensorT<T> s = slice_last(cache.inter, h * ch, (h + 1) * ch);
        cache.k.push_back(matmul(s, path.k_proj[h].value));
        cache.v.push_back(matmul(s, path.v_proj[h].value));
        cache.attn.push_back(softmax_last(matmul_at(cache.k[h], cache.v[h])));
    }
}

/// Gradient flow through one path's K/V/context pipeline given d_attn for that
/// path's context matrix; accumulates projection grads and the interactive
/// vector gradient.
template <typename T>
void context_backward(const FfmPathCache<T>& cache, FfmPathParamsT<T>& path, std::uint32_t head,
                      std::uint32_t ch, const TensorT<T>& d_attn, TensorT<T>& d_inter) {
    TensorT<T> d_g = softmax_last_backward(cache.attn[head], d_attn);
    TensorT<T> d_k = matmul_bt(cache.v[head], d_g);  // dK = V dG^T
    TensorT<T> d_v = matmul(cache.k[head], d_g);     // dV = K dG
    TensorT<T> s = slice_last(cache.inter, head * ch, (head + 1) * ch);
    TensorT<T> d_s({s.extent(0), ch});
    linear_backward<T>(s, path.k_proj[head].value, d_k, &d_s, &path.k_proj[head].grad, nullptr);
    linear_backward<T>(s, path.v_proj[head].value, d_v, &d_s, &path.v_proj[head].grad, nullptr);
    slice_last_backward(d_s, head * ch, &d_inter);
}

}  // namespace

template <typename T>
std::pair<TensorT<T>, TensorT<T>> cross_exchange(const TensorT<T>& rgb_feat,
                                                 const TensorT<T>& x_feat, const FfmParamsT<T>& p,
                                                 bool exchange_contexts, FfmCache<T>* cache) {
    require_same_shape(rgb_feat, x_feat, "cross_exchange");
    const std::uint32_t h = rgb_feat.extent(0), w = rgb_feat.extent(1), c = rgb_feat.extent(2);
    if (c != p.channels || c % p.n_heads != 0) {
        throw ShapeError("cross_exchange: feature " + shape_string(rgb_feat.shape()) +
                         " incompatible with C=" + std::to_string(p.channels) +
                         ", heads=" + std::to_string(p.n_heads));
    }
    const std::uint32_t n = h * w;
    const std::uint32_t chd = p.head_dim();

    FfmCache<T> local;
    FfmCache<T>& cc = cache ? *cache : local;
    exchange_path_forward(rgb_feat, p.rgb, p.n_heads, cc.rgb);
    exchange_path_forward(x_feat, p.x, p.n_heads, cc.x);

    TensorT<T> u_rgb({n, c}), u_x({n, c});
    for (std::uint32_t head = 0; head < p.n_heads; ++head) {
        TensorT<T> s_rgb = slice_last(cc.rgb.inter, head * chd, (head + 1) * chd);
        TensorT<T> s_x = slice_last(cc.x.inter, head * chd, (head + 1) * chd);
        const TensorT<T>& ctx_for_rgb = exchange_contexts ? cc.x.attn[head] : cc.rgb.attn[head];
        const TensorT<T>& ctx_for_x = exchange_contexts ? cc.rgb.attn[head] : cc.x.attn[head];
        TensorT<T> u_r = matmul(s_rgb, ctx_for_rgb);
        TensorT<T> u_xh = matmul(s_x, ctx_for_x);
        slice_last_backward(u_r, head * chd, &u_rgb);  // scatter into the head's columns
        slice_last_backward(u_xh, head * chd, &u_x);
    }
    cc.rgb.u = u_rgb;
    cc.x.u = u_x;
    cc.rgb.cat = concat_last(u_rgb, cc.rgb.res);
    cc.x.cat = concat_last(u_x, cc.x.res);

    TensorT<T> rgb_ex = linear(cc.rgb.cat, p.rgb.out_w.value, &p.rgb.out_b.value);
    TensorT<T> x_ex = linear(cc.x.cat, p.x.out_w.value, &p.x.out_b.value);
    if (cache) {
        cache->in_shape = rgb_feat.shape();
        cache->ran_exchange = true;
    }
    return {rgb_ex.reshaped({h, w, c}), x_ex.reshaped({h, w, c})};
}

template <typename T>
TensorT<T> fuse(const TensorT<T>& rgb_ex, const TensorT<T>& x_ex, const FfmParamsT<T>& p,
                FfmCache<T>* cache) {
    require_same_shape(rgb_ex, x_ex, "fuse");
    TensorT<T> cat = concat_last(rgb_ex, x_ex);
    TensorT<T> z = conv1x1(cat, p.fuse_w1.value, &p.fuse_b1.value);
    TensorT<T> t = add(z, dwconv3x3(z, p.fuse_dw.value, &p.fuse_db.value));
    TensorT<T> out = conv1x1(pointwise(Pointwise::Gelu, t), p.fuse_w2.value, &p.fuse_b2.value);
    if (cache) {
        cache->fuse_cat = std::move(cat);
        cache->z = std::move(z);
        cache->t = std::move(t);
        cache->ran_fuse = true;
    }
    return out;
}

template <typename T>
TensorT<T> ffm(const TensorT<T>& rgb_feat, const TensorT<T>& x_feat, const FfmParamsT<T>& p,
               FfmMode mode, FfmCache<T>* cache) {
    require_same_shape(rgb_feat, x_feat, "ffm");
    if (cache) {
        cache->mode = mode;
        cache->in_shape = rgb_feat.shape();
        cache->ran_exchange = cache->ran_fuse = false;
        cache->valid = true;
    }
    switch (mode) {
        case FfmMode::Avg: {
            TensorT<T> out = add(rgb_feat, x_feat);
            return scale(out, T(0.5));
        }
        case FfmMode::Stage2Only:
            return fuse(rgb_feat, x_feat, p, cache);
        case FfmMode::Full:
        case FfmMode::SelfAttn: {
            auto [rgb_ex, x_ex] = cross_exchange(rgb_feat, x_feat, p, mode == FfmMode::Full, cache);
            return fuse(rgb_ex, x_ex, p, cache);
        }
    }
    throw std::invalid_argument("ffm: unknown mode");
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> ffm_backward(const FfmCache<T>& cache, FfmParamsT<T>& p,
                                               const TensorT<T>& d_out) {
    if (!cache.valid) throw std::logic_error("ffm_backward called before ffm forward");
    const std::uint32_t h = cache.in_shape[0], w = cache.in_shape[1], c = cache.in_shape[2];
    const std::uint32_t n = h * w;

    if (cache.mode == FfmMode::Avg) {
        TensorT<T> half = scale(d_out, T(0.5));
        return {half, half};
    }

    // fusion stage backward
    TensorT<T> g = pointwise(Pointwise::Gelu, cache.t);
    TensorT<T> d_g(g.shape());
    conv1x1_backward(g, p.fuse_w2.value, d_out, &d_g, &p.fuse_w2.grad, &p.fuse_b2.grad);
    TensorT<T> d_t = pointwise_backward(Pointwise::Gelu, cache.t, d_g);
    TensorT<T> d_z = d_t;  // skip branch
    dwconv3x3_backward(cache.z, p.fuse_dw.value, d_t, &d_z, &p.fuse_dw.grad, &p.fuse_db.grad);
    TensorT<T> d_cat(cache.fuse_cat.shape());
    conv1x1_backward(cache.fuse_cat, p.fuse_w1.value, d_z, &d_cat, &p.fuse_w1.grad,
                     &p.fuse_b1.grad);
    TensorT<T> d_rgb_ex({h, w, c}), d_x_ex({h, w, c});
    concat_last_backward(d_cat, &d_rgb_ex, &d_x_ex);

    if (cache.mode == FfmMode::Stage2Only) {
        return {std::move(d_rgb_ex), std::move(d_x_ex)};
    }

    // exchange stage backward
    const bool exchanged = cache.mode == FfmMode::Full;
    const std::uint32_t chd = p.head_dim();
    TensorT<T> d_rgb_flat({n, c}), d_x_flat({n, c});

    struct PathRefs {
        const FfmPathCache<T>* cache;
        FfmPathParamsT<T>* params;
        TensorT<T>* d_flat;
    };
    PathRefs paths[2] = {{&cache.rgb, &p.rgb, &d_rgb_flat}, {&cache.x, &p.x, &d_x_flat}};
    TensorT<T> d_up[2] = {d_rgb_ex.reshaped({n, c}), d_x_ex.reshaped({n, c})};

    TensorT<T> d_inter[2] = {TensorT<T>({n, c}), TensorT<T>({n, c})};
    std::vector<TensorT<T>> d_attn_rgb, d_attn_x;
    for (std::uint32_t head = 0; head < p.n_heads; ++head) {
        d_attn_rgb.emplace_back(Shape{chd, chd});
        d_attn_x.emplace_back(Shape{chd, chd});
    }

    for (int i = 0; i < 2; ++i) {
        const FfmPathCache<T>& pc = *paths[i].cache;
        FfmPathParamsT<T>& pp = *paths[i].params;
        // out projection
        TensorT<T> d_cat_ur({n, 2 * c});
        linear_backward<T>(pc.cat, pp.out_w.value, d_up[i], &d_cat_ur, &pp.out_w.grad,
                           &pp.out_b.grad);
        TensorT<T> d_u({n, c}), d_res({n, c});
        concat_last_backward(d_cat_ur, &d_u, &d_res);
        // attended result: u[head] = s_own[head] . ctx[head]
        for (std::uint32_t head = 0; head < p.n_heads; ++head) {
            TensorT<T> d_uh = slice_last(d_u, head * chd, (head + 1) * chd);
            TensorT<T> s_own = slice_last(pc.inter, head * chd, (head + 1) * chd);
            // context used by this path
            const FfmPathCache<T>& ctx_cache = exchanged ? *paths[1 - i].cache : pc;
            TensorT<T> d_s = matmul_bt(d_uh, ctx_cache.attn[head]);  // d_uh . A^T
            slice_last_backward(d_s, head * chd, &d_inter[i]);
            TensorT<T> d_a = matmul_at(s_own, d_uh);  // S^T . d_uh
            auto& d_attn_dst = exchanged ? (i == 0 ? d_attn_x : d_attn_rgb)
                                         : (i == 0 ? d_attn_rgb : d_attn_x);
            for (std::size_t e = 0; e < d_a.size(); ++e) d_attn_dst[head][e] += d_a[e];
        }
        // residual embedding backward
        linear_backward<T>(pc.flat, pp.e_res_w.value, d_res, paths[i].d_flat, &pp.e_res_w.grad,
                           &pp.e_res_b.grad);
    }

    // context pipelines (after both paths contributed their attention grads)
    for (std::uint32_t head = 0; head < p.n_heads; ++head) {
        context_backward(cache.rgb, p.rgb, head, chd, d_attn_rgb[head], d_inter[0]);
        context_backward(cache.x, p.x, head, chd, d_attn_x[head], d_inter[1]);
    }
    for (int i = 0; i < 2; ++i) {
        const FfmPathCache<T>& pc = *paths[i].cache;
        FfmPathParamsT<T>& pp = *paths[i].params;
        linear_backward<T>(pc.flat, pp.e_inter_w.value, d_inter[i], paths[i].d_flat,
                           &pp.e_inter_w.grad, &pp.e_inter_b.grad);
    }
    return {d_rgb_flat.reshaped({h, w, c}), d_x_flat.reshaped({h, w, c})};
}

#define CMX_INSTANTIATE_FUSION(T)                                                             \
    template struct FfmParamsT<T>;                                                           \
    template std::pair<TensorT<T>, TensorT<T>> split_vectors(const TensorT<T>&,              \
                                                             const FfmPathParamsT<T>&);      \
    template TensorT<T> head_context(const TensorT<T>&, const FfmPathParamsT<T>&,            \
                                     std::size_t);                                           \
    template std::pair<TensorT<T>, TensorT<T>> cross_exchange(                               \
        const TensorT<T>&, const TensorT<T>&, const FfmParamsT<T>&, bool, FfmCache<T>*);     \
    template TensorT<T> fuse(const TensorT<T>&, const TensorT<T>&, const FfmParamsT<T>&,     \
                             FfmCache<T>*);                                                  \
    template TensorT<T> ffm(const TensorT<T>&, const TensorT<T>&, const FfmParamsT<T>&,      \
                            FfmMode, FfmCache<T>*);                                          \
    template std::pair<TensorT<T>, TensorT<T>> ffm_backward(const FfmCache<T>&,              \
                                                            FfmParamsT<T>&, const TensorT<T>&);

CMX_INSTANTIATE_FUSION(float)
CMX_INSTANTIATE_FUSION(double)

#undef CMX_INSTANTIATE_FUSION

}  // namespace cmx
