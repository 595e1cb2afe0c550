#include "cmx/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cmx/flops.hpp"

namespace cmx {

namespace {

// gelu tanh approximation, fixed published constants.
constexpr double k_gelu_c = 0.7978845608028654;  // sqrt(2/pi)
constexpr double k_gelu_a = 0.044715;

template <typename T>
T sigmoid_scalar(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
T gelu_scalar(T v) {
    const T u = static_cast<T>(k_gelu_c) * (v + static_cast<T>(k_gelu_a) * v * v * v);
    return T(0.5) * v * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad_scalar(T v) {
    const T c = static_cast<T>(k_gelu_c);
    const T a = static_cast<T>(k_gelu_a);
    const T u = c * (v + a * v * v * v);
    const T t = std::tanh(u);
    const T du = c * (T(1) + T(3) * a * v * v);
    return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
}

std::size_t last_extent(const Shape& s) { return s.back(); }

template <typename T>
void require_matrix(const TensorT<T>& t, const char* where) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(where) + ": expected rank-2 tensor, got " +
                         shape_string(t.shape()));
    }
}

}  // namespace

// --- elementwise -----------------------------------------------------------

template <typename T>
TensorT<T> pointwise(Pointwise kind, const TensorT<T>& x) {
    TensorT<T> y(x.shape());
    const std::size_t n = x.size();
    switch (kind) {
        case Pointwise::Sigmoid:
            for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid_scalar(x[i]);
            flops::add(4 * n);
            break;
        case Pointwise::Relu:
            for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
            flops::add(n);
            break;
        case Pointwise::Gelu:
            for (std::size_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
            flops::add(10 * n);
            break;
    }
    return y;
}

template <typename T>
TensorT<T> pointwise_backward(Pointwise kind, const TensorT<T>& x, const TensorT<T>& upstream) {
    require_same_shape(x, upstream, "pointwise_backward");
    TensorT<T> dx(x.shape());
    const std::size_t n = x.size();
    switch (kind) {
        case Pointwise::Sigmoid:
            for (std::size_t i = 0; i < n; ++i) {
                const T s = sigmoid_scalar(x[i]);
                dx[i] = upstream[i] * s * (T(1) - s);
            }
            break;
        case Pointwise::Relu:
            for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? upstream[i] : T(0);
            break;
        case Pointwise::Gelu:
            for (std::size_t i = 0; i < n; ++i) dx[i] = upstream[i] * gelu_grad_scalar(x[i]);
            break;
    }
    return dx;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    flops::add(a.size());
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "sub");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    flops::add(a.size());
    return out;
}

template <typename T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "hadamard");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    flops::add(a.size());
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    flops::add(a.size());
    return out;
}

template <typename T>
void axpy(T a, const TensorT<T>& x, TensorT<T>& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
    flops::add(2 * x.size());
}

template <typename T>
T sum(const TensorT<T>& a) {
    // Sequential last-axis-fastest order; keeps reductions bit-reproducible.
    T s = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    flops::add(a.size());
    return s;
}

// --- softmax ---------------------------------------------------------------

template <typename T>
TensorT<T> softmax_last(const TensorT<T>& x) {
    const std::size_t cols = last_extent(x.shape());
    const std::size_t rows = x.size() / cols;
    TensorT<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.raw() + r * cols;
        T* out = y.raw() + r * cols;
        T m = in[0];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, in[c]);
        T z = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] = std::exp(in[c] - m);
            z += out[c];
        }
        const T inv = T(1) / z;
        for (std::size_t c = 0; c < cols; ++c) out[c] *= inv;
    }
    flops::add(5 * x.size());
    return y;
}

template <typename T>
TensorT<T> softmax_last_backward(const TensorT<T>& y, const TensorT<T>& upstream) {
    require_same_shape(y, upstream, "softmax_last_backward");
    const std::size_t cols = last_extent(y.shape());
    const std::size_t rows = y.size() / cols;
    TensorT<T> dx(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = y.raw() + r * cols;
        const T* ur = upstream.raw() + r * cols;
        T* dr = dx.raw() + r * cols;
        T dot = T(0);
        for (std::size_t c = 0; c < cols; ++c) dot += ur[c] * yr[c];
        for (std::size_t c = 0; c < cols; ++c) dr[c] = yr[c] * (ur[c] - dot);
    }
    return dx;
}

// --- matmul / linear -------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k) {
        throw ShapeError("matmul: inner dims disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    TensorT<T> out({static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(n)});
    for (std::size_t i = 0; i < m; ++i) {
        T* orow = out.raw() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = a[i * k + kk];
            const T* brow = b.raw() + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    flops::add(2 * m * k * n);
    return out;
}

template <typename T>
TensorT<T> matmul_at(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul_at");
    require_matrix(b, "matmul_at");
    const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
    if (b.extent(0) != k) {
        throw ShapeError("matmul_at: leading dims disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    TensorT<T> out({static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(n)});
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* arow = a.raw() + kk * m;
        const T* brow = b.raw() + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* orow = out.raw() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    flops::add(2 * m * k * n);
    return out;
}

template <typename T>
TensorT<T> matmul_bt(const TensorT<T>& a, const TensorT<T>& b) {
    require_matrix(a, "matmul_bt");
    require_matrix(b, "matmul_bt");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
    if (b.extent(1) != k) {
        throw ShapeError("matmul_bt: inner dims disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
    }
    TensorT<T> out({static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(n)});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.raw() + i * k;
        T* orow = out.raw() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b.raw() + j * k;
            T s = T(0);
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            orow[j] = s;
        }
    }
    flops::add(2 * m * k * n);
    return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b) {
    require_matrix(x, "linear");
    require_matrix(w, "linear");
    if (x.extent(1) != w.extent(0)) {
        throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(w.shape()));
    }
    TensorT<T> y = matmul(x, w);
    if (b) {
        const std::size_t n = y.extent(0), c = y.extent(1);
        if (b->size() != c) {
            throw ShapeError("linear: bias " + shape_string(b->shape()) + " does not match weight " +
                             shape_string(w.shape()));
        }
        for (std::size_t i = 0; i < n; ++i) {
            T* row = y.raw() + i * c;
            for (std::size_t j = 0; j < c; ++j) row[j] += (*b)[j];
        }
        flops::add(n * c);
    }
    return y;
}

template <typename T>
void linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& upstream,
                     TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
    if (dx) {
        TensorT<T> g = matmul_bt(upstream, w);  // up . W^T
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
    }
    if (dw) {
        TensorT<T> g = matmul_at(x, upstream);  // x^T . up
        for (std::size_t i = 0; i < g.size(); ++i) (*dw)[i] += g[i];
    }
    if (db) {
        const std::size_t n = upstream.extent(0), c = upstream.extent(1);
        for (std::size_t i = 0; i < n; ++i) {
            const T* row = upstream.raw() + i * c;
            for (std::size_t j = 0; j < c; ++j) (*db)[j] += row[j];
        }
    }
}

// --- convolutions ----------------------------------------------------------

template <typename T>
TensorT<T> conv1x1(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b) {
    require_rank(x, 3, "conv1x1");
    const std::uint32_t h = x.extent(0), wd = x.extent(1), cin = x.extent(2);
    if (w.rank() != 2 || w.extent(0) != cin) {
        throw ShapeError("conv1x1: input " + shape_string(x.shape()) + " does not match kernel " +
                         shape_string(w.shape()));
    }
    TensorT<T> flat = x.reshaped({h * wd, cin});
    TensorT<T> y = linear(flat, w, b);
    return y.reshaped({h, wd, w.extent(1)});
}

template <typename T>
void conv1x1_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& upstream,
                      TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
    const std::uint32_t h = x.extent(0), wd = x.extent(1), cin = x.extent(2);
    TensorT<T> flat = x.reshaped({h * wd, cin});
    TensorT<T> up = upstream.reshaped({h * wd, upstream.extent(2)});
    if (dx) {
        TensorT<T> dflat({h * wd, cin});
        linear_backward<T>(flat, w, up, &dflat, dw, db);
        TensorT<T> g = dflat.reshaped(x.shape());
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
    } else {
        linear_backward<T>(flat, w, up, nullptr, dw, db);
    }
}

template <typename T>
TensorT<T> dwconv3x3(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b) {
    require_rank(x, 3, "dwconv3x3");
    const std::int64_t h = x.extent(0), wd = x.extent(1), c = x.extent(2);
    if (w.rank() != 3 || w.extent(0) != 3 || w.extent(1) != 3 ||
        w.extent(2) != static_cast<std::uint32_t>(c)) {
        throw ShapeError("dwconv3x3: input " + shape_string(x.shape()) + " does not match kernel " +
                         shape_string(w.shape()));
    }
    TensorT<T> y(x.shape());
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < wd; ++j) {
            T* out = y.raw() + (i * wd + j) * c;
            if (b) {
                for (std::int64_t ch = 0; ch < c; ++ch) out[ch] = (*b)[ch];
            }
            for (std::int64_t kh = 0; kh < 3; ++kh) {
                const std::int64_t ii = i + kh - 1;
                if (ii < 0 || ii >= h) continue;
                for (std::int64_t kw = 0; kw < 3; ++kw) {
                    const std::int64_t jj = j + kw - 1;
                    if (jj < 0 || jj >= wd) continue;
                    const T* in = x.raw() + (ii * wd + jj) * c;
                    const T* ker = w.raw() + (kh * 3 + kw) * c;
                    for (std::int64_t ch = 0; ch < c; ++ch) out[ch] += ker[ch] * in[ch];
                }
            }
        }
    }
    flops::add(static_cast<std::uint64_t>(18 * h * wd * c));
    return y;
}

template <typename T>
void dwconv3x3_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& upstream,
                        TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
    const std::int64_t h = x.extent(0), wd = x.extent(1), c = x.extent(2);
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < wd; ++j) {
            const T* up = upstream.raw() + (i * wd + j) * c;
            if (db) {
                for (std::int64_t ch = 0; ch < c; ++ch) (*db)[ch] += up[ch];
            }
            for (std::int64_t kh = 0; kh < 3; ++kh) {
                const std::int64_t ii = i + kh - 1;
                if (ii < 0 || ii >= h) continue;
                for (std::int64_t kw = 0; kw < 3; ++kw) {
                    const std::int64_t jj = j + kw - 1;
                    if (jj < 0 || jj >= wd) continue;
                    const std::size_t in_off = static_cast<std::size_t>((ii * wd + jj) * c);
                    const std::size_t k_off = static_cast<std::size_t>((kh * 3 + kw) * c);
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        if (dw) (*dw)[k_off + ch] += up[ch] * x[in_off + ch];
                        if (dx) (*dx)[in_off + ch] += up[ch] * w[k_off + ch];
                    }
                }
            }
        }
    }
}

// --- pooling / resampling --------------------------------------------------

template <typename T>
TensorT<T> global_pool(PoolKind kind, const TensorT<T>& x, std::vector<std::uint32_t>* argmax) {
    require_rank(x, 3, "global_pool");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    const std::size_t hw = h * w;
    TensorT<T> out({static_cast<std::uint32_t>(c)});
    if (kind == PoolKind::Avg) {
        for (std::size_t p = 0; p < hw; ++p) {
            const T* in = x.raw() + p * c;
            for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[ch];
        }
        const T inv = T(1) / static_cast<T>(hw);
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] *= inv;
    } else {
        if (argmax) argmax->assign(c, 0);
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] = x[ch];
        for (std::size_t p = 1; p < hw; ++p) {
            const T* in = x.raw() + p * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                if (in[ch] > out[ch]) {
                    out[ch] = in[ch];
                    if (argmax) (*argmax)[ch] = static_cast<std::uint32_t>(p);
                }
            }
        }
    }
    flops::add(x.size());
    return out;
}

template <typename T>
void global_avg_pool_backward(const Shape& in_shape, const TensorT<T>& upstream, TensorT<T>* dx) {
    const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
    const T inv = T(1) / static_cast<T>(h * w);
    for (std::size_t p = 0; p < h * w; ++p) {
        T* out = dx->raw() + p * c;
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += upstream[ch] * inv;
    }
}

template <typename T>
void global_max_pool_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax,
                              const TensorT<T>& upstream, TensorT<T>* dx) {
    const std::size_t c = in_shape[2];
    for (std::size_t ch = 0; ch < c; ++ch) {
        (*dx)[argmax[ch] * c + ch] += upstream[ch];
    }
}

template <typename T>
TensorT<T> avgpool(const TensorT<T>& x, std::uint32_t s) {
    require_rank(x, 3, "avgpool");
    const std::uint32_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (h % s != 0 || w % s != 0) {
        throw ShapeError("avgpool: " + shape_string(x.shape()) + " not divisible by stride " +
                         std::to_string(s));
    }
    const std::uint32_t ho = h / s, wo = w / s;
    TensorT<T> y({ho, wo, c});
    const T inv = T(1) / static_cast<T>(s * s);
    for (std::uint32_t i = 0; i < ho; ++i) {
        for (std::uint32_t j = 0; j < wo; ++j) {
            T* out = y.raw() + (static_cast<std::size_t>(i) * wo + j) * c;
            for (std::uint32_t di = 0; di < s; ++di) {
                for (std::uint32_t dj = 0; dj < s; ++dj) {
                    const T* in =
                        x.raw() + (static_cast<std::size_t>(i * s + di) * w + (j * s + dj)) * c;
                    for (std::uint32_t ch = 0; ch < c; ++ch) out[ch] += in[ch];
                }
            }
            for (std::uint32_t ch = 0; ch < c; ++ch) out[ch] *= inv;
        }
    }
    flops::add(x.size() + y.size());
    return y;
}

template <typename T>
void avgpool_backward(const Shape& in_shape, std::uint32_t s, const TensorT<T>& upstream,
                      TensorT<T>* dx) {
    const std::uint32_t w = in_shape[1], c = in_shape[2];
    const std::uint32_t ho = upstream.extent(0), wo = upstream.extent(1);
    const T inv = T(1) / static_cast<T>(s * s);
    for (std::uint32_t i = 0; i < ho; ++i) {
        for (std::uint32_t j = 0; j < wo; ++j) {
            const T* up = upstream.raw() + (static_cast<std::size_t>(i) * wo + j) * c;
            for (std::uint32_t di = 0; di < s; ++di) {
                for (std::uint32_t dj = 0; dj < s; ++dj) {
                    T* out =
                        dx->raw() + (static_cast<std::size_t>(i * s + di) * w + (j * s + dj)) * c;
                    for (std::uint32_t ch = 0; ch < c; ++ch) out[ch] += up[ch] * inv;
                }
            }
        }
    }
}

template <typename T>
TensorT<T> upsample_nearest(const TensorT<T>& x, std::uint32_t s) {
    require_rank(x, 3, "upsample_nearest");
    const std::uint32_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    TensorT<T> y({h * s, w * s, c});
    for (std::uint32_t i = 0; i < h * s; ++i) {
        for (std::uint32_t j = 0; j < w * s; ++j) {
            const T* in = x.raw() + (static_cast<std::size_t>(i / s) * w + (j / s)) * c;
            T* out = y.raw() + (static_cast<std::size_t>(i) * w * s + j) * c;
            for (std::uint32_t ch = 0; ch < c; ++ch) out[ch] = in[ch];
        }
    }
    return y;
}

template <typename T>
void upsample_nearest_backward(const Shape& in_shape, std::uint32_t s, const TensorT<T>& upstream,
                               TensorT<T>* dx) {
    const std::uint32_t w = in_shape[1], c = in_shape[2];
    const std::uint32_t hu = upstream.extent(0), wu = upstream.extent(1);
    for (std::uint32_t i = 0; i < hu; ++i) {
        for (std::uint32_t j = 0; j < wu; ++j) {
            const T* up = upstream.raw() + (static_cast<std::size_t>(i) * wu + j) * c;
            T* out = dx->raw() + (static_cast<std::size_t>(i / s) * w + (j / s)) * c;
            for (std::uint32_t ch = 0; ch < c; ++ch) out[ch] += up[ch];
        }
    }
}

// --- concat / slicing ------------------------------------------------------

template <typename T>
TensorT<T> concat_last(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != b.rank()) {
        throw ShapeError("concat_last: rank mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
    Shape out_shape = a.shape();
    for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
        if (a.extent(i) != b.extent(i)) {
            throw ShapeError("concat_last: leading extents disagree, " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
        }
    }
    const std::size_t ca = a.shape().back(), cb = b.shape().back();
    out_shape.back() = static_cast<std::uint32_t>(ca + cb);
    const std::size_t rows = a.size() / ca;
    TensorT<T> out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        T* dst = out.raw() + r * (ca + cb);
        const T* pa = a.raw() + r * ca;
        const T* pb = b.raw() + r * cb;
        for (std::size_t i = 0; i < ca; ++i) dst[i] = pa[i];
        for (std::size_t i = 0; i < cb; ++i) dst[ca + i] = pb[i];
    }
    return out;
}

template <typename T>
void concat_last_backward(const TensorT<T>& upstream, TensorT<T>* da, TensorT<T>* db) {
    const std::size_t ca = da->shape().back(), cb = db->shape().back();
    const std::size_t rows = da->size() / ca;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* up = upstream.raw() + r * (ca + cb);
        T* pa = da->raw() + r * ca;
        T* pb = db->raw() + r * cb;
        for (std::size_t i = 0; i < ca; ++i) pa[i] += up[i];
        for (std::size_t i = 0; i < cb; ++i) pb[i] += up[ca + i];
    }
}

template <typename T>
TensorT<T> slice_last(const TensorT<T>& x, std::uint32_t c0, std::uint32_t c1) {
    const std::size_t c = x.shape().back();
    if (c0 >= c1 || c1 > c) {
        throw ShapeError("slice_last: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_string(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = c1 - c0;
    const std::size_t rows = x.size() / c;
    TensorT<T> out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.raw() + r * c + c0;
        T* dst = out.raw() + r * (c1 - c0);
        for (std::size_t i = 0; i < c1 - c0; ++i) dst[i] = in[i];
    }
    return out;
}

template <typename T>
void slice_last_backward(const TensorT<T>& upstream, std::uint32_t c0, TensorT<T>* dx) {
    const std::size_t c = dx->shape().back();
    const std::size_t cs = upstream.shape().back();
    const std::size_t rows = dx->size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* up = upstream.raw() + r * cs;
        T* out = dx->raw() + r * c + c0;
        for (std::size_t i = 0; i < cs; ++i) out[i] += up[i];
    }
}

// --- broadcast products ------------------------------------------------------

template <typename T>
TensorT<T> mul_channel_vec(const TensorT<T>& x, const TensorT<T>& v) {
    require_rank(x, 3, "mul_channel_vec");
    const std::size_t c = x.extent(2);
    if (v.size() != c) {
        throw ShapeError("mul_channel_vec: vector " + shape_string(v.shape()) +
                         " does not match channels of " + shape_string(x.shape()));
    }
    TensorT<T> out(x.shape());
    const std::size_t hw = x.size() / c;
    for (std::size_t p = 0; p < hw; ++p) {
        const T* in = x.raw() + p * c;
        T* o = out.raw() + p * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] = in[ch] * v[ch];
    }
    flops::add(x.size());
    return out;
}

template <typename T>
void mul_channel_vec_backward(const TensorT<T>& x, const TensorT<T>& v, const TensorT<T>& upstream,
                              TensorT<T>* dx, TensorT<T>* dv) {
    const std::size_t c = x.extent(2);
    const std::size_t hw = x.size() / c;
    for (std::size_t p = 0; p < hw; ++p) {
        const T* in = x.raw() + p * c;
        const T* up = upstream.raw() + p * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
            if (dx) (*dx)[p * c + ch] += up[ch] * v[ch];
            if (dv) (*dv)[ch] += up[ch] * in[ch];
        }
    }
}

template <typename T>
TensorT<T> mul_spatial_map(const TensorT<T>& x, const TensorT<T>& m) {
    require_rank(x, 3, "mul_spatial_map");
    const std::size_t c = x.extent(2);
    const std::size_t hw = x.size() / c;
    if (m.size() != hw) {
        throw ShapeError("mul_spatial_map: map " + shape_string(m.shape()) +
                         " does not match spatial dims of " + shape_string(x.shape()));
    }
    TensorT<T> out(x.shape());
    for (std::size_t p = 0; p < hw; ++p) {
        const T* in = x.raw() + p * c;
        T* o = out.raw() + p * c;
        const T mv = m[p];
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] = in[ch] * mv;
    }
    flops::add(x.size());
    return out;
}

template <typename T>
void mul_spatial_map_backward(const TensorT<T>& x, const TensorT<T>& m, const TensorT<T>& upstream,
                              TensorT<T>* dx, TensorT<T>* dm) {
    const std::size_t c = x.extent(2);
    const std::size_t hw = x.size() / c;
    for (std::size_t p = 0; p < hw; ++p) {
        const T* in = x.raw() + p * c;
        const T* up = upstream.raw() + p * c;
        const T mv = m[p];
        for (std::size_t ch = 0; ch < c; ++ch) {
            if (dx) (*dx)[p * c + ch] += up[ch] * mv;
            if (dm) (*dm)[p] += up[ch] * in[ch];
        }
    }
}

// --- explicit instantiations -------------------------------------------------

#define CMX_INSTANTIATE_OPS(T)                                                                     \
    template TensorT<T> pointwise(Pointwise, const TensorT<T>&);                                   \
    template TensorT<T> pointwise_backward(Pointwise, const TensorT<T>&, const TensorT<T>&);       \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                                 \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                                 \
    template TensorT<T> hadamard(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> scale(const TensorT<T>&, T);                                               \
    template void axpy(T, const TensorT<T>&, TensorT<T>&);                                         \
    template T sum(const TensorT<T>&);                                                             \
    template TensorT<T> softmax_last(const TensorT<T>&);                                           \
    template TensorT<T> softmax_last_backward(const TensorT<T>&, const TensorT<T>&);               \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                              \
    template TensorT<T> matmul_at(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> matmul_bt(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> linear(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*);           \
    template void linear_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,         \
                                  TensorT<T>*, TensorT<T>*, TensorT<T>*);                          \
    template TensorT<T> conv1x1(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*);          \
    template void conv1x1_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,        \
                                   TensorT<T>*, TensorT<T>*, TensorT<T>*);                         \
    template TensorT<T> dwconv3x3(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*);        \
    template void dwconv3x3_backward(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,      \
                                     TensorT<T>*, TensorT<T>*, TensorT<T>*);                       \
    template TensorT<T> global_pool(PoolKind, const TensorT<T>&, std::vector<std::uint32_t>*);     \
    template void global_avg_pool_backward(const Shape&, const TensorT<T>&, TensorT<T>*);          \
    template void global_max_pool_backward(const Shape&, const std::vector<std::uint32_t>&,        \
                                           const TensorT<T>&, TensorT<T>*);                        \
    template TensorT<T> avgpool(const TensorT<T>&, std::uint32_t);                                 \
    template void avgpool_backward(const Shape&, std::uint32_t, const TensorT<T>&, TensorT<T>*);   \
    template TensorT<T> upsample_nearest(const TensorT<T>&, std::uint32_t);                        \
    template void upsample_nearest_backward(const Shape&, std::uint32_t, const TensorT<T>&,        \
                                            TensorT<T>*);                                          \
    template TensorT<T> concat_last(const TensorT<T>&, const TensorT<T>&);                         \
    template void concat_last_backward(const TensorT<T>&, TensorT<T>*, TensorT<T>*);               \
    template TensorT<T> slice_last(const TensorT<T>&, std::uint32_t, std::uint32_t);               \
    template void slice_last_backward(const TensorT<T>&, std::uint32_t, TensorT<T>*);              \
    template TensorT<T> mul_channel_vec(const TensorT<T>&, const TensorT<T>&);                     \
    template void mul_channel_vec_backward(const TensorT<T>&, const TensorT<T>&,                   \
                                           const TensorT<T>&, TensorT<T>*, TensorT<T>*);           \
    template TensorT<T> mul_spatial_map(const TensorT<T>&, const TensorT<T>&);                     \
    template void mul_spatial_map_backward(const TensorT<T>&, const TensorT<T>&,                   \
                                           const TensorT<T>&, TensorT<T>*, TensorT<T>*);

CMX_INSTANTIATE_OPS(float)
CMX_INSTANTIATE_OPS(double)

#undef CMX_INSTANTIATE_OPS

}  // namespace cmx
