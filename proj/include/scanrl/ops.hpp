#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "scanrl/tape.hpp"
#include "scanrl/tensor.hpp"

namespace scanrl {

enum class ActKind { relu, tanh, sigmoid };
enum class NetMode { train, infer };

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
inline bool track_grad(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
    if (!tape) return false;
    for (const Tensor<T>* t : ins) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// Unpads and strides exactly like conv2d's forward; shared by both
// convolution directions. Writes the [c*k*k, ho*wo] patch matrix of one
// sample into a wider all-samples matrix whose rows have row_stride entries,
// starting at column col0.
template <typename T>
inline void im2col(const T* img, int c, int h, int w, int k, int stride, int ho, int wo, T* cols,
                   std::int64_t row_stride, std::int64_t col0) {
    const int pad = (k - 1) / 2;
    for (int ch = 0; ch < c; ch++) {
        for (int ky = 0; ky < k; ky++) {
            for (int kx = 0; kx < k; kx++) {
                T* row = cols + (static_cast<std::int64_t>((ch * k + ky) * k + kx)) * row_stride + col0;
                for (int oy = 0; oy < ho; oy++) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + oy * wo, row + (oy + 1) * wo, T(0));
                        continue;
                    }
                    const T* src = img + (static_cast<std::int64_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < wo; ox++) {
                        const int ix = ox * stride + kx - pad;
                        row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds one sample's column block back into its
// image buffer.
template <typename T>
inline void col2im_add(const T* cols, int c, int h, int w, int k, int stride, int ho, int wo, T* img,
                       std::int64_t row_stride, std::int64_t col0) {
    const int pad = (k - 1) / 2;
    for (int ch = 0; ch < c; ch++) {
        for (int ky = 0; ky < k; ky++) {
            for (int kx = 0; kx < k; kx++) {
                const T* row = cols + (static_cast<std::int64_t>((ch * k + ky) * k + kx)) * row_stride + col0;
                for (int oy = 0; oy < ho; oy++) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = img + (static_cast<std::int64_t>(ch) * h + iy) * w;
                    for (int ox = 0; ox < wo; ox++) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

// Above this many patch-matrix entries the lowered GEMM form is dominated by
// materialization traffic and the direct loops win. Mutable so tests can
// force either path onto small shapes.
inline std::int64_t g_direct_conv_threshold = std::int64_t(1) << 20;

// Direct cross-correlation of one sample, accumulating into out.
template <typename T>
inline void direct_conv_sample(const T* x, const T* kernel, T* out, int ci, int h, int w, int co, int k,
                               int stride, int ho, int wo) {
    const int pad = (k - 1) / 2;
    for (int oc = 0; oc < co; oc++) {
        T* oplane = out + static_cast<std::int64_t>(oc) * ho * wo;
        for (int ic = 0; ic < ci; ic++) {
            const T* xplane = x + static_cast<std::int64_t>(ic) * h * w;
            const T* kbase = kernel + (static_cast<std::int64_t>(oc) * ci + ic) * k * k;
            for (int ky = 0; ky < k; ky++) {
                for (int kx = 0; kx < k; kx++) {
                    const T wgt = kbase[ky * k + kx];
                    if (wgt == T(0)) continue;
                    for (int oy = 0; oy < ho; oy++) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const T* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                        T* orow = oplane + static_cast<std::int64_t>(oy) * wo;
                        int ox_lo = 0, ox_hi = wo;
                        while (ox_lo < wo && ox_lo * stride + kx - pad < 0) ox_lo++;
                        while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad >= w) ox_hi--;
                        const T* xs = xrow + ox_lo * stride + kx - pad;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox < ox_hi; ox++) orow[ox] += wgt * xs[ox - ox_lo];
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ox++) {
                                orow[ox] += wgt * xs[(ox - ox_lo) * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

// d(conv)/dx of one sample: scatter the output gradient back through the
// kernel (the same geometry as direct_conv_sample, reversed).
template <typename T>
inline void direct_conv_dx_sample(const T* gout, const T* kernel, T* gx, int ci, int h, int w, int co, int k,
                                  int stride, int ho, int wo) {
    const int pad = (k - 1) / 2;
    for (int oc = 0; oc < co; oc++) {
        const T* gplane = gout + static_cast<std::int64_t>(oc) * ho * wo;
        for (int ic = 0; ic < ci; ic++) {
            T* xplane = gx + static_cast<std::int64_t>(ic) * h * w;
            const T* kbase = kernel + (static_cast<std::int64_t>(oc) * ci + ic) * k * k;
            for (int ky = 0; ky < k; ky++) {
                for (int kx = 0; kx < k; kx++) {
                    const T wgt = kbase[ky * k + kx];
                    if (wgt == T(0)) continue;
                    for (int oy = 0; oy < ho; oy++) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        T* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                        const T* grow = gplane + static_cast<std::int64_t>(oy) * wo;
                        int ox_lo = 0, ox_hi = wo;
                        while (ox_lo < wo && ox_lo * stride + kx - pad < 0) ox_lo++;
                        while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad >= w) ox_hi--;
                        T* xs = xrow + ox_lo * stride + kx - pad;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox < ox_hi; ox++) xs[ox - ox_lo] += wgt * grow[ox];
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ox++) {
                                xs[(ox - ox_lo) * stride] += wgt * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

// d(conv)/dK of one sample: per-tap dot products of shifted planes.
template <typename T>
inline void direct_conv_dk_sample(const T* x, const T* gout, T* gk, int ci, int h, int w, int co, int k,
                                  int stride, int ho, int wo) {
    const int pad = (k - 1) / 2;
    for (int oc = 0; oc < co; oc++) {
        const T* gplane = gout + static_cast<std::int64_t>(oc) * ho * wo;
        for (int ic = 0; ic < ci; ic++) {
            const T* xplane = x + static_cast<std::int64_t>(ic) * h * w;
            T* kbase = gk + (static_cast<std::int64_t>(oc) * ci + ic) * k * k;
            for (int ky = 0; ky < k; ky++) {
                for (int kx = 0; kx < k; kx++) {
                    T acc = T(0);
                    for (int oy = 0; oy < ho; oy++) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const T* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                        const T* grow = gplane + static_cast<std::int64_t>(oy) * wo;
                        int ox_lo = 0, ox_hi = wo;
                        while (ox_lo < wo && ox_lo * stride + kx - pad < 0) ox_lo++;
                        while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad >= w) ox_hi--;
                        const T* xs = xrow + ox_lo * stride + kx - pad;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox < ox_hi; ox++) acc += grow[ox] * xs[ox - ox_lo];
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ox++) {
                                acc += grow[ox] * xs[(ox - ox_lo) * stride];
                            }
                        }
                    }
                    kbase[ky * k + kx] += acc;
                }
            }
        }
    }
}

// [n, c, hw] tensor layout <-> [c, n*hw] matrix layout, per-sample row
// segments, so one GEMM covers the whole batch.
template <typename T>
inline void gather_channels(const T* src, int n, int c, std::int64_t hw, T* dst) {
    for (int s = 0; s < n; s++) {
        for (int ch = 0; ch < c; ch++) {
            std::copy(src + (static_cast<std::int64_t>(s) * c + ch) * hw,
                      src + (static_cast<std::int64_t>(s) * c + ch + 1) * hw,
                      dst + ch * (static_cast<std::int64_t>(n) * hw) + s * hw);
        }
    }
}

template <typename T>
inline void scatter_channels(const T* src, int n, int c, std::int64_t hw, T* dst, bool accumulate) {
    for (int s = 0; s < n; s++) {
        for (int ch = 0; ch < c; ch++) {
            const T* from = src + ch * (static_cast<std::int64_t>(n) * hw) + s * hw;
            T* to = dst + (static_cast<std::int64_t>(s) * c + ch) * hw;
            if (accumulate) {
                for (std::int64_t i = 0; i < hw; i++) to[i] += from[i];
            } else {
                std::copy(from, from + hw, to);
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    auto oa = a.data(), ob = b.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < out.size(); i++) od[i] = oa[i] + ob[i];
    if (detail::track_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(out, [out, a, b]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (size_t i = 0; i < g.size(); i++) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (size_t i = 0; i < g.size(); i++) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    auto oa = a.data(), ob = b.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < out.size(); i++) od[i] = oa[i] - ob[i];
    if (detail::track_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(out, [out, a, b]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (size_t i = 0; i < g.size(); i++) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (size_t i = 0; i < g.size(); i++) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
    Tensor<T> out(x.shape());
    auto xi = x.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < out.size(); i++) od[i] = factor * xi[i];
    if (detail::track_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, factor]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (size_t i = 0; i < g.size(); i++) gx[i] += factor * g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> square(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto xi = x.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < out.size(); i++) od[i] = xi[i] * xi[i];
    if (detail::track_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            auto xi = x.data();
            for (size_t i = 0; i < g.size(); i++) gx[i] += T(2) * xi[i] * g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (detail::track_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x]() mutable {
            if (!out.has_grad()) return;
            const T g = out.grad()[0];
            auto gx = x.grad();
            for (size_t i = 0; i < gx.size(); i++) gx[i] += g;
        });
    }
    return out;
}

// Sums every trailing dimension, one value per leading row.
template <typename T>
Tensor<T> sum_per_sample(Tape<T>* tape, const Tensor<T>& x) {
    if (x.rank() < 2) throw DimensionError("sum_per_sample: need rank >= 2, got " + shape_str(x.shape()));
    const int n = x.shape()[0];
    const std::int64_t per = x.size() / n;
    Tensor<T> out(Shape{n});
    auto xi = x.data();
    auto od = out.data();
    for (int i = 0; i < n; i++) {
        T acc = T(0);
        for (std::int64_t j = 0; j < per; j++) acc += xi[i * per + j];
        od[i] = acc;
    }
    if (detail::track_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, n, per]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (int i = 0; i < n; i++) {
                for (std::int64_t j = 0; j < per; j++) gx[i * per + j] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T>* tape, const Tensor<T>& x) {
    return scale(tape, sum(tape, x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.size()) +
                             " elements, target " + shape_str(shape) + " wants " + std::to_string(numel(shape)));
    }
    Tensor<T> out(shape);
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    if (detail::track_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            for (size_t i = 0; i < g.size(); i++) gx[i] += g[i];
        });
    }
    return out;
}

// [n x m_0], [n x m_1], ... -> [n x sum(m_i)]
template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    const int n = parts[0].shape()[0];
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape()[0] != n) {
            throw DimensionError("concat_cols: incompatible part " + shape_str(p.shape()));
        }
        total += p.shape()[1];
    }
    Tensor<T> out(Shape{n, total});
    auto od = out.data();
    int col0 = 0;
    for (const auto& p : parts) {
        const int m = p.shape()[1];
        auto pd = p.data();
        for (int i = 0; i < n; i++) {
            std::copy(pd.begin() + i * m, pd.begin() + (i + 1) * m, od.begin() + i * total + col0);
        }
        col0 += m;
    }
    bool track = false;
    for (const auto& p : parts) track = track || (tape && p.requires_grad());
    if (track) {
        out.set_requires_grad(true);
        tape->record(out, [out, parts, n, total]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            int col0 = 0;
            for (auto& p : parts) {
                const int m = p.shape()[1];
                if (p.requires_grad()) {
                    auto gp = p.grad();
                    for (int i = 0; i < n; i++) {
                        for (int j = 0; j < m; j++) gp[i * m + j] += g[i * total + col0 + j];
                    }
                }
                col0 += m;
            }
        });
    }
    return out;
}

// Repeats a vector [m] across n rows -> [n x m].
template <typename T>
Tensor<T> broadcast_rows(Tape<T>* tape, const Tensor<T>& v, int n) {
    if (v.rank() != 1) throw DimensionError("broadcast_rows: need rank-1, got " + shape_str(v.shape()));
    const int m = v.shape()[0];
    Tensor<T> out(Shape{n, m});
    auto vd = v.data();
    auto od = out.data();
    for (int i = 0; i < n; i++) std::copy(vd.begin(), vd.end(), od.begin() + i * m);
    if (detail::track_grad(tape, {&v})) {
        out.set_requires_grad(true);
        tape->record(out, [out, v, n, m]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gv = v.grad();
            for (int i = 0; i < n; i++) {
                for (int j = 0; j < m; j++) gv[j] += g[i * m + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " are not composable");
    }
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<T> out(Shape{m, n});
    {
        detail::ECMap<T> ma(a.data().data(), m, k);
        detail::ECMap<T> mb(b.data().data(), k, n);
        detail::EMap<T> mo(out.data().data(), m, n);
        mo.noalias() = ma * mb;
    }
    if (detail::track_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record(out, [out, a, b, m, k, n]() mutable {
            if (!out.has_grad()) return;
            detail::ECMap<T> g(out.grad().data(), m, n);
            detail::ECMap<T> ma(a.data().data(), m, k);
            detail::ECMap<T> mb(b.data().data(), k, n);
            if (a.requires_grad()) {
                detail::EMap<T> ga(a.grad().data(), m, k);
                ga.noalias() += g * mb.transpose();
            }
            if (b.requires_grad()) {
                detail::EMap<T> gb(b.grad().data(), k, n);
                gb.noalias() += ma.transpose() * g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> activation(Tape<T>* tape, const Tensor<T>& x, ActKind kind) {
    Tensor<T> out(x.shape());
    auto xi = x.data();
    auto od = out.data();
    switch (kind) {
        case ActKind::relu:
            for (std::int64_t i = 0; i < out.size(); i++) od[i] = xi[i] > T(0) ? xi[i] : T(0);
            break;
        case ActKind::tanh:
            for (std::int64_t i = 0; i < out.size(); i++) od[i] = std::tanh(xi[i]);
            break;
        case ActKind::sigmoid:
            for (std::int64_t i = 0; i < out.size(); i++) od[i] = T(1) / (T(1) + std::exp(-xi[i]));
            break;
    }
    if (detail::track_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, kind]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            auto y = out.data();
            switch (kind) {
                case ActKind::relu:
                    for (size_t i = 0; i < g.size(); i++) gx[i] += y[i] > T(0) ? g[i] : T(0);
                    break;
                case ActKind::tanh:
                    for (size_t i = 0; i < g.size(); i++) gx[i] += (T(1) - y[i] * y[i]) * g[i];
                    break;
                case ActKind::sigmoid:
                    for (size_t i = 0; i < g.size(); i++) gx[i] += y[i] * (T(1) - y[i]) * g[i];
                    break;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    return activation(tape, x, ActKind::relu);
}

// Normalizes each row of [n x m] to unit length. Rows whose norm falls
// under `floor` come out as the first basis vector with zero gradient.
template <typename T>
Tensor<T> unit_rows(Tape<T>* tape, const Tensor<T>& x, T floor = T(1e-8)) {
    if (x.rank() != 2) throw DimensionError("unit_rows: need rank-2, got " + shape_str(x.shape()));
    const int n = x.shape()[0], m = x.shape()[1];
    Tensor<T> out(x.shape());
    std::vector<T> norms(n);
    auto xi = x.data();
    auto od = out.data();
    for (int i = 0; i < n; i++) {
        T s = T(0);
        for (int j = 0; j < m; j++) s += xi[i * m + j] * xi[i * m + j];
        const T r = std::sqrt(s);
        norms[i] = r;
        if (r < floor) {
            od[i * m] = T(1);
            for (int j = 1; j < m; j++) od[i * m + j] = T(0);
        } else {
            for (int j = 0; j < m; j++) od[i * m + j] = xi[i * m + j] / r;
        }
    }
    if (detail::track_grad(tape, {&x})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, norms = std::move(norms), n, m, floor]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.grad();
            auto y = out.data();
            for (int i = 0; i < n; i++) {
                if (norms[i] < floor) continue;
                T dot = T(0);
                for (int j = 0; j < m; j++) dot += g[i * m + j] * y[i * m + j];
                for (int j = 0; j < m; j++) gx[i * m + j] += (g[i * m + j] - y[i * m + j] * dot) / norms[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions: zero "same" padding of (k-1)/2, then striding, so that the
// output extent is ceil(extent / stride). The transposed form is the exact
// adjoint, mapping kernel channel 0 extents back up by a factor of stride.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct ConvDims {
    int n, ci, h, w, co, k, ho, wo;
    bool batched;
};

template <typename T>
inline ConvDims<T> conv_dims(const Tensor<T>& x, const Tensor<T>& kernel, int stride, const char* op) {
    if (kernel.rank() != 4 || kernel.shape()[2] != kernel.shape()[3]) {
        throw DimensionError(std::string(op) + ": kernel must be [co x ci x k x k], got " +
                             shape_str(kernel.shape()));
    }
    const int k = kernel.shape()[2];
    if (k % 2 == 0) throw ConfigError(std::string(op) + ": kernel width must be odd, got " + std::to_string(k));
    if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1, got " + std::to_string(stride));
    ConvDims<T> d;
    d.batched = x.rank() == 4;
    if (x.rank() != 3 && x.rank() != 4) {
        throw DimensionError(std::string(op) + ": input must be [c x h x w] or [n x c x h x w], got " +
                             shape_str(x.shape()));
    }
    d.n = d.batched ? x.shape()[0] : 1;
    d.ci = x.shape()[d.batched ? 1 : 0];
    d.h = x.shape()[d.batched ? 2 : 1];
    d.w = x.shape()[d.batched ? 3 : 2];
    d.co = kernel.shape()[0];
    d.k = k;
    d.ho = (d.h - 1) / stride + 1;
    d.wo = (d.w - 1) / stride + 1;
    return d;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& kernel, int stride) {
    auto d = detail::conv_dims(x, kernel, stride, "conv2d");
    if (kernel.shape()[1] != d.ci) {
        throw DimensionError("conv2d: input channels " + std::to_string(d.ci) + " vs kernel " +
                             shape_str(kernel.shape()));
    }
    const std::int64_t col_rows = static_cast<std::int64_t>(d.ci) * d.k * d.k;
    const std::int64_t col_cols = static_cast<std::int64_t>(d.ho) * d.wo;
    const std::int64_t all_cols = col_cols * d.n;
    Shape out_shape = d.batched ? Shape{d.n, d.co, d.ho, d.wo} : Shape{d.co, d.ho, d.wo};
    Tensor<T> out(out_shape);

    const std::int64_t in_stride = static_cast<std::int64_t>(d.ci) * d.h * d.w;
    const std::int64_t out_stride = static_cast<std::int64_t>(d.co) * col_cols;
    const bool direct = stride == 1 && col_rows * all_cols > detail::g_direct_conv_threshold;

    if (direct) {
        for (int s = 0; s < d.n; s++) {
            detail::direct_conv_sample(x.data().data() + s * in_stride, kernel.data().data(),
                                       out.data().data() + s * out_stride, d.ci, d.h, d.w, d.co, d.k, stride,
                                       d.ho, d.wo);
        }
        if (detail::track_grad(tape, {&x, &kernel})) {
            out.set_requires_grad(true);
            tape->record(out, [out, x, kernel, stride, d, in_stride, out_stride]() mutable {
                if (!out.has_grad()) return;
                for (int s = 0; s < d.n; s++) {
                    const T* go = out.grad().data() + s * out_stride;
                    if (kernel.requires_grad()) {
                        detail::direct_conv_dk_sample(x.data().data() + s * in_stride, go,
                                                      kernel.grad().data(), d.ci, d.h, d.w, d.co, d.k, stride,
                                                      d.ho, d.wo);
                    }
                    if (x.requires_grad()) {
                        detail::direct_conv_dx_sample(go, kernel.data().data(),
                                                      x.grad().data() + s * in_stride, d.ci, d.h, d.w, d.co,
                                                      d.k, stride, d.ho, d.wo);
                    }
                }
            });
        }
        return out;
    }

    std::vector<T> cols(static_cast<size_t>(col_rows) * all_cols);
    for (int s = 0; s < d.n; s++) {
        detail::im2col(x.data().data() + s * in_stride, d.ci, d.h, d.w, d.k, stride, d.ho, d.wo, cols.data(),
                       all_cols, s * col_cols);
    }
    {
        detail::EMat<T> out_all(d.co, all_cols);
        detail::ECMap<T> km(kernel.data().data(), d.co, col_rows);
        detail::ECMap<T> cm(cols.data(), col_rows, all_cols);
        out_all.noalias() = km * cm;
        detail::scatter_channels(out_all.data(), d.n, d.co, col_cols, out.data().data(), false);
    }
    if (detail::track_grad(tape, {&x, &kernel})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, kernel, stride, d, cols = std::move(cols), col_rows, col_cols,
                           all_cols, in_stride]() mutable {
            if (!out.has_grad()) return;
            detail::EMat<T> go_all(d.co, all_cols);
            detail::gather_channels(out.grad().data(), d.n, d.co, col_cols, go_all.data());
            if (kernel.requires_grad()) {
                detail::ECMap<T> cm(cols.data(), col_rows, all_cols);
                detail::EMap<T> gk(kernel.grad().data(), d.co, col_rows);
                gk.noalias() += go_all * cm.transpose();
            }
            if (x.requires_grad()) {
                detail::EMat<T> dcols(col_rows, all_cols);
                detail::ECMap<T> km(kernel.data().data(), d.co, col_rows);
                dcols.noalias() = km.transpose() * go_all;
                for (int s = 0; s < d.n; s++) {
                    detail::col2im_add(dcols.data(), d.ci, d.h, d.w, d.k, stride, d.ho, d.wo,
                                       x.grad().data() + s * in_stride, all_cols, s * col_cols);
                }
            }
        });
    }
    return out;
}

// Kernel layout matches conv2d ([co x ci x k x k]); this op maps co channels
// to ci channels and multiplies spatial extents by stride, so that
// <conv2d(x,K,s), y> == <x, conv2d_transpose(y,K,s)> whenever the extents of
// x are divisible by s.
template <typename T>
Tensor<T> conv2d_transpose(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& kernel, int stride) {
    if (kernel.rank() != 4 || kernel.shape()[2] != kernel.shape()[3]) {
        throw DimensionError("conv2d_transpose: kernel must be [co x ci x k x k], got " +
                             shape_str(kernel.shape()));
    }
    const int k = kernel.shape()[2];
    if (k % 2 == 0) throw ConfigError("conv2d_transpose: kernel width must be odd, got " + std::to_string(k));
    if (stride < 1) throw ConfigError("conv2d_transpose: stride must be >= 1, got " + std::to_string(stride));
    const bool batched = x.rank() == 4;
    if (x.rank() != 3 && x.rank() != 4) {
        throw DimensionError("conv2d_transpose: input must be rank 3 or 4, got " + shape_str(x.shape()));
    }
    const int n = batched ? x.shape()[0] : 1;
    const int cf = x.shape()[batched ? 1 : 0];  // kernel's co side
    const int h = x.shape()[batched ? 2 : 1];
    const int w = x.shape()[batched ? 3 : 2];
    if (kernel.shape()[0] != cf) {
        throw DimensionError("conv2d_transpose: input channels " + std::to_string(cf) + " vs kernel " +
                             shape_str(kernel.shape()));
    }
    const int ct = kernel.shape()[1];
    const int H = h * stride, W = w * stride;
    const std::int64_t col_rows = static_cast<std::int64_t>(ct) * k * k;
    const std::int64_t col_cols = static_cast<std::int64_t>(h) * w;

    Shape out_shape = batched ? Shape{n, ct, H, W} : Shape{ct, H, W};
    Tensor<T> out(out_shape);
    const std::int64_t all_cols = col_cols * n;
    const std::int64_t in_stride = static_cast<std::int64_t>(cf) * h * w;
    const std::int64_t out_stride = static_cast<std::int64_t>(ct) * H * W;

    if (col_rows * all_cols > detail::g_direct_conv_threshold) {
        // adjoint-of-conv loops, no patch matrix
        for (int s = 0; s < n; s++) {
            detail::direct_conv_dx_sample(x.data().data() + s * in_stride, kernel.data().data(),
                                          out.data().data() + s * out_stride, ct, H, W, cf, k, stride, h, w);
        }
    } else {
        detail::EMat<T> x_all(cf, all_cols);
        detail::gather_channels(x.data().data(), n, cf, col_cols, x_all.data());
        detail::EMat<T> cols(col_rows, all_cols);
        detail::ECMap<T> km(kernel.data().data(), cf, col_rows);
        cols.noalias() = km.transpose() * x_all;
        for (int s = 0; s < n; s++) {
            detail::col2im_add(cols.data(), ct, H, W, k, stride, h, w, out.data().data() + s * out_stride,
                               all_cols, s * col_cols);
        }
    }
    if (detail::track_grad(tape, {&x, &kernel})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, kernel, stride, n, cf, ct, h, w, H, W, k, col_rows, col_cols,
                           all_cols, out_stride]() mutable {
            if (!out.has_grad()) return;
            detail::EMat<T> gcols(col_rows, all_cols);
            for (int s = 0; s < n; s++) {
                detail::im2col(out.grad().data() + s * out_stride, ct, H, W, k, stride, h, w, gcols.data(),
                               all_cols, s * col_cols);
            }
            if (x.requires_grad()) {
                detail::EMat<T> gx_all(cf, all_cols);
                detail::ECMap<T> km(kernel.data().data(), cf, col_rows);
                gx_all.noalias() = km * gcols;
                detail::scatter_channels(gx_all.data(), n, cf, col_cols, x.grad().data(), true);
            }
            if (kernel.requires_grad()) {
                detail::EMat<T> x_all(cf, all_cols);
                detail::gather_channels(x.data().data(), n, cf, col_cols, x_all.data());
                detail::EMap<T> gk(kernel.grad().data(), cf, col_rows);
                gk.noalias() += x_all * gcols.transpose();
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_channel_bias(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& bias) {
    const bool batched = x.rank() == 4;
    if (x.rank() != 3 && x.rank() != 4) {
        throw DimensionError("add_channel_bias: input must be rank 3 or 4, got " + shape_str(x.shape()));
    }
    const int n = batched ? x.shape()[0] : 1;
    const int c = x.shape()[batched ? 1 : 0];
    const std::int64_t hw = static_cast<std::int64_t>(x.shape()[batched ? 2 : 1]) * x.shape()[batched ? 3 : 2];
    if (bias.rank() != 1 || bias.shape()[0] != c) {
        throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs channels " +
                             std::to_string(c));
    }
    Tensor<T> out(x.shape());
    auto xi = x.data();
    auto bi = bias.data();
    auto od = out.data();
    for (int s = 0; s < n; s++) {
        for (int ch = 0; ch < c; ch++) {
            const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; i++) od[base + i] = xi[base + i] + bi[ch];
        }
    }
    if (detail::track_grad(tape, {&x, &bias})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, bias, n, c, hw]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (size_t i = 0; i < g.size(); i++) gx[i] += g[i];
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (int s = 0; s < n; s++) {
                    for (int ch = 0; ch < c; ch++) {
                        const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < hw; i++) acc += g[base + i];
                        gb[ch] += acc;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over [n x c x h x w], statistics per channel.
// Train mode normalizes by batch statistics (eps inside the square root,
// biased variance) and folds them into the running buffers with the given
// momentum; infer mode reads the running buffers. Only the train path is
// tape-registered.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, NetMode mode,
                     T momentum = T(0.99), T eps = T(1e-5)) {
    if (x.rank() != 4) throw DimensionError("batch_norm: input must be [n x c x h x w], got " + shape_str(x.shape()));
    const int n = x.shape()[0], c = x.shape()[1];
    const std::int64_t hw = static_cast<std::int64_t>(x.shape()[2]) * x.shape()[3];
    const std::int64_t m = static_cast<std::int64_t>(n) * hw;
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw DimensionError("batch_norm: scale/shift must be [" + std::to_string(c) + "]");
    }
    if (mode == NetMode::train && n < 2) {
        throw ConfigError("batch_norm: train mode needs batch >= 2, got " + std::to_string(n));
    }

    Tensor<T> out(x.shape());
    auto xi = x.data();
    auto od = out.data();
    auto gm = gamma.data();
    auto bt = beta.data();

    if (mode == NetMode::infer) {
        auto rm = running_mean.data();
        auto rv = running_var.data();
        for (int ch = 0; ch < c; ch++) {
            const T istd = T(1) / std::sqrt(rv[ch] + eps);
            for (int s = 0; s < n; s++) {
                const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; i++) {
                    od[base + i] = gm[ch] * (xi[base + i] - rm[ch]) * istd + bt[ch];
                }
            }
        }
        return out;
    }

    std::vector<T> mu(c), istd(c);
    std::vector<T> xhat(static_cast<size_t>(x.size()));
    for (int ch = 0; ch < c; ch++) {
        T acc = T(0);
        for (int s = 0; s < n; s++) {
            const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; i++) acc += xi[base + i];
        }
        const T mean_c = acc / static_cast<T>(m);
        T var_acc = T(0);
        for (int s = 0; s < n; s++) {
            const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; i++) {
                const T d = xi[base + i] - mean_c;
                var_acc += d * d;
            }
        }
        const T var_c = var_acc / static_cast<T>(m);
        mu[ch] = mean_c;
        istd[ch] = T(1) / std::sqrt(var_c + eps);
        running_mean.data()[ch] = momentum * running_mean.data()[ch] + (T(1) - momentum) * mean_c;
        running_var.data()[ch] = momentum * running_var.data()[ch] + (T(1) - momentum) * var_c;
        for (int s = 0; s < n; s++) {
            const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; i++) {
                const T xh = (xi[base + i] - mean_c) * istd[ch];
                xhat[base + i] = xh;
                od[base + i] = gm[ch] * xh + bt[ch];
            }
        }
    }

    if (detail::track_grad(tape, {&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        tape->record(out, [out, x, gamma, beta, n, c, hw, m, istd = std::move(istd),
                           xhat = std::move(xhat)]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gm = gamma.data();
            for (int ch = 0; ch < c; ch++) {
                T sum_g = T(0), sum_gx = T(0);
                for (int s = 0; s < n; s++) {
                    const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
                    for (std::int64_t i = 0; i < hw; i++) {
                        sum_g += g[base + i];
                        sum_gx += g[base + i] * xhat[base + i];
                    }
                }
                if (gamma.requires_grad()) gamma.grad()[ch] += sum_gx;
                if (beta.requires_grad()) beta.grad()[ch] += sum_g;
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    const T coef = gm[ch] * istd[ch] / static_cast<T>(m);
                    for (int s = 0; s < n; s++) {
                        const std::int64_t base = (static_cast<std::int64_t>(s) * c + ch) * hw;
                        for (std::int64_t i = 0; i < hw; i++) {
                            gx[base + i] += coef * (static_cast<T>(m) * g[base + i] - sum_g -
                                                    xhat[base + i] * sum_gx);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// LSTM cell. Gate order along the 4H axis is (input, forget, candidate,
// output); sigmoid gates, tanh candidate and output squashing.
//   x [n x in], h [n x H], c [n x H], w_x [in x 4H], w_h [H x 4H], b [4H]
// ---------------------------------------------------------------------------

template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& h,
                                          const Tensor<T>& c, const Tensor<T>& w_x,
                                          const Tensor<T>& w_h, const Tensor<T>& bias) {
    if (x.rank() != 2 || h.rank() != 2 || c.rank() != 2) {
        throw DimensionError("lstm_cell: x/h/c must be rank-2");
    }
    const int n = x.shape()[0], in = x.shape()[1], H = h.shape()[1];
    if (h.shape()[0] != n || c.shape() != h.shape()) {
        throw DimensionError("lstm_cell: state shapes " + shape_str(h.shape()) + "/" + shape_str(c.shape()) +
                             " do not match batch " + std::to_string(n));
    }
    if (w_x.shape() != Shape{in, 4 * H} || w_h.shape() != Shape{H, 4 * H} || bias.shape() != Shape{4 * H}) {
        throw DimensionError("lstm_cell: parameter shapes w_x " + shape_str(w_x.shape()) + ", w_h " +
                             shape_str(w_h.shape()) + ", bias " + shape_str(bias.shape()) +
                             " do not match input " + std::to_string(in) + ", hidden " + std::to_string(H));
    }

    std::vector<T> z(static_cast<size_t>(n) * 4 * H);
    {
        detail::ECMap<T> mx(x.data().data(), n, in);
        detail::ECMap<T> mh(h.data().data(), n, H);
        detail::ECMap<T> mwx(w_x.data().data(), in, 4 * H);
        detail::ECMap<T> mwh(w_h.data().data(), H, 4 * H);
        detail::EMap<T> mz(z.data(), n, 4 * H);
        mz.noalias() = mx * mwx;
        mz.noalias() += mh * mwh;
        for (int i = 0; i < n; i++) {
            for (int j = 0; j < 4 * H; j++) z[i * 4 * H + j] += bias.data()[j];
        }
    }

    const auto sig = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
    std::vector<T> gi(static_cast<size_t>(n) * H), gf(gi.size()), gg(gi.size()), go(gi.size()), tc(gi.size());
    Tensor<T> h_next(Shape{n, H});
    Tensor<T> c_next(Shape{n, H});
    auto cd = c.data();
    auto hn = h_next.data();
    auto cn = c_next.data();
    for (int i = 0; i < n; i++) {
        for (int j = 0; j < H; j++) {
            const std::int64_t zi = static_cast<std::int64_t>(i) * 4 * H;
            const std::int64_t ij = static_cast<std::int64_t>(i) * H + j;
            gi[ij] = sig(z[zi + j]);
            gf[ij] = sig(z[zi + H + j]);
            gg[ij] = std::tanh(z[zi + 2 * H + j]);
            go[ij] = sig(z[zi + 3 * H + j]);
            cn[ij] = gf[ij] * cd[ij] + gi[ij] * gg[ij];
            tc[ij] = std::tanh(cn[ij]);
            hn[ij] = go[ij] * tc[ij];
        }
    }

    if (detail::track_grad(tape, {&x, &h, &c, &w_x, &w_h, &bias})) {
        h_next.set_requires_grad(true);
        c_next.set_requires_grad(true);
        tape->record2(h_next, c_next,
                      [h_next, c_next, x, h, c, w_x, w_h, bias, n, in, H, gi = std::move(gi),
                       gf = std::move(gf), gg = std::move(gg), go = std::move(go),
                       tc = std::move(tc)]() mutable {
            if (!h_next.has_grad() && !c_next.has_grad()) return;
            const std::int64_t nh = static_cast<std::int64_t>(n) * H;
            std::vector<T> dz(static_cast<size_t>(n) * 4 * H);
            auto cd = c.data();
            const bool gh_in = h_next.has_grad();
            const bool gc_in = c_next.has_grad();
            auto ghn = gh_in ? h_next.grad() : std::span<T>{};
            auto gcn = gc_in ? c_next.grad() : std::span<T>{};
            const bool want_c = c.requires_grad();
            auto gc = want_c ? c.grad() : std::span<T>{};
            for (std::int64_t ij = 0; ij < nh; ij++) {
                const int i = static_cast<int>(ij / H);
                const int j = static_cast<int>(ij % H);
                const T gh_v = gh_in ? ghn[ij] : T(0);
                const T gc_v = gc_in ? gcn[ij] : T(0);
                const T dct = gc_v + gh_v * go[ij] * (T(1) - tc[ij] * tc[ij]);
                const T d_o = gh_v * tc[ij];
                const T d_i = dct * gg[ij];
                const T d_f = dct * cd[ij];
                const T d_g = dct * gi[ij];
                if (want_c) gc[ij] += dct * gf[ij];
                const std::int64_t zi = static_cast<std::int64_t>(i) * 4 * H;
                dz[zi + j] = d_i * gi[ij] * (T(1) - gi[ij]);
                dz[zi + H + j] = d_f * gf[ij] * (T(1) - gf[ij]);
                dz[zi + 2 * H + j] = d_g * (T(1) - gg[ij] * gg[ij]);
                dz[zi + 3 * H + j] = d_o * go[ij] * (T(1) - go[ij]);
            }
            detail::ECMap<T> mdz(dz.data(), n, 4 * H);
            if (x.requires_grad()) {
                detail::ECMap<T> mwx(w_x.data().data(), in, 4 * H);
                detail::EMap<T> gx(x.grad().data(), n, in);
                gx.noalias() += mdz * mwx.transpose();
            }
            if (h.requires_grad()) {
                detail::ECMap<T> mwh(w_h.data().data(), H, 4 * H);
                detail::EMap<T> gh(h.grad().data(), n, H);
                gh.noalias() += mdz * mwh.transpose();
            }
            if (w_x.requires_grad()) {
                detail::ECMap<T> mx(x.data().data(), n, in);
                detail::EMap<T> gwx(w_x.grad().data(), in, 4 * H);
                gwx.noalias() += mx.transpose() * mdz;
            }
            if (w_h.requires_grad()) {
                detail::ECMap<T> mh(h.data().data(), n, H);
                detail::EMap<T> gwh(w_h.grad().data(), H, 4 * H);
                gwh.noalias() += mh.transpose() * mdz;
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (int i = 0; i < n; i++) {
                    for (int j = 0; j < 4 * H; j++) gb[j] += dz[static_cast<std::int64_t>(i) * 4 * H + j];
                }
            }
        });
    }
    return {h_next, c_next};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mse_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "mse_loss");
    const std::int64_t n = pred.size();
    T acc = T(0);
    auto p = pred.data();
    auto t = target.data();
    for (std::int64_t i = 0; i < n; i++) {
        const T d = p[i] - t[i];
        acc += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
    if (detail::track_grad(tape, {&pred, &target})) {
        out.set_requires_grad(true);
        tape->record(out, [out, pred, target, n]() mutable {
            if (!out.has_grad()) return;
            const T g = out.grad()[0];
            auto p = pred.data();
            auto t = target.data();
            const T coef = T(2) / static_cast<T>(n);
            if (pred.requires_grad()) {
                auto gp = pred.grad();
                for (std::int64_t i = 0; i < n; i++) gp[i] += g * coef * (p[i] - t[i]);
            }
            if (target.requires_grad()) {
                auto gt = target.grad();
                for (std::int64_t i = 0; i < n; i++) gt[i] -= g * coef * (p[i] - t[i]);
            }
        });
    }
    return out;
}

// Per-sample mean squared error over the trailing dimensions: [n x ...] -> [n].
template <typename T>
Tensor<T> batch_mse(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "batch_mse");
    if (pred.rank() < 2) throw DimensionError("batch_mse: need rank >= 2, got " + shape_str(pred.shape()));
    const int n = pred.shape()[0];
    const std::int64_t per = pred.size() / n;
    Tensor<T> out(Shape{n});
    auto p = pred.data();
    auto t = target.data();
    auto od = out.data();
    for (int i = 0; i < n; i++) {
        T acc = T(0);
        for (std::int64_t j = 0; j < per; j++) {
            const T d = p[i * per + j] - t[i * per + j];
            acc += d * d;
        }
        od[i] = acc / static_cast<T>(per);
    }
    if (detail::track_grad(tape, {&pred, &target})) {
        out.set_requires_grad(true);
        tape->record(out, [out, pred, target, n, per]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto p = pred.data();
            auto t = target.data();
            const T coef = T(2) / static_cast<T>(per);
            if (pred.requires_grad()) {
                auto gp = pred.grad();
                for (int i = 0; i < n; i++) {
                    for (std::int64_t j = 0; j < per; j++) {
                        gp[i * per + j] += g[i] * coef * (p[i * per + j] - t[i * per + j]);
                    }
                }
            }
            if (target.requires_grad()) {
                auto gt = target.grad();
                for (int i = 0; i < n; i++) {
                    for (std::int64_t j = 0; j < per; j++) {
                        gt[i * per + j] -= g[i] * coef * (p[i * per + j] - t[i * per + j]);
                    }
                }
            }
        });
    }
    return out;
}

namespace detail {

// 3x3 Sobel derivative pair as a fixed [2 x 1 x 3 x 3] kernel: channel 0
// horizontal, channel 1 vertical.
template <typename T>
inline Tensor<T> sobel_kernel() {
    return Tensor<T>::from_data({2, 1, 3, 3}, {T(-1), T(0), T(1), T(-2), T(0), T(2), T(-1), T(0), T(1),
                                               T(-1), T(-2), T(-1), T(0), T(0), T(0), T(1), T(2), T(1)});
}

}  // namespace detail

// Channelwise concatenation of horizontal and vertical Sobel derivatives,
// zero "same" padding: [n x 1 x h x w] -> [n x 2 x h x w] (or [h x w] -> [2 x h x w]).
template <typename T>
Tensor<T> sobel_map(Tape<T>* tape, const Tensor<T>& x) {
    static const Tensor<T> kernel = detail::sobel_kernel<T>();
    if (x.rank() == 2) {
        Tensor<T> lifted = reshape(tape, x, {1, x.shape()[0], x.shape()[1]});
        return conv2d(tape, lifted, kernel, 1);
    }
    return conv2d(tape, x, kernel, 1);
}

template <typename T>
Tensor<T> sobel_loss(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "sobel_loss");
    return mse_loss(tape, sobel_map(tape, pred), sobel_map(tape, target));
}

template <typename T>
Tensor<T> batch_sobel_mse(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "batch_sobel_mse");
    return batch_mse(tape, sobel_map(tape, pred), sobel_map(tape, target));
}

namespace detail {

// Max over non-overlapping region x region tiles of the per-tile MSE;
// trailing partial tiles dropped. Returns the max and the flat offset of the
// winning tile's top-left corner (first in row-major order on ties).
template <typename T>
inline std::pair<T, std::int64_t> region_max_tile(const T* p, const T* t, int h, int w, int region) {
    const int th = h / region, tw = w / region;
    T best = T(0);
    std::int64_t best_off = 0;
    bool first = true;
    for (int ty = 0; ty < th; ty++) {
        for (int tx = 0; tx < tw; tx++) {
            const std::int64_t off = static_cast<std::int64_t>(ty) * region * w + tx * region;
            T acc = T(0);
            for (int y = 0; y < region; y++) {
                for (int x = 0; x < region; x++) {
                    const T d = p[off + y * w + x] - t[off + y * w + x];
                    acc += d * d;
                }
            }
            acc /= static_cast<T>(region * region);
            if (first || acc > best) {
                best = acc;
                best_off = off;
                first = false;
            }
        }
    }
    return {best, best_off};
}

}  // namespace detail

template <typename T>
Tensor<T> region_max_mse(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target, int region = 5) {
    check_same_shape(pred, target, "region_max_mse");
    if (pred.rank() != 2) throw DimensionError("region_max_mse: need [h x w], got " + shape_str(pred.shape()));
    const int h = pred.shape()[0], w = pred.shape()[1];
    if (h < region || w < region) {
        throw ConfigError("region_max_mse: image " + shape_str(pred.shape()) + " smaller than region " +
                          std::to_string(region));
    }
    auto [best, off] = detail::region_max_tile(pred.data().data(), target.data().data(), h, w, region);
    Tensor<T> out = Tensor<T>::scalar(best);
    if (detail::track_grad(tape, {&pred, &target})) {
        out.set_requires_grad(true);
        tape->record(out, [out, pred, target, h, w, region, off = off]() mutable {
            if (!out.has_grad()) return;
            const T g = out.grad()[0];
            const T coef = T(2) / static_cast<T>(region * region);
            auto p = pred.data();
            auto t = target.data();
            for (int y = 0; y < region; y++) {
                for (int x = 0; x < region; x++) {
                    const std::int64_t i = off + static_cast<std::int64_t>(y) * w + x;
                    const T d = coef * (p[i] - t[i]) * g;
                    if (pred.requires_grad()) pred.grad()[i] += d;
                    if (target.requires_grad()) target.grad()[i] -= d;
                }
            }
        });
    }
    return out;
}

// Per-sample region-max MSE: [n x 1 x h x w] -> [n].
template <typename T>
Tensor<T> batch_region_max_mse(Tape<T>* tape, const Tensor<T>& pred, const Tensor<T>& target, int region = 5) {
    check_same_shape(pred, target, "batch_region_max_mse");
    if (pred.rank() != 4 || pred.shape()[1] != 1) {
        throw DimensionError("batch_region_max_mse: need [n x 1 x h x w], got " + shape_str(pred.shape()));
    }
    const int n = pred.shape()[0], h = pred.shape()[2], w = pred.shape()[3];
    if (h < region || w < region) {
        throw ConfigError("batch_region_max_mse: image smaller than region " + std::to_string(region));
    }
    const std::int64_t per = static_cast<std::int64_t>(h) * w;
    Tensor<T> out(Shape{n});
    std::vector<std::int64_t> offs(n);
    for (int i = 0; i < n; i++) {
        auto [best, off] = detail::region_max_tile(pred.data().data() + i * per, target.data().data() + i * per,
                                                   h, w, region);
        out.data()[i] = best;
        offs[i] = off;
    }
    if (detail::track_grad(tape, {&pred, &target})) {
        out.set_requires_grad(true);
        tape->record(out, [out, pred, target, n, h, w, region, per, offs = std::move(offs)]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            const T coef = T(2) / static_cast<T>(region * region);
            auto p = pred.data();
            auto t = target.data();
            for (int i = 0; i < n; i++) {
                for (int y = 0; y < region; y++) {
                    for (int x = 0; x < region; x++) {
                        const std::int64_t j = i * per + offs[i] + static_cast<std::int64_t>(y) * w + x;
                        const T d = coef * (p[j] - t[j]) * g[i];
                        if (pred.requires_grad()) pred.grad()[j] += d;
                        if (target.requires_grad()) target.grad()[j] -= d;
                    }
                }
            }
        });
    }
    return out;
}

// Straight-through override: forward takes the replayed values, backward
// passes gradients to `live` untouched.
template <typename T>
Tensor<T> value_override(Tape<T>* tape, const Tensor<T>& live, const Tensor<T>& replayed) {
    check_same_shape(live, replayed, "value_override");
    Tensor<T> out = replayed.detached_copy();
    if (detail::track_grad(tape, {&live})) {
        out.set_requires_grad(true);
        tape->record(out, [out, live]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gl = live.grad();
            for (size_t i = 0; i < g.size(); i++) gl[i] += g[i];
        });
    }
    return out;
}

}  // namespace scanrl
