#pragma once

#include <cmath>

#include "ewt/tensor.hpp"

namespace ewt {

// Windowed multi-head self-attention with cyclic shifting, in the Swin style.
// Token layout is NHWC; conversion from NCHW happens in the block layer.

inline constexpr double kMaskValue = -1e9;  // finite so softmax stabilization stays NaN-free

template <typename T>
struct WindowGrid {
    Tensor<T> windows;  // [N*nW, ws*ws, D]
    std::size_t n = 0, h = 0, w = 0, d = 0;
    std::size_t ws = 0;
};

template <typename T>
WindowGrid<T> window_partition(const Tensor<T>& x, std::size_t ws) {
    if (x.ndim() != 4) throw DimensionError("window_partition: expects NHWC");
    std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
    if (ws == 0 || h % ws || w % ws)
        throw DimensionError("window_partition: H,W " + shape_str({h, w}) +
                             " not divisible by window size " + std::to_string(ws));
    std::size_t gh = h / ws, gw = w / ws;
    Shape out_shape{n * gh * gw, ws * ws, d};
    std::vector<T> v(numel(out_shape));
    const T* xv = x.data().data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t wi = 0; wi < gh; ++wi)
            for (std::size_t wj = 0; wj < gw; ++wj) {
                T* dst = v.data() + ((b * gh + wi) * gw + wj) * ws * ws * d;
                for (std::size_t i = 0; i < ws; ++i)
                    std::copy_n(xv + ((b * h + wi * ws + i) * w + wj * ws) * d, ws * d,
                                dst + i * ws * d);
            }
    Tensor<T> out = detail::make_op<T>(
        std::move(out_shape), std::move(v), {x}, [n, h, w, d, ws, gh, gw](TensorNode<T>& self) {
            auto* g = detail::grad_of(self, 0);
            if (!g) return;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t wi = 0; wi < gh; ++wi)
                    for (std::size_t wj = 0; wj < gw; ++wj) {
                        const T* src = self.grad.data() + ((b * gh + wi) * gw + wj) * ws * ws * d;
                        for (std::size_t i = 0; i < ws; ++i) {
                            T* dst = g->data() + ((b * h + wi * ws + i) * w + wj * ws) * d;
                            for (std::size_t j = 0; j < ws * d; ++j) dst[j] += src[i * ws * d + j];
                        }
                    }
        });
    return {out, n, h, w, d, ws};
}

template <typename T>
Tensor<T> window_reverse(const WindowGrid<T>& grid) {
    std::size_t n = grid.n, h = grid.h, w = grid.w, d = grid.d, ws = grid.ws;
    std::size_t gh = h / ws, gw = w / ws;
    if (grid.windows.shape() != Shape{n * gh * gw, ws * ws, d})
        throw DimensionError("window_reverse: grid shape inconsistent with source shape");
    Shape out_shape{n, h, w, d};
    std::vector<T> v(numel(out_shape));
    const T* xv = grid.windows.data().data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t wi = 0; wi < gh; ++wi)
            for (std::size_t wj = 0; wj < gw; ++wj) {
                const T* src = xv + ((b * gh + wi) * gw + wj) * ws * ws * d;
                for (std::size_t i = 0; i < ws; ++i)
                    std::copy_n(src + i * ws * d, ws * d,
                                v.data() + ((b * h + wi * ws + i) * w + wj * ws) * d);
            }
    return detail::make_op<T>(std::move(out_shape), std::move(v), {grid.windows},
                              [n, h, w, d, ws, gh, gw](TensorNode<T>& self) {
                                  auto* g = detail::grad_of(self, 0);
                                  if (!g) return;
                                  for (std::size_t b = 0; b < n; ++b)
                                      for (std::size_t wi = 0; wi < gh; ++wi)
                                          for (std::size_t wj = 0; wj < gw; ++wj) {
                                              T* dst = g->data() + ((b * gh + wi) * gw + wj) * ws * ws * d;
                                              for (std::size_t i = 0; i < ws; ++i) {
                                                  const T* src = self.grad.data() +
                                                                 ((b * h + wi * ws + i) * w + wj * ws) * d;
                                                  for (std::size_t j = 0; j < ws * d; ++j)
                                                      dst[i * ws * d + j] += src[j];
                                              }
                                          }
                              });
}

// Toroidal roll by (-s, -s) over (H, W); negative s rolls forward.
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, long long s) {
    if (x.ndim() != 4) throw DimensionError("cyclic_shift: expects NHWC");
    std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
    long long sh = ((s % (long long)h) + (long long)h) % (long long)h;
    long long sw = ((s % (long long)w) + (long long)w) % (long long)w;
    std::vector<T> v(x.numel());
    const T* xv = x.data().data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < h; ++i) {
            std::size_t si = (i + sh) % h;
            for (std::size_t j = 0; j < w; ++j) {
                std::size_t sj = (j + sw) % w;
                std::copy_n(xv + ((b * h + si) * w + sj) * d, d, v.data() + ((b * h + i) * w + j) * d);
            }
        }
    return detail::make_op<T>(x.shape(), std::move(v), {x},
                              [n, h, w, d, sh, sw](TensorNode<T>& self) {
                                  auto* g = detail::grad_of(self, 0);
                                  if (!g) return;
                                  for (std::size_t b = 0; b < n; ++b)
                                      for (std::size_t i = 0; i < h; ++i) {
                                          std::size_t si = (i + sh) % h;
                                          for (std::size_t j = 0; j < w; ++j) {
                                              std::size_t sj = (j + sw) % w;
                                              const T* src = self.grad.data() + ((b * h + i) * w + j) * d;
                                              T* dst = g->data() + ((b * h + si) * w + sj) * d;
                                              for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                                          }
                                      }
                              });
}

// Additive attention mask, one [ws*ws, ws*ws] slab per window. Entries are
// 0 or kMaskValue; the mask blocks attention between tokens whose pre-shift
// region ids differ (the 3x3 decomposition induced by the shift boundaries).
struct AttnMask {
    std::size_t num_windows = 0;
    std::size_t tokens = 0;  // ws*ws
    std::vector<double> mask;  // [nW, tokens, tokens]

    bool all_zero() const {
        for (double m : mask)
            if (m != 0.0) return false;
        return true;
    }
};

inline AttnMask build_attn_mask(std::size_t h, std::size_t w, std::size_t ws, std::size_t shift) {
    if (ws == 0 || h % ws || w % ws) throw DimensionError("build_attn_mask: H,W not divisible by ws");
    if (shift >= ws) throw ContractError("build_attn_mask: require 0 <= shift < ws");
    std::size_t gh = h / ws, gw = w / ws, nw = gh * gw, t = ws * ws;
    AttnMask out{nw, t, std::vector<double>(nw * t * t, 0.0)};
    if (shift == 0) return out;

    auto region = [&](std::size_t pos, std::size_t extent) -> int {
        if (pos < extent - ws) return 0;
        if (pos < extent - shift) return 1;
        return 2;
    };
    // Region ids in the shifted frame: pixel (i,j) post-shift came from
    // (i+shift, j+shift) pre-shift, which lands region boundaries at
    // extent-ws and extent-shift in the post-shift coordinates.
    std::vector<int> ids(h * w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) ids[i * w + j] = 3 * region(i, h) + region(j, w);

    for (std::size_t wi = 0; wi < gh; ++wi)
        for (std::size_t wj = 0; wj < gw; ++wj) {
            double* m = out.mask.data() + (wi * gw + wj) * t * t;
            for (std::size_t a = 0; a < t; ++a) {
                int ida = ids[(wi * ws + a / ws) * w + wj * ws + a % ws];
                for (std::size_t b = 0; b < t; ++b) {
                    int idb = ids[(wi * ws + b / ws) * w + wj * ws + b % ws];
                    if (ida != idb) m[a * t + b] = kMaskValue;
                }
            }
        }
    return out;
}

template <typename T>
struct AttentionParams {
    Tensor<T> w_qkv;   // [D, 3D]
    Tensor<T> b_qkv;   // [3D]
    Tensor<T> w_proj;  // [D, D]
    Tensor<T> b_proj;  // [D]
    Tensor<T> rel_bias;  // [(2ws-1)^2, heads]
    std::size_t heads = 1;
    std::size_t ws = 1;

    template <typename F>
    void visit(F&& f) {
        f("qkv.w", w_qkv);
        f("qkv.b", b_qkv);
        f("proj.w", w_proj);
        f("proj.b", b_proj);
        f("rel_bias", rel_bias);
    }
};

// Table of relative-offset indices into rel_bias, shape [ws^2, ws^2].
inline std::vector<std::size_t> relative_index_table(std::size_t ws) {
    std::size_t t = ws * ws, span = 2 * ws - 1;
    std::vector<std::size_t> table(t * t);
    for (std::size_t a = 0; a < t; ++a)
        for (std::size_t b = 0; b < t; ++b) {
            long long dy = (long long)(a / ws) - (long long)(b / ws) + (long long)ws - 1;
            long long dx = (long long)(a % ws) - (long long)(b % ws) + (long long)ws - 1;
            table[a * t + b] = std::size_t(dy) * span + std::size_t(dx);
        }
    return table;
}

namespace detail {

// scores[B, heads, t, t] += rel_bias lookup (differentiable) + mask (constant,
// broadcast per window: window index = batch index % nW).
template <typename T>
Tensor<T> add_bias_and_mask(const Tensor<T>& scores, const Tensor<T>& rel_bias,
                            const std::vector<std::size_t>& table, const AttnMask& mask) {
    std::size_t b = scores.dim(0), heads = scores.dim(1), t = scores.dim(2);
    if (scores.dim(3) != t || table.size() != t * t)
        throw DimensionError("add_bias_and_mask: score/table shape mismatch");
    if (mask.tokens != t || mask.num_windows == 0 || b % mask.num_windows)
        throw DimensionError("add_bias_and_mask: mask inconsistent with batch of windows");
    std::size_t nw = mask.num_windows;
    std::vector<T> v(scores.numel());
    const T* sv = scores.data().data();
    const T* rb = rel_bias.data().data();
    for (std::size_t bi = 0; bi < b; ++bi) {
        const double* m = mask.mask.data() + (bi % nw) * t * t;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const T* src = sv + (bi * heads + hd) * t * t;
            T* dst = v.data() + (bi * heads + hd) * t * t;
            for (std::size_t i = 0; i < t * t; ++i)
                dst[i] = src[i] + rb[table[i] * heads + hd] + T(m[i]);
        }
    }
    return ewt::detail::make_op<T>(scores.shape(), std::move(v), {scores, rel_bias},
                                   [b, heads, t, table](TensorNode<T>& self) {
                                       if (auto* gs = ewt::detail::grad_of(self, 0))
                                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                                               (*gs)[i] += self.grad[i];
                                       if (auto* gb = ewt::detail::grad_of(self, 1))
                                           for (std::size_t bi = 0; bi < b; ++bi)
                                               for (std::size_t hd = 0; hd < heads; ++hd) {
                                                   const T* go = self.grad.data() + (bi * heads + hd) * t * t;
                                                   for (std::size_t i = 0; i < t * t; ++i)
                                                       (*gb)[table[i] * heads + hd] += go[i];
                                               }
                                   });
}

}  // namespace detail

// Full (shifted-)window multi-head self-attention:
// shift -> partition -> softmax(QK^T/sqrt(dh) + bias + mask)V -> proj ->
// reverse -> inverse shift.
template <typename T>
Tensor<T> wmsa(const Tensor<T>& x, AttentionParams<T>& p, std::size_t ws, std::size_t shift,
               const AttnMask& mask) {
    if (x.ndim() != 4) throw DimensionError("wmsa: expects NHWC");
    std::size_t d = x.dim(3);
    if (d % p.heads) throw DimensionError("wmsa: embedding dim not divisible by heads");
    std::size_t dh = d / p.heads, t = ws * ws;
    if (mask.tokens != t) throw DimensionError("wmsa: mask window size mismatch");

    Tensor<T> shifted = shift ? cyclic_shift(x, (long long)shift) : x;
    WindowGrid<T> grid = window_partition(shifted, ws);
    std::size_t bw = grid.windows.dim(0);
    if (mask.num_windows != (grid.h / ws) * (grid.w / ws))
        throw DimensionError("wmsa: mask window count mismatch");

    Tensor<T> qkv = linear(grid.windows, p.w_qkv, p.b_qkv);  // [bw, t, 3D]
    auto heads_view = [&](const Tensor<T>& z) {
        return permute(reshape(z, {bw, t, p.heads, dh}), {0, 2, 1, 3});  // [bw, h, t, dh]
    };
    Tensor<T> q = heads_view(narrow(qkv, 2, 0, d));
    Tensor<T> k = heads_view(narrow(qkv, 2, d, d));
    Tensor<T> v = heads_view(narrow(qkv, 2, 2 * d, d));

    Tensor<T> scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), T(1) / std::sqrt(T(dh)));
    static thread_local std::vector<std::size_t> table;
    static thread_local std::size_t table_ws = 0;
    if (table_ws != ws) {
        table = relative_index_table(ws);
        table_ws = ws;
    }
    scores = detail::add_bias_and_mask(scores, p.rel_bias, table, mask);
    Tensor<T> attn = softmax(scores, 3);
    Tensor<T> ctx = matmul(attn, v);  // [bw, h, t, dh]
    Tensor<T> merged = reshape(permute(ctx, {0, 2, 1, 3}), {bw, t, d});
    Tensor<T> projected = linear(merged, p.w_proj, p.b_proj);

    WindowGrid<T> out_grid{projected, grid.n, grid.h, grid.w, grid.d, ws};
    Tensor<T> y = window_reverse(out_grid);
    return shift ? cyclic_shift(y, -(long long)shift) : y;
}

}  // namespace ewt
