#pragma once

#include "ewt/tensor.hpp"

namespace ewt {

// Orthonormal 2D Haar filter bank over non-overlapping 2x2 blocks, with the
// 1/2 normalization that makes the transform energy preserving. Layout NCHW.
// dwt2 stacks the four sub-bands interleaved per source channel:
// output channel 4c+0..3 = (ll, lh, hl, hh) of input channel c.

template <typename T>
Tensor<T> dwt2(const Tensor<T>& x) {
    if (x.ndim() != 4) throw DimensionError("dwt2: expects NCHW");
    std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2)
        throw DimensionError("dwt2: H and W must be even, got " + shape_str(x.shape()));
    std::size_t ho = h / 2, wo = w / 2;
    Shape out_shape{n, 4 * c, ho, wo};
    std::vector<T> v(numel(out_shape));
    const T* xv = x.data().data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ci = 0; ci < c; ++ci) {
            const T* src = xv + (b * c + ci) * h * w;
            T* ll = v.data() + (b * 4 * c + 4 * ci + 0) * ho * wo;
            T* lh = v.data() + (b * 4 * c + 4 * ci + 1) * ho * wo;
            T* hl = v.data() + (b * 4 * c + 4 * ci + 2) * ho * wo;
            T* hh = v.data() + (b * 4 * c + 4 * ci + 3) * ho * wo;
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    T a = src[(2 * i) * w + 2 * j];
                    T bb = src[(2 * i) * w + 2 * j + 1];
                    T cc = src[(2 * i + 1) * w + 2 * j];
                    T dd = src[(2 * i + 1) * w + 2 * j + 1];
                    ll[i * wo + j] = (a + bb + cc + dd) / T(2);
                    lh[i * wo + j] = (-a - bb + cc + dd) / T(2);
                    hl[i * wo + j] = (-a + bb - cc + dd) / T(2);
                    hh[i * wo + j] = (a - bb - cc + dd) / T(2);
                }
        }
    // Orthonormal linear map: the adjoint is the inverse synthesis.
    return detail::make_op<T>(std::move(out_shape), std::move(v), {x},
                              [n, c, h, w, ho, wo](TensorNode<T>& self) {
                                  auto* g = detail::grad_of(self, 0);
                                  if (!g) return;
                                  for (std::size_t b = 0; b < n; ++b)
                                      for (std::size_t ci = 0; ci < c; ++ci) {
                                          T* dst = g->data() + (b * c + ci) * h * w;
                                          const T* ll = self.grad.data() + (b * 4 * c + 4 * ci + 0) * ho * wo;
                                          const T* lh = self.grad.data() + (b * 4 * c + 4 * ci + 1) * ho * wo;
                                          const T* hl = self.grad.data() + (b * 4 * c + 4 * ci + 2) * ho * wo;
                                          const T* hh = self.grad.data() + (b * 4 * c + 4 * ci + 3) * ho * wo;
                                          for (std::size_t i = 0; i < ho; ++i)
                                              for (std::size_t j = 0; j < wo; ++j) {
                                                  T l = ll[i * wo + j], m = lh[i * wo + j];
                                                  T p = hl[i * wo + j], q = hh[i * wo + j];
                                                  dst[(2 * i) * w + 2 * j] += (l - m - p + q) / T(2);
                                                  dst[(2 * i) * w + 2 * j + 1] += (l - m + p - q) / T(2);
                                                  dst[(2 * i + 1) * w + 2 * j] += (l + m - p - q) / T(2);
                                                  dst[(2 * i + 1) * w + 2 * j + 1] += (l + m + p + q) / T(2);
                                              }
                                      }
                              });
}

template <typename T>
Tensor<T> iwt2(const Tensor<T>& x) {
    if (x.ndim() != 4) throw DimensionError("iwt2: expects NCHW");
    std::size_t n = x.dim(0), c4 = x.dim(1), ho = x.dim(2), wo = x.dim(3);
    if (c4 % 4) throw DimensionError("iwt2: channel count must be a multiple of 4");
    std::size_t c = c4 / 4, h = 2 * ho, w = 2 * wo;
    Shape out_shape{n, c, h, w};
    std::vector<T> v(numel(out_shape));
    const T* xv = x.data().data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ci = 0; ci < c; ++ci) {
            T* dst = v.data() + (b * c + ci) * h * w;
            const T* ll = xv + (b * c4 + 4 * ci + 0) * ho * wo;
            const T* lh = xv + (b * c4 + 4 * ci + 1) * ho * wo;
            const T* hl = xv + (b * c4 + 4 * ci + 2) * ho * wo;
            const T* hh = xv + (b * c4 + 4 * ci + 3) * ho * wo;
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    T l = ll[i * wo + j], m = lh[i * wo + j];
                    T p = hl[i * wo + j], q = hh[i * wo + j];
                    dst[(2 * i) * w + 2 * j] = (l - m - p + q) / T(2);
                    dst[(2 * i) * w + 2 * j + 1] = (l - m + p - q) / T(2);
                    dst[(2 * i + 1) * w + 2 * j] = (l + m - p - q) / T(2);
                    dst[(2 * i + 1) * w + 2 * j + 1] = (l + m + p + q) / T(2);
                }
        }
    return detail::make_op<T>(std::move(out_shape), std::move(v), {x},
                              [n, c, c4, h, w, ho, wo](TensorNode<T>& self) {
                                  auto* g = detail::grad_of(self, 0);
                                  if (!g) return;
                                  for (std::size_t b = 0; b < n; ++b)
                                      for (std::size_t ci = 0; ci < c; ++ci) {
                                          const T* src = self.grad.data() + (b * c + ci) * h * w;
                                          T* ll = g->data() + (b * c4 + 4 * ci + 0) * ho * wo;
                                          T* lh = g->data() + (b * c4 + 4 * ci + 1) * ho * wo;
                                          T* hl = g->data() + (b * c4 + 4 * ci + 2) * ho * wo;
                                          T* hh = g->data() + (b * c4 + 4 * ci + 3) * ho * wo;
                                          for (std::size_t i = 0; i < ho; ++i)
                                              for (std::size_t j = 0; j < wo; ++j) {
                                                  T a = src[(2 * i) * w + 2 * j];
                                                  T bb = src[(2 * i) * w + 2 * j + 1];
                                                  T cc = src[(2 * i + 1) * w + 2 * j];
                                                  T dd = src[(2 * i + 1) * w + 2 * j + 1];
                                                  ll[i * wo + j] += (a + bb + cc + dd) / T(2);
                                                  lh[i * wo + j] += (-a - bb + cc + dd) / T(2);
                                                  hl[i * wo + j] += (-a + bb - cc + dd) / T(2);
                                                  hh[i * wo + j] += (a - bb - cc + dd) / T(2);
                                              }
                                      }
                              });
}

// The four sub-bands of one level as separate tensors.
template <typename T>
struct WaveletSubbands {
    Tensor<T> ll, lh, hl, hh;
    int level = 1;
};

template <typename T>
WaveletSubbands<T> dwt_haar(const Tensor<T>& x) {
    Tensor<T> stack = dwt2(x);
    std::size_t c = x.dim(1);
    std::vector<std::size_t> idx[4];
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t s = 0; s < 4; ++s) idx[s].push_back(4 * ci + s);
    return {channel_select(stack, idx[0]), channel_select(stack, idx[1]),
            channel_select(stack, idx[2]), channel_select(stack, idx[3]), 1};
}

template <typename T>
Tensor<T> iwt_haar(const WaveletSubbands<T>& s) {
    const Tensor<T>* bands[4] = {&s.ll, &s.lh, &s.hl, &s.hh};
    for (int i = 1; i < 4; ++i)
        if (bands[i]->shape() != s.ll.shape())
            throw DimensionError("iwt_haar: sub-band shapes disagree");
    // Re-interleave (ll,lh,hl,hh) per source channel, then synthesize.
    std::size_t c = s.ll.dim(1);
    Tensor<T> merged = concat(std::vector<Tensor<T>>{s.ll, s.lh, s.hl, s.hh}, 1);
    std::vector<std::size_t> order;
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t b = 0; b < 4; ++b) order.push_back(b * c + ci);
    return iwt2(channel_select(merged, order));
}

// Multi-level transform: every level re-transforms all channels of the
// previous stage, so channels grow 4x and resolution halves per level.
template <typename T>
Tensor<T> dwt_multi(const Tensor<T>& x, int level) {
    if (level < 0) throw DimensionError("dwt_multi: level must be >= 0");
    if (level == 0) return x;
    std::size_t div = std::size_t(1) << level;
    if (x.dim(2) % div || x.dim(3) % div)
        throw DimensionError("dwt_multi: H and W must be divisible by " + std::to_string(div));
    Tensor<T> cur = x;
    for (int l = 0; l < level; ++l) cur = dwt2(cur);
    return cur;
}

template <typename T>
Tensor<T> iwt_multi(const Tensor<T>& x, int level) {
    if (level < 0) throw DimensionError("iwt_multi: level must be >= 0");
    if (level == 0) return x;
    std::size_t div = 1;
    for (int l = 0; l < level; ++l) div *= 4;
    if (x.dim(1) % div)
        throw DimensionError("iwt_multi: channel count must be divisible by " + std::to_string(div));
    Tensor<T> cur = x;
    for (int l = 0; l < level; ++l) cur = iwt2(cur);
    return cur;
}

}  // namespace ewt
