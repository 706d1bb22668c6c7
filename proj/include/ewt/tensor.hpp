#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ewt/common.hpp"

namespace ewt {

// Reverse-mode autodiff over dense N-d arrays. A Tensor is a shared handle to
// a node; ops append nodes whose pullbacks scatter the output gradient into
// the parents. backward() replays pullbacks in reverse topological order and
// then drops the recorded graph, so leaf gradients accumulate across separate
// forward/backward rounds until zero_grad().

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> pullback;

    std::vector<T>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

// Tape recording can be suspended for frozen inference.
inline bool& autograd_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(autograd_enabled()) { autograd_enabled() = false; }
    ~NoGradGuard() { autograd_enabled() = prev; }
};

template <typename T>
class Tensor {
public:
    Tensor() : n_(std::make_shared<TensorNode<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : n_(std::make_shared<TensorNode<T>>()) {
        n_->shape = std::move(shape);
        n_->value.assign(ewt::numel(n_->shape), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : n_(std::make_shared<TensorNode<T>>()) {
        if (ewt::numel(shape) != values.size())
            throw DimensionError("tensor: " + shape_str(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        n_->shape = std::move(shape);
        n_->value = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->value.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t ndim() const { return n_->shape.size(); }

    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }
    T item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor");
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool rg = true) {
        n_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }
    std::vector<T>& grad() { return n_->ensure_grad(); }
    const std::vector<T>& grad() const { return const_cast<TensorNode<T>*>(n_.get())->ensure_grad(); }
    void zero_grad() { n_->grad.assign(n_->value.size(), T(0)); }

    bool is_leaf() const { return n_->parents.empty(); }

    void backward() const {
        if (numel() != 1) throw ContractError("backward() requires a scalar loss");
        std::vector<TensorNode<T>*> order;
        topo_sort(n_.get(), order);
        n_->ensure_grad()[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode<T>* node = *it;
            if (node->pullback) node->pullback(*node);
        }
        // Clear the tape: interior nodes release their graph and scratch grads.
        for (TensorNode<T>* node : order) {
            if (!node->parents.empty()) {
                node->parents.clear();
                node->pullback = nullptr;
                node->grad.clear();
            }
        }
    }

    std::shared_ptr<TensorNode<T>> node() const { return n_; }

private:
    static void topo_sort(TensorNode<T>* root, std::vector<TensorNode<T>*>& out) {
        std::unordered_set<TensorNode<T>*> seen;
        // Iterative post-order DFS; graphs can be thousands of nodes deep.
        std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{root, 0}};
        seen.insert(root);
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                TensorNode<T>* p = node->parents[idx++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                out.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorNode<T>> n_;
};

namespace detail {

// Builds an op result node, recording parents + pullback only when some
// parent participates in grad and recording is enabled.
template <typename T, typename F>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents, F&& pullback) {
    Tensor<T> out(std::move(shape), std::move(value));
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg && autograd_enabled()) {
        out.set_requires_grad(true);
        auto node = out.node();
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->pullback = std::forward<F>(pullback);
    }
    return out;
}

template <typename T>
std::vector<T>* grad_of(TensorNode<T>& self, std::size_t parent) {
    auto& p = *self.parents[parent];
    if (!p.requires_grad) return nullptr;
    return &p.ensure_grad();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](TensorNode<T>& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (auto* g = detail::grad_of(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](TensorNode<T>& self) {
        if (auto* g = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return detail::make_op<T>(a.shape(), std::move(v), {a, b}, [](TensorNode<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (auto* g = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        if (auto* g = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
    return detail::make_op<T>(a.shape(), std::move(v), {a}, [c](TensorNode<T>& self) {
        if (auto* g = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * c;
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    return detail::make_op<T>(a.shape(), std::move(v), {a}, [](TensorNode<T>& self) {
        const auto& x = self.parents[0]->value;
        if (auto* g = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (x[i] > T(0)) (*g)[i] += self.grad[i];
    });
}

// Exact GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        T x = a.data()[i];
        v[i] = x * T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
    }
    return detail::make_op<T>(a.shape(), std::move(v), {a}, [](TensorNode<T>& self) {
        constexpr T c = T(0.39894228040143267794);  // 1/sqrt(2*pi)
        const auto& x = self.parents[0]->value;
        if (auto* g = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                T phi = T(0.5) * (T(1) + std::erf(x[i] * T(0.70710678118654752440)));
                T pdf = c * std::exp(T(-0.5) * x[i] * x[i]);
                (*g)[i] += self.grad[i] * (phi + x[i] * pdf);
            }
    });
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& a) {
    std::vector<T> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(a.data()[i]);
    return detail::make_op<T>(a.shape(), std::move(v), {a}, [](TensorNode<T>& self) {
        const auto& x = self.parents[0]->value;
        if (auto* g = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                T s = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
                (*g)[i] += self.grad[i] * s;
            }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = T(0);
    for (T x : a.data()) s += x;
    return detail::make_op<T>(Shape{1}, std::vector<T>{s}, {a}, [](TensorNode<T>& self) {
        if (auto* g = detail::grad_of(self, 0))
            for (auto& gi : *g) gi += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    T s = T(0);
    for (T x : a.data()) s += x;
    T n = T(a.numel());
    return detail::make_op<T>(Shape{1}, std::vector<T>{s / n}, {a}, [n](TensorNode<T>& self) {
        if (auto* g = detail::grad_of(self, 0))
            for (auto& gi : *g) gi += self.grad[0] / n;
    });
}

// ---------------------------------------------------------------------------
// Layout ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.numel())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    return detail::make_op<T>(std::move(shape), a.data(), {a}, [](TensorNode<T>& self) {
        if (auto* g = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
    if (perm.size() != a.ndim()) throw DimensionError("permute: rank mismatch");
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.shape()[perm[i]];
    auto in_st = row_major_strides(a.shape());
    auto out_st = row_major_strides(out_shape);
    std::vector<std::size_t> src_stride(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) src_stride[i] = in_st[perm[i]];

    std::vector<T> v(a.numel());
    const std::size_t rank = perm.size();
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::size_t rem = i, src = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            src += (rem / out_st[d]) * src_stride[d];
            rem %= out_st[d];
        }
        v[i] = a.data()[src];
    }
    return detail::make_op<T>(std::move(out_shape), std::move(v), {a},
                              [out_st, src_stride, rank](TensorNode<T>& self) {
                                  if (auto* g = detail::grad_of(self, 0))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                          std::size_t rem = i, src = 0;
                                          for (std::size_t d = 0; d < rank; ++d) {
                                              src += (rem / out_st[d]) * src_stride[d];
                                              rem %= out_st[d];
                                          }
                                          (*g)[src] += self.grad[i];
                                      }
                              });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    Shape shape = parts[0].shape();
    if (axis >= shape.size()) throw DimensionError("concat: axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        std::size_t ax = s[axis];
        s[axis] = shape[axis];
        if (s != shape) throw DimensionError("concat: incompatible part shape");
        total += ax;
    }
    Shape out_shape = shape;
    out_shape[axis] = total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

    std::vector<T> v(numel(out_shape));
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        std::size_t w = p.shape()[axis] * inner;
        offsets.push_back(off);
        widths.push_back(w);
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + o * w, w, v.begin() + o * total * inner + off);
        off += w;
    }
    return detail::make_op<T>(std::move(out_shape), std::move(v), parts,
                              [outer, inner, total, offsets, widths](TensorNode<T>& self) {
                                  for (std::size_t p = 0; p < self.parents.size(); ++p) {
                                      auto* g = detail::grad_of(self, p);
                                      if (!g) continue;
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < widths[p]; ++i)
                                              (*g)[o * widths[p] + i] +=
                                                  self.grad[o * total * inner + offsets[p] + i];
                                  }
                              });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= a.ndim() || start + len > a.shape()[axis])
        throw DimensionError("narrow: slice out of range");
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (std::size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
    std::size_t full = a.shape()[axis] * inner, w = len * inner, off = start * inner;

    std::vector<T> v(numel(out_shape));
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.data().begin() + o * full + off, w, v.begin() + o * w);
    return detail::make_op<T>(std::move(out_shape), std::move(v), {a},
                              [outer, full, w, off](TensorNode<T>& self) {
                                  if (auto* g = detail::grad_of(self, 0))
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < w; ++i)
                                              (*g)[o * full + off + i] += self.grad[o * w + i];
                              });
}

// Gather along the channel axis (axis 1 of NCHW); indices may repeat.
template <typename T>
Tensor<T> channel_select(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
    if (a.ndim() != 4) throw DimensionError("channel_select: expects NCHW");
    std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    for (std::size_t ci : indices)
        if (ci >= c) throw DimensionError("channel_select: index out of range");
    Shape out_shape{n, indices.size(), a.dim(2), a.dim(3)};
    std::vector<T> v(numel(out_shape));
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t j = 0; j < indices.size(); ++j)
            std::copy_n(a.data().begin() + (b * c + indices[j]) * hw, hw,
                        v.begin() + (b * indices.size() + j) * hw);
    return detail::make_op<T>(std::move(out_shape), std::move(v), {a},
                              [n, c, hw, indices](TensorNode<T>& self) {
                                  if (auto* g = detail::grad_of(self, 0))
                                      for (std::size_t b = 0; b < n; ++b)
                                          for (std::size_t j = 0; j < indices.size(); ++j)
                                              for (std::size_t i = 0; i < hw; ++i)
                                                  (*g)[(b * c + indices[j]) * hw + i] +=
                                                      self.grad[(b * indices.size() + j) * hw + i];
                              });
}

// ---------------------------------------------------------------------------
// Matmul / softmax / layer norm / linear

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw DimensionError("matmul: rank must be >= 2");
    if (a.ndim() != b.ndim()) throw DimensionError("matmul: rank mismatch");
    std::size_t rank = a.ndim();
    std::size_t m = a.shape()[rank - 2], k = a.shape()[rank - 1];
    std::size_t k2 = b.shape()[rank - 2], p = b.shape()[rank - 1];
    if (k != k2)
        throw DimensionError("matmul: inner dims " + std::to_string(k) + " vs " + std::to_string(k2));
    std::size_t batch = 1;
    for (std::size_t d = 0; d + 2 < rank; ++d) {
        if (a.shape()[d] != b.shape()[d]) throw DimensionError("matmul: batch dims differ");
        batch *= a.shape()[d];
    }
    Shape out_shape = a.shape();
    out_shape[rank - 1] = p;

    std::vector<T> v(batch * m * p, T(0));
    const T* av = a.data().data();
    const T* bv = b.data().data();
#pragma omp parallel for
    for (long long bi = 0; bi < (long long)batch; ++bi) {
        const T* A = av + bi * m * k;
        const T* B = bv + bi * k * p;
        T* C = v.data() + bi * m * p;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
                T aval = A[i * k + l];
                const T* brow = B + l * p;
                T* crow = C + i * p;
                for (std::size_t j = 0; j < p; ++j) crow[j] += aval * brow[j];
            }
    }
    return detail::make_op<T>(std::move(out_shape), std::move(v), {a, b},
                              [batch, m, k, p](TensorNode<T>& self) {
                                  const auto& av = self.parents[0]->value;
                                  const auto& bv = self.parents[1]->value;
                                  if (auto* ga = detail::grad_of(self, 0)) {
#pragma omp parallel for
                                      for (long long bi = 0; bi < (long long)batch; ++bi) {
                                          const T* G = self.grad.data() + bi * m * p;
                                          const T* B = bv.data() + bi * k * p;
                                          T* GA = ga->data() + bi * m * k;
                                          for (std::size_t i = 0; i < m; ++i)
                                              for (std::size_t j = 0; j < p; ++j) {
                                                  T gval = G[i * p + j];
                                                  for (std::size_t l = 0; l < k; ++l)
                                                      GA[i * k + l] += gval * B[l * p + j];
                                              }
                                      }
                                  }
                                  if (auto* gb = detail::grad_of(self, 1)) {
#pragma omp parallel for
                                      for (long long bi = 0; bi < (long long)batch; ++bi) {
                                          const T* G = self.grad.data() + bi * m * p;
                                          const T* A = av.data() + bi * m * k;
                                          T* GB = gb->data() + bi * k * p;
                                          for (std::size_t i = 0; i < m; ++i)
                                              for (std::size_t l = 0; l < k; ++l) {
                                                  T aval = A[i * k + l];
                                                  for (std::size_t j = 0; j < p; ++j)
                                                      GB[l * p + j] += aval * G[i * p + j];
                                              }
                                      }
                                  }
                              });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    if (axis >= a.ndim()) throw DimensionError("softmax: axis out of range");
    std::size_t n = a.shape()[axis];
    std::size_t inner = 1, outer = 1;
    for (std::size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.shape()[d];
    for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];

    std::vector<T> v(a.numel());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t base = o * n * inner + i;
            T mx = a.data()[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.data()[base + j * inner]);
            T sum = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                T e = std::exp(a.data()[base + j * inner] - mx);
                v[base + j * inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < n; ++j) v[base + j * inner] /= sum;
        }
    return detail::make_op<T>(a.shape(), std::move(v), {a},
                              [outer, inner, n](TensorNode<T>& self) {
                                  auto* g = detail::grad_of(self, 0);
                                  if (!g) return;
                                  const auto& y = self.value;
                                  for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < inner; ++i) {
                                          std::size_t base = o * n * inner + i;
                                          T dot = T(0);
                                          for (std::size_t j = 0; j < n; ++j)
                                              dot += self.grad[base + j * inner] * y[base + j * inner];
                                          for (std::size_t j = 0; j < n; ++j)
                                              (*g)[base + j * inner] +=
                                                  y[base + j * inner] *
                                                  (self.grad[base + j * inner] - dot);
                                      }
                              });
}

// Normalizes over the last axis, then applies the affine pair.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    if (x.ndim() < 1) throw DimensionError("layer_norm: rank 0 input");
    std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layer_norm: affine length != last axis extent");
    if (eps <= T(0)) throw ContractError("layer_norm: eps must be positive");
    std::size_t rows = x.numel() / d;

    std::vector<T> v(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * d;
        T mean = T(0);
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= T(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= T(d);
        T rstd = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j)
            v[r * d + j] = (xr[j] - mean) * rstd * gamma.data()[j] + beta.data()[j];
    }
    return detail::make_op<T>(x.shape(), std::move(v), {x, gamma, beta},
                              [rows, d, eps](TensorNode<T>& self) {
                                  const auto& xv = self.parents[0]->value;
                                  const auto& gv = self.parents[1]->value;
                                  auto* gx = detail::grad_of(self, 0);
                                  auto* gg = detail::grad_of(self, 1);
                                  auto* gb = detail::grad_of(self, 2);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      const T* xr = xv.data() + r * d;
                                      const T* go = self.grad.data() + r * d;
                                      T mean = T(0);
                                      for (std::size_t j = 0; j < d; ++j) mean += xr[j];
                                      mean /= T(d);
                                      T var = T(0);
                                      for (std::size_t j = 0; j < d; ++j)
                                          var += (xr[j] - mean) * (xr[j] - mean);
                                      var /= T(d);
                                      T rstd = T(1) / std::sqrt(var + eps);
                                      if (gg || gb)
                                          for (std::size_t j = 0; j < d; ++j) {
                                              T xhat = (xr[j] - mean) * rstd;
                                              if (gg) (*gg)[j] += go[j] * xhat;
                                              if (gb) (*gb)[j] += go[j];
                                          }
                                      if (gx) {
                                          T sum_dy = T(0), sum_dyx = T(0);
                                          for (std::size_t j = 0; j < d; ++j) {
                                              T dy = go[j] * gv[j];
                                              T xhat = (xr[j] - mean) * rstd;
                                              sum_dy += dy;
                                              sum_dyx += dy * xhat;
                                          }
                                          for (std::size_t j = 0; j < d; ++j) {
                                              T dy = go[j] * gv[j];
                                              T xhat = (xr[j] - mean) * rstd;
                                              (*gx)[r * d + j] +=
                                                  rstd * (dy - sum_dy / T(d) - xhat * sum_dyx / T(d));
                                          }
                                      }
                                  }
                              });
}

// x[..., Din] @ w[Din, Dout] + b[Dout]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w.ndim() != 2) throw DimensionError("linear: weight must be 2-d");
    std::size_t din = w.dim(0), dout = w.dim(1);
    if (x.shape().back() != din)
        throw DimensionError("linear: input dim " + std::to_string(x.shape().back()) + " vs weight " +
                             std::to_string(din));
    if (b.numel() != dout) throw DimensionError("linear: bias length mismatch");
    std::size_t rows = x.numel() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;

    std::vector<T> v(rows * dout);
    const T* xv = x.data().data();
    const T* wv = w.data().data();
    const T* bv = b.data().data();
#pragma omp parallel for
    for (long long r = 0; r < (long long)rows; ++r) {
        T* out = v.data() + r * dout;
        std::copy_n(bv, dout, out);
        const T* xr = xv + r * din;
        for (std::size_t i = 0; i < din; ++i) {
            T xval = xr[i];
            const T* wrow = wv + i * dout;
            for (std::size_t j = 0; j < dout; ++j) out[j] += xval * wrow[j];
        }
    }
    return detail::make_op<T>(std::move(out_shape), std::move(v), {x, w, b},
                              [rows, din, dout](TensorNode<T>& self) {
                                  const auto& xv = self.parents[0]->value;
                                  const auto& wv = self.parents[1]->value;
                                  if (auto* gx = detail::grad_of(self, 0)) {
#pragma omp parallel for
                                      for (long long r = 0; r < (long long)rows; ++r) {
                                          const T* go = self.grad.data() + r * dout;
                                          T* gxr = gx->data() + r * din;
                                          for (std::size_t i = 0; i < din; ++i) {
                                              const T* wrow = wv.data() + i * dout;
                                              T acc = T(0);
                                              for (std::size_t j = 0; j < dout; ++j)
                                                  acc += go[j] * wrow[j];
                                              gxr[i] += acc;
                                          }
                                      }
                                  }
                                  if (auto* gw = detail::grad_of(self, 1)) {
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          const T* go = self.grad.data() + r * dout;
                                          const T* xr = xv.data() + r * din;
                                          for (std::size_t i = 0; i < din; ++i) {
                                              T xval = xr[i];
                                              T* gwrow = gw->data() + i * dout;
                                              for (std::size_t j = 0; j < dout; ++j)
                                                  gwrow[j] += xval * go[j];
                                          }
                                      }
                                  }
                                  if (auto* gb = detail::grad_of(self, 2)) {
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          const T* go = self.grad.data() + r * dout;
                                          for (std::size_t j = 0; j < dout; ++j) (*gb)[j] += go[j];
                                      }
                                  }
                              });
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, NCHW, square odd kernel, per-channel bias.

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 1,
                 std::size_t pad = 0) {
    if (x.ndim() != 4 || w.ndim() != 4) throw DimensionError("conv2d: expects NCHW input and OIHW weight");
    std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    std::size_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin)
        throw DimensionError("conv2d: input channels " + std::to_string(cin) + " vs weight " +
                             std::to_string(w.dim(1)));
    if (w.dim(3) != k || k % 2 == 0) throw DimensionError("conv2d: kernel must be square with odd size");
    if (b.numel() != cout) throw DimensionError("conv2d: bias length mismatch");
    if (stride == 0) throw ContractError("conv2d: stride must be positive");
    std::size_t ho = (h + 2 * pad - k) / stride + 1;
    std::size_t wo = (wd + 2 * pad - k) / stride + 1;
    Shape out_shape{n, cout, ho, wo};

    std::vector<T> v(numel(out_shape));
    const T* xv = x.data().data();
    const T* wv = w.data().data();
#pragma omp parallel for collapse(2)
    for (long long bi = 0; bi < (long long)n; ++bi)
        for (long long co = 0; co < (long long)cout; ++co) {
            T* out = v.data() + (bi * cout + co) * ho * wo;
            std::fill_n(out, ho * wo, b.data()[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* xc = xv + (bi * cin + ci) * h * wd;
                const T* wc = wv + (co * cin + ci) * k * k;
                for (std::size_t kh = 0; kh < k; ++kh)
                    for (std::size_t kw = 0; kw < k; ++kw) {
                        T wval = wc[kh * k + kw];
                        for (std::size_t oh = 0; oh < ho; ++oh) {
                            long long ih = (long long)(oh * stride + kh) - (long long)pad;
                            if (ih < 0 || ih >= (long long)h) continue;
                            const T* xrow = xc + ih * wd;
                            T* orow = out + oh * wo;
                            for (std::size_t ow = 0; ow < wo; ++ow) {
                                long long iw = (long long)(ow * stride + kw) - (long long)pad;
                                if (iw < 0 || iw >= (long long)wd) continue;
                                orow[ow] += wval * xrow[iw];
                            }
                        }
                    }
            }
        }
    return detail::make_op<T>(
        std::move(out_shape), std::move(v), {x, w, b},
        [n, cin, h, wd, cout, k, stride, pad, ho, wo](TensorNode<T>& self) {
            const auto& xv = self.parents[0]->value;
            const auto& wv = self.parents[1]->value;
            if (auto* gx = detail::grad_of(self, 0)) {
#pragma omp parallel for collapse(2)
                for (long long bi = 0; bi < (long long)n; ++bi)
                    for (long long ci = 0; ci < (long long)cin; ++ci) {
                        T* gxc = gx->data() + (bi * cin + ci) * h * wd;
                        for (std::size_t co = 0; co < cout; ++co) {
                            const T* go = self.grad.data() + (bi * cout + co) * ho * wo;
                            const T* wc = wv.data() + (co * cin + ci) * k * k;
                            for (std::size_t kh = 0; kh < k; ++kh)
                                for (std::size_t kw = 0; kw < k; ++kw) {
                                    T wval = wc[kh * k + kw];
                                    for (std::size_t oh = 0; oh < ho; ++oh) {
                                        long long ih = (long long)(oh * stride + kh) - (long long)pad;
                                        if (ih < 0 || ih >= (long long)h) continue;
                                        T* gxrow = gxc + ih * wd;
                                        const T* grow = go + oh * wo;
                                        for (std::size_t ow = 0; ow < wo; ++ow) {
                                            long long iw = (long long)(ow * stride + kw) - (long long)pad;
                                            if (iw < 0 || iw >= (long long)wd) continue;
                                            gxrow[iw] += wval * grow[ow];
                                        }
                                    }
                                }
                        }
                    }
            }
            if (auto* gw = detail::grad_of(self, 1)) {
#pragma omp parallel for collapse(2)
                for (long long co = 0; co < (long long)cout; ++co)
                    for (long long ci = 0; ci < (long long)cin; ++ci) {
                        T* gwc = gw->data() + (co * cin + ci) * k * k;
                        for (std::size_t bi = 0; bi < n; ++bi) {
                            const T* go = self.grad.data() + (bi * cout + co) * ho * wo;
                            const T* xc = xv.data() + (bi * cin + ci) * h * wd;
                            for (std::size_t kh = 0; kh < k; ++kh)
                                for (std::size_t kw = 0; kw < k; ++kw) {
                                    T acc = T(0);
                                    for (std::size_t oh = 0; oh < ho; ++oh) {
                                        long long ih = (long long)(oh * stride + kh) - (long long)pad;
                                        if (ih < 0 || ih >= (long long)h) continue;
                                        const T* xrow = xc + ih * wd;
                                        const T* grow = go + oh * wo;
                                        for (std::size_t ow = 0; ow < wo; ++ow) {
                                            long long iw = (long long)(ow * stride + kw) - (long long)pad;
                                            if (iw < 0 || iw >= (long long)wd) continue;
                                            acc += xrow[iw] * grow[ow];
                                        }
                                    }
                                    gwc[kh * k + kw] += acc;
                                }
                        }
                    }
            }
            if (auto* gb = detail::grad_of(self, 2)) {
                for (std::size_t bi = 0; bi < n; ++bi)
                    for (std::size_t co = 0; co < cout; ++co) {
                        const T* go = self.grad.data() + (bi * cout + co) * ho * wo;
                        T acc = T(0);
                        for (std::size_t i = 0; i < ho * wo; ++i) acc += go[i];
                        (*gb)[co] += acc;
                    }
            }
        });
}

// Mean absolute error over all elements.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred, target, "l1_loss");
    return mean_all(abs_t(sub(pred, target)));
}

}  // namespace ewt
