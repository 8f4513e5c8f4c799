#pragma once

#include <functional>
#include <unordered_set>

#include "miflow/tensor.hpp"

namespace miflow {

// Reverse-mode autodiff on a dynamic tape. Nodes own their value, a lazily
// allocated gradient, and a closure that scatters this node's gradient into its
// parents. Graphs are built per forward pass and dropped when the root dies.

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until backward touches it
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
        return grad;
    }
};

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
};

template <class T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && g_grad_enabled;
    return n;
}

template <class T>
Var<T> constant(Tensor<T> value) {
    return make_leaf<T>(std::move(value), false);
}

namespace detail {

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) n->requires_grad = true;
        if (n->requires_grad) {
            n->parents = std::move(parents);
            n->backward_fn = std::move(backward_fn);
        }
    }
    return n;
}

// broadcast check: b's shape must be a suffix of a's shape (or a scalar)
template <class T>
int64_t suffix_repeat(const Tensor<T>& a, const Tensor<T>& b, const char* opname) {
    if (same_shape(a, b)) return 1;
    const auto& as = a.shape();
    const auto& bs = b.shape();
    require(bs.size() <= as.size(), std::string(opname) + ": shape mismatch " +
                                        shape_str(as) + " vs " + shape_str(bs));
    for (size_t i = 0; i < bs.size(); i++)
        require(bs[bs.size() - 1 - i] == as[as.size() - 1 - i],
                std::string(opname) + ": broadcast mismatch " + shape_str(as) + " vs " +
                    shape_str(bs));
    int64_t rep = a.size() / std::max<int64_t>(b.size(), 1);
    return rep;
}

}  // namespace detail

// ---- elementwise binary ----

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    int64_t rep = detail::suffix_repeat(a->value, b->value, "add");
    int64_t bn = b->value.size();
    Tensor<T> out = a->value.clone();
    const T* bd = b->value.data();
    T* od = out.data();
    for (int64_t r = 0; r < rep; r++)
        for (int64_t i = 0; i < bn; i++) od[r * bn + i] += bd[i];
    return detail::make_op<T>(std::move(out), {a, b}, [rep, bn](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) pa.ensure_grad().add_inplace(n.grad);
        if (pb.requires_grad) {
            T* gb = pb.ensure_grad().data();
            const T* g = n.grad.data();
            for (int64_t r = 0; r < rep; r++)
                for (int64_t i = 0; i < bn; i++) gb[i] += g[r * bn + i];
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    int64_t rep = detail::suffix_repeat(a->value, b->value, "mul");
    int64_t bn = b->value.size();
    Tensor<T> out = a->value.clone();
    const T* bd = b->value.data();
    T* od = out.data();
    for (int64_t r = 0; r < rep; r++)
        for (int64_t i = 0; i < bn; i++) od[r * bn + i] *= bd[i];
    return detail::make_op<T>(std::move(out), {a, b}, [rep, bn](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        const T* g = n.grad.data();
        if (pa.requires_grad) {
            T* ga = pa.ensure_grad().data();
            const T* bd2 = pb.value.data();
            for (int64_t r = 0; r < rep; r++)
                for (int64_t i = 0; i < bn; i++) ga[r * bn + i] += g[r * bn + i] * bd2[i];
        }
        if (pb.requires_grad) {
            T* gb = pb.ensure_grad().data();
            const T* ad = pa.value.data();
            for (int64_t r = 0; r < rep; r++)
                for (int64_t i = 0; i < bn; i++) gb[i] += g[r * bn + i] * ad[r * bn + i];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require(same_shape(a->value, b->value), "sub: shape mismatch");
    Tensor<T> out = a->value.clone();
    const T* bd = b->value.data();
    T* od = out.data();
    for (int64_t i = 0; i < out.size(); i++) od[i] -= bd[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) pa.ensure_grad().add_inplace(n.grad);
        if (pb.requires_grad) {
            T* gb = pb.ensure_grad().data();
            const T* g = n.grad.data();
            for (int64_t i = 0; i < n.grad.size(); i++) gb[i] -= g[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a->value.clone();
    T* od = out.data();
    for (int64_t i = 0; i < out.size(); i++) od[i] *= s;
    return detail::make_op<T>(std::move(out), {a}, [s](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        T* ga = pa.ensure_grad().data();
        const T* g = n.grad.data();
        for (int64_t i = 0; i < n.grad.size(); i++) ga[i] += g[i] * s;
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> out = a->value.clone();
    T* od = out.data();
    for (int64_t i = 0; i < out.size(); i++) od[i] += s;
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (pa.requires_grad) pa.ensure_grad().add_inplace(n.grad);
    });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

// ---- elementwise unary ----

template <class T, class Fwd, class Bwd>
Var<T> unary_op(const Var<T>& a, Fwd fwd, Bwd bwd_from_input) {
    Tensor<T> out(a->value.shape());
    const T* ad = a->value.data();
    T* od = out.data();
    for (int64_t i = 0; i < out.size(); i++) od[i] = fwd(ad[i]);
    return detail::make_op<T>(std::move(out), {a}, [bwd_from_input](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        T* ga = pa.ensure_grad().data();
        const T* g = n.grad.data();
        const T* x = pa.value.data();
        const T* y = n.value.data();
        for (int64_t i = 0; i < n.grad.size(); i++) ga[i] += g[i] * bwd_from_input(x[i], y[i]);
    });
}

template <class T>
Var<T> vexp(const Var<T>& a) {
    return unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> vlog(const Var<T>& a) {
    return unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    return unary_op(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                    [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> vtanh(const Var<T>& a) {
    return unary_op(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> square(const Var<T>& a) {
    return unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Var<T> silu(const Var<T>& a) {
    return unary_op(a, [](T x) { return x / (T(1) + std::exp(-x)); },
                    [](T x, T) {
                        T s = T(1) / (T(1) + std::exp(-x));
                        return s * (T(1) + x * (T(1) - s));
                    });
}

// tanh-approximation GELU; smooth everywhere, which keeps finite-difference
// gradient checks clean
template <class T>
Var<T> gelu(const Var<T>& a) {
    constexpr double k0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k1 = 0.044715;
    return unary_op(
        a,
        [](T x) {
            double xd = double(x);
            return T(0.5 * xd * (1.0 + std::tanh(k0 * (xd + k1 * xd * xd * xd))));
        },
        [](T x, T) {
            double xd = double(x);
            double u = k0 * (xd + k1 * xd * xd * xd);
            double th = std::tanh(u);
            double du = k0 * (1.0 + 3.0 * k1 * xd * xd);
            return T(0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * du);
        });
}

template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    return unary_op(a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---- reductions ----

template <class T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    const T* ad = a->value.data();
    for (int64_t i = 0; i < a->value.size(); i++) s += ad[i];
    Tensor<T> out = Tensor<T>::full({1}, s);
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        T g = n.grad.data()[0];
        T* ga = pa.ensure_grad().data();
        for (int64_t i = 0; i < pa.value.size(); i++) ga[i] += g;
    });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
    return scale(sum_all(a), T(1) / T(a->value.size()));
}

// ---- shape ops ----

template <class T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
    Tensor<T> out = a->value.reshape(std::move(shape));
    return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad().add_inplace(n.grad.reshape(pa.value.shape()));
    });
}

namespace detail {

inline void permute_copy_shape(const std::vector<int>& in_shape, const std::vector<int>& perm,
                               std::vector<int>& out_shape, std::vector<int64_t>& in_strides,
                               std::vector<int64_t>& out_strides_by_in_axis) {
    int nd = static_cast<int>(in_shape.size());
    out_shape.resize(nd);
    for (int i = 0; i < nd; i++) out_shape[i] = in_shape[perm[i]];
    in_strides.assign(nd, 1);
    for (int i = nd - 2; i >= 0; i--) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    std::vector<int64_t> out_strides(nd, 1);
    for (int i = nd - 2; i >= 0; i--) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    out_strides_by_in_axis.assign(nd, 0);
    for (int i = 0; i < nd; i++) out_strides_by_in_axis[perm[i]] = out_strides[i];
}

template <class T>
void permute_apply(const T* src, T* dst, const std::vector<int>& in_shape,
                   const std::vector<int64_t>& dst_stride_by_in_axis, bool accumulate) {
    int nd = static_cast<int>(in_shape.size());
    int64_t total = 1;
    for (int d : in_shape) total *= d;
    std::vector<int> idx(nd, 0);
    int64_t dpos = 0;
    for (int64_t i = 0; i < total; i++) {
        if (accumulate) dst[dpos] += src[i];
        else dst[dpos] = src[i];
        for (int ax = nd - 1; ax >= 0; ax--) {
            idx[ax]++;
            dpos += dst_stride_by_in_axis[ax];
            if (idx[ax] < in_shape[ax]) break;
            dpos -= dst_stride_by_in_axis[ax] * in_shape[ax];
            idx[ax] = 0;
        }
    }
}

}  // namespace detail

template <class T>
Var<T> permute(const Var<T>& a, std::vector<int> perm) {
    require(perm.size() == a->value.shape().size(), "permute: rank mismatch");
    std::vector<int> out_shape;
    std::vector<int64_t> in_strides, dst_by_in;
    detail::permute_copy_shape(a->value.shape(), perm, out_shape, in_strides, dst_by_in);
    Tensor<T> out(out_shape);
    detail::permute_apply(a->value.data(), out.data(), a->value.shape(), dst_by_in, false);
    auto in_shape = a->value.shape();
    return detail::make_op<T>(std::move(out), {a}, [in_shape, dst_by_in](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        // walk input index space again; accumulate grad back from permuted positions
        T* ga = pa.ensure_grad().data();
        const T* g = n.grad.data();
        int nd = static_cast<int>(in_shape.size());
        std::vector<int> idx(nd, 0);
        int64_t dpos = 0;
        int64_t total = pa.value.size();
        for (int64_t i = 0; i < total; i++) {
            ga[i] += g[dpos];
            for (int ax = nd - 1; ax >= 0; ax--) {
                idx[ax]++;
                dpos += dst_by_in[ax];
                if (idx[ax] < in_shape[ax]) break;
                dpos -= dst_by_in[ax] * in_shape[ax];
                idx[ax] = 0;
            }
        }
    });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    auto shape = parts[0]->value.shape();
    int nd = static_cast<int>(shape.size());
    if (axis < 0) axis += nd;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; i++) outer *= shape[i];
    for (int i = axis + 1; i < nd; i++) inner *= shape[i];
    int total_axis = 0;
    for (const auto& p : parts) {
        const auto& ps = p->value.shape();
        require(static_cast<int>(ps.size()) == nd, "concat: rank mismatch");
        for (int i = 0; i < nd; i++)
            require(i == axis || ps[i] == shape[i], "concat: shape mismatch");
        total_axis += ps[axis];
    }
    auto out_shape = shape;
    out_shape[axis] = total_axis;
    Tensor<T> out(out_shape);
    std::vector<int> sizes;
    int64_t off = 0;
    for (const auto& p : parts) {
        int len = p->value.shape()[axis];
        sizes.push_back(len);
        const T* src = p->value.data();
        for (int64_t o = 0; o < outer; o++)
            std::memcpy(out.data() + (o * total_axis + off) * inner, src + o * len * inner,
                        static_cast<size_t>(len * inner) * sizeof(T));
        off += len;
    }
    return detail::make_op<T>(std::move(out), parts,
                              [outer, inner, total_axis, sizes](Node<T>& n) {
                                  const T* g = n.grad.data();
                                  int64_t off2 = 0;
                                  for (size_t k = 0; k < n.parents.size(); k++) {
                                      auto& p = *n.parents[k];
                                      int len = sizes[k];
                                      if (p.requires_grad) {
                                          T* gp = p.ensure_grad().data();
                                          for (int64_t o = 0; o < outer; o++) {
                                              const T* gs = g + (o * total_axis + off2) * inner;
                                              T* gd = gp + o * len * inner;
                                              for (int64_t i = 0; i < len * inner; i++) gd[i] += gs[i];
                                          }
                                      }
                                      off2 += len;
                                  }
                              });
}

template <class T>
Var<T> slice(const Var<T>& a, int axis, int start, int len) {
    auto shape = a->value.shape();
    int nd = static_cast<int>(shape.size());
    if (axis < 0) axis += nd;
    require(start >= 0 && start + len <= shape[axis], "slice: out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; i++) outer *= shape[i];
    for (int i = axis + 1; i < nd; i++) inner *= shape[i];
    auto out_shape = shape;
    out_shape[axis] = len;
    Tensor<T> out(out_shape);
    int ax_size = shape[axis];
    for (int64_t o = 0; o < outer; o++)
        std::memcpy(out.data() + o * len * inner,
                    a->value.data() + (o * ax_size + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(T));
    return detail::make_op<T>(std::move(out), {a},
                              [outer, inner, ax_size, start, len](Node<T>& n) {
                                  auto& pa = *n.parents[0];
                                  if (!pa.requires_grad) return;
                                  T* gp = pa.ensure_grad().data();
                                  const T* g = n.grad.data();
                                  for (int64_t o = 0; o < outer; o++) {
                                      T* gd = gp + (o * ax_size + start) * inner;
                                      const T* gs = g + o * len * inner;
                                      for (int64_t i = 0; i < len * inner; i++) gd[i] += gs[i];
                                  }
                              });
}

// tile a tensor n times along a new leading axis: [d...] -> [n, d...]
template <class T>
Var<T> expand_leading(const Var<T>& a, int n) {
    auto shape = a->value.shape();
    std::vector<int> out_shape;
    out_shape.push_back(n);
    out_shape.insert(out_shape.end(), shape.begin(), shape.end());
    int64_t sz = a->value.size();
    Tensor<T> out(out_shape);
    for (int r = 0; r < n; r++)
        std::memcpy(out.data() + r * sz, a->value.data(), static_cast<size_t>(sz) * sizeof(T));
    return detail::make_op<T>(std::move(out), {a}, [n, sz](Node<T>& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        T* gp = pa.ensure_grad().data();
        const T* g = nd.grad.data();
        for (int r = 0; r < n; r++)
            for (int64_t i = 0; i < sz; i++) gp[i] += g[r * sz + i];
    });
}

// ---- softmax / layernorm over the last axis ----

template <class T>
Var<T> softmax_last(const Var<T>& a) {
    const auto& shape = a->value.shape();
    int cols = shape.back();
    int64_t rows = a->value.size() / cols;
    Tensor<T> out(shape);
    const T* x = a->value.data();
    T* y = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; r++) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mx = xr[0];
        for (int i = 1; i < cols; i++) mx = std::max(mx, xr[i]);
        T s = 0;
        for (int i = 0; i < cols; i++) {
            yr[i] = std::exp(xr[i] - mx);
            s += yr[i];
        }
        T inv = T(1) / s;
        for (int i = 0; i < cols; i++) yr[i] *= inv;
    }
    return detail::make_op<T>(std::move(out), {a}, [rows, cols](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        T* gx = pa.ensure_grad().data();
        const T* g = n.grad.data();
        const T* y2 = n.value.data();
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; r++) {
            const T* gr = g + r * cols;
            const T* yr = y2 + r * cols;
            T* gxr = gx + r * cols;
            T dot = 0;
            for (int i = 0; i < cols; i++) dot += gr[i] * yr[i];
            for (int i = 0; i < cols; i++) gxr[i] += yr[i] * (gr[i] - dot);
        }
    });
}

// normalization only; affine transforms are composed from mul/add with
// broadcast parameters
template <class T>
Var<T> layernorm_last(const Var<T>& a, T eps = T(1e-5)) {
    const auto& shape = a->value.shape();
    int cols = shape.back();
    int64_t rows = a->value.size() / cols;
    Tensor<T> out(shape);
    Tensor<T> inv_std({static_cast<int>(rows)});
    const T* x = a->value.data();
    T* y = out.data();
    T* is = inv_std.data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; r++) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mean = 0;
        for (int i = 0; i < cols; i++) mean += xr[i];
        mean /= T(cols);
        T var = 0;
        for (int i = 0; i < cols; i++) {
            T d = xr[i] - mean;
            var += d * d;
        }
        var /= T(cols);
        T inv = T(1) / std::sqrt(var + eps);
        is[r] = inv;
        for (int i = 0; i < cols; i++) yr[i] = (xr[i] - mean) * inv;
    }
    return detail::make_op<T>(std::move(out), {a}, [rows, cols, inv_std](Node<T>& n) {
        auto& pa = *n.parents[0];
        if (!pa.requires_grad) return;
        T* gx = pa.ensure_grad().data();
        const T* g = n.grad.data();
        const T* y2 = n.value.data();
        const T* is2 = inv_std.data();
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; r++) {
            const T* gr = g + r * cols;
            const T* yr = y2 + r * cols;
            T* gxr = gx + r * cols;
            T mean_g = 0, mean_gy = 0;
            for (int i = 0; i < cols; i++) {
                mean_g += gr[i];
                mean_gy += gr[i] * yr[i];
            }
            mean_g /= T(cols);
            mean_gy /= T(cols);
            for (int i = 0; i < cols; i++)
                gxr[i] += is2[r] * (gr[i] - mean_g - yr[i] * mean_gy);
        }
    });
}

// ---- matmul ----
// a: [batch..., m, k]; b: [batch..., k, n] or [k, n] (broadcast over a's batch).
// trans flags apply to the trailing two axes as stored.

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
    const auto& as = a->value.shape();
    const auto& bs = b->value.shape();
    require(as.size() >= 2 && bs.size() >= 2, "matmul: rank < 2");
    int a_rows = as[as.size() - 2], a_cols = as[as.size() - 1];
    int b_rows = bs[bs.size() - 2], b_cols = bs[bs.size() - 1];
    int m = trans_a ? a_cols : a_rows;
    int k = trans_a ? a_rows : a_cols;
    int kb = trans_b ? b_cols : b_rows;
    int n = trans_b ? b_rows : b_cols;
    require(k == kb, "matmul: inner dim mismatch " + shape_str(as) + (trans_a ? "^T" : "") +
                         " x " + shape_str(bs) + (trans_b ? "^T" : ""));
    int64_t batch_a = a->value.size() / (int64_t(a_rows) * a_cols);
    int64_t batch_b = b->value.size() / (int64_t(b_rows) * b_cols);
    bool broadcast_b = (bs.size() == 2 && as.size() > 2);
    require(broadcast_b || batch_a == batch_b,
            "matmul: batch mismatch " + shape_str(as) + " vs " + shape_str(bs));

    std::vector<int> out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);

    int64_t a_sz = int64_t(a_rows) * a_cols, b_sz = int64_t(b_rows) * b_cols,
            c_sz = int64_t(m) * n;
    const T* ad = a->value.data();
    const T* bd = b->value.data();
    T* cd = out.data();
#pragma omp parallel for schedule(static) if (batch_a > 1)
    for (int64_t i = 0; i < batch_a; i++)
        gemm(cd + i * c_sz, ad + i * a_sz, bd + (broadcast_b ? 0 : i * b_sz), m, n, k,
             trans_a, trans_b, false);

    return detail::make_op<T>(
        std::move(out), {a, b},
        [m, n, k, a_sz, b_sz, c_sz, batch_a, broadcast_b, trans_a, trans_b](Node<T>& nd) {
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            const T* g = nd.grad.data();
            const T* av = pa.value.data();
            const T* bv = pb.value.data();
            if (pa.requires_grad) {
                T* ga = pa.ensure_grad().data();
#pragma omp parallel for schedule(static) if (batch_a > 1)
                for (int64_t i = 0; i < batch_a; i++) {
                    const T* gi = g + i * c_sz;
                    const T* bi = bv + (broadcast_b ? 0 : i * b_sz);
                    T* gai = ga + i * a_sz;
                    if (!trans_a) {
                        // dA = dC * op(B)^T
                        gemm(gai, gi, bi, m, k, n, false, !trans_b, true);
                    } else {
                        // A stored [k, m]: dA^T = op(B) * dC^T -> dA = (dC * op(B)^T)^T
                        // computed directly: dA[k,m] = op(B) dC^T
                        gemm(gai, bi, gi, k, m, n, trans_b, true, true);
                    }
                }
            }
            if (pb.requires_grad) {
                T* gb = pb.ensure_grad().data();
                // broadcast case accumulates over the batch; keep it sequential so the
                // reduction order is fixed
                for (int64_t i = 0; i < batch_a; i++) {
                    const T* gi = g + i * c_sz;
                    const T* ai = av + i * a_sz;
                    T* gbi = gb + (broadcast_b ? 0 : i * b_sz);
                    if (!trans_b) {
                        // dB = op(A)^T * dC
                        gemm(gbi, ai, gi, k, n, m, !trans_a, false, true);
                    } else {
                        // B stored [n, k]: dB = dC^T * op(A)
                        gemm(gbi, gi, ai, n, k, m, true, trans_a, true);
                    }
                }
            }
        });
}

// ---- backward driver ----

template <class T>
void backward(const Var<T>& root) {
    require(root->requires_grad, "backward: root does not require grad");
    // iterative post-order topological sort
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node<T>* p = node->parents[child].get();
            child++;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad().fill(T(1));
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

}  // namespace miflow
