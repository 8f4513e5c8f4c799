#pragma once

#include <map>

#include "miflow/autograd.hpp"

namespace miflow {

// Ordered, named collection of trainable leaves. Order is the serialization
// order, so checkpoints are reproducible byte-for-byte.
template <class T>
class ParamStore {
public:
    Var<T> add(const std::string& name, Tensor<T> init) {
        require(!index_.count(name), "param already registered: " + name);
        auto leaf = std::make_shared<Node<T>>();
        leaf->value = std::move(init);
        leaf->requires_grad = true;
        index_[name] = items_.size();
        items_.push_back({name, leaf});
        return leaf;
    }

    const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

    Var<T> find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].second;
    }

    int64_t total_elems() const {
        int64_t n = 0;
        for (const auto& [name, v] : items_) n += v->value.size();
        return n;
    }

    void zero_grads() {
        for (auto& [name, v] : items_)
            if (!v->grad.empty()) v->grad.fill(T(0));
    }

    void randomize(Rng& rng, T stddev) {
        for (auto& [name, v] : items_)
            for (int64_t i = 0; i < v->value.size(); i++)
                v->value[i] = static_cast<T>(rng.normal()) * stddev;
    }

    // fingerprint used by frozen-weight assertions
    double checksum() const {
        double s = 0;
        for (const auto& [name, v] : items_)
            for (int64_t i = 0; i < v->value.size(); i++) s += double(v->value[i]);
        return s;
    }

private:
    std::vector<std::pair<std::string, Var<T>>> items_;
    std::map<std::string, size_t> index_;
};

template <class T>
struct Linear {
    Var<T> w;  // [in, out]
    Var<T> b;  // [out] or null

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
           bool bias = true, T init_std = T(0.02)) {
        w = ps.add(name + ".w", Tensor<T>::randn({in, out}, rng, init_std));
        if (bias) b = ps.add(name + ".b", Tensor<T>::zeros({out}));
    }

    Var<T> operator()(const Var<T>& x) const {
        auto y = matmul(x, w);
        return b ? add(y, b) : y;
    }

    void zero_init() {
        w->value.fill(T(0));
        if (b) b->value.fill(T(0));
    }
};

template <class T>
struct LayerNorm {
    Var<T> gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& name, int dim) {
        gamma = ps.add(name + ".g", Tensor<T>::full({dim}, T(1)));
        beta = ps.add(name + ".b", Tensor<T>::zeros({dim}));
    }

    Var<T> operator()(const Var<T>& x) const {
        return add(mul(layernorm_last(x), gamma), beta);
    }
};

// scaled dot-product over pre-split heads: q [B*H, Tq, d], k/v [B*H, Tk, d]
template <class T>
Var<T> attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
    int d = q->value.shape().back();
    auto scores = scale(matmul(q, k, false, true), T(1) / std::sqrt(T(d)));
    return matmul(softmax_last(scores), v);
}

template <class T>
struct MultiheadAttention {
    Linear<T> wq, wk, wv, wo;
    int heads = 1;
    int width = 0;

    MultiheadAttention() = default;
    MultiheadAttention(ParamStore<T>& ps, const std::string& name, int dim, int num_heads,
                       Rng& rng)
        : heads(num_heads), width(dim) {
        require(dim % num_heads == 0, "attention width not divisible by heads");
        wq = Linear<T>(ps, name + ".q", dim, dim, rng);
        wk = Linear<T>(ps, name + ".k", dim, dim, rng);
        wv = Linear<T>(ps, name + ".v", dim, dim, rng);
        wo = Linear<T>(ps, name + ".o", dim, dim, rng);
    }

    // x [B, T, C] -> heads [B*H, T, d]
    Var<T> split_heads(const Var<T>& x) const {
        const auto& s = x->value.shape();
        int B = s[0], t = s[1];
        int d = width / heads;
        auto r = reshape(x, {B, t, heads, d});
        r = permute(r, {0, 2, 1, 3});
        return reshape(r, {B * heads, t, d});
    }

    Var<T> merge_heads(const Var<T>& x, int B) const {
        const auto& s = x->value.shape();
        int t = s[1], d = s[2];
        auto r = reshape(x, {B, heads, t, d});
        r = permute(r, {0, 2, 1, 3});
        return reshape(r, {B, t, heads * d});
    }

    // q_in [B, Tq, C], kv_in [B, Tk, C] (2-D inputs are treated as B=1)
    Var<T> operator()(const Var<T>& q_in, const Var<T>& kv_in) const {
        bool flat = q_in->value.ndim() == 2;
        auto q3 = flat ? reshape(q_in, {1, q_in->value.dim(0), q_in->value.dim(1)}) : q_in;
        auto kv3 = kv_in->value.ndim() == 2
                       ? reshape(kv_in, {1, kv_in->value.dim(0), kv_in->value.dim(1)})
                       : kv_in;
        int B = q3->value.dim(0);
        auto q = split_heads(wq(q3));
        auto k = split_heads(wk(kv3));
        auto v = split_heads(wv(kv3));
        auto out = wo(merge_heads(attention_core(q, k, v), B));
        return flat ? reshape(out, {out->value.dim(1), out->value.dim(2)}) : out;
    }
};

// pre-LN self-attention block with a GELU feedforward
template <class T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiheadAttention<T> attn;
    Linear<T> fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& ps, const std::string& name, int dim, int heads, int ffn_mult,
                     Rng& rng) {
        ln1 = LayerNorm<T>(ps, name + ".ln1", dim);
        attn = MultiheadAttention<T>(ps, name + ".attn", dim, heads, rng);
        ln2 = LayerNorm<T>(ps, name + ".ln2", dim);
        fc1 = Linear<T>(ps, name + ".fc1", dim, dim * ffn_mult, rng);
        fc2 = Linear<T>(ps, name + ".fc2", dim * ffn_mult, dim, rng);
    }

    Var<T> operator()(Var<T> x) const {
        auto h = ln1(x);
        x = add(x, attn(h, h));
        x = add(x, fc2(gelu(fc1(ln2(x)))));
        return x;
    }
};

// pre-LN cross-attention block: queries read from a separate context
template <class T>
struct CrossBlock {
    LayerNorm<T> ln_q, ln_kv, ln2;
    MultiheadAttention<T> attn;
    Linear<T> fc1, fc2;

    CrossBlock() = default;
    CrossBlock(ParamStore<T>& ps, const std::string& name, int dim, int heads, int ffn_mult,
               Rng& rng) {
        ln_q = LayerNorm<T>(ps, name + ".lnq", dim);
        ln_kv = LayerNorm<T>(ps, name + ".lnkv", dim);
        attn = MultiheadAttention<T>(ps, name + ".attn", dim, heads, rng);
        ln2 = LayerNorm<T>(ps, name + ".ln2", dim);
        fc1 = Linear<T>(ps, name + ".fc1", dim, dim * ffn_mult, rng);
        fc2 = Linear<T>(ps, name + ".fc2", dim * ffn_mult, dim, rng);
    }

    Var<T> operator()(Var<T> x, const Var<T>& ctx) const {
        x = add(x, attn(ln_q(x), ln_kv(ctx)));
        x = add(x, fc2(gelu(fc1(ln2(x)))));
        return x;
    }
};

// sinusoidal embedding of a scalar; host-side (the timestep is an input)
template <class T>
Tensor<T> sinusoidal_embedding(double t, int dim, double scale) {
    Tensor<T> out({dim});
    int half = dim / 2;
    for (int i = 0; i < half; i++) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        out[i] = static_cast<T>(std::sin(t * scale * freq));
        out[half + i] = static_cast<T>(std::cos(t * scale * freq));
    }
    return out;
}

// ---- optimizer ----

template <class T>
class Adam {
public:
    Adam() = default;
    explicit Adam(const ParamStore<T>& ps, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [name, v] : ps.items()) {
            m_.push_back(Tensor<T>::zeros(v->value.shape()));
            v_.push_back(Tensor<T>::zeros(v->value.shape()));
        }
    }

    // global-norm gradient clip; returns the pre-clip norm
    static double clip_grad_norm(ParamStore<T>& ps, double max_norm) {
        double sq = 0;
        for (const auto& [name, p] : ps.items()) {
            if (p->grad.empty()) continue;
            const T* g = p->grad.data();
            for (int64_t i = 0; i < p->grad.size(); i++) sq += double(g[i]) * double(g[i]);
        }
        double norm = std::sqrt(sq);
        if (max_norm > 0 && norm > max_norm) {
            T s = static_cast<T>(max_norm / norm);
            for (auto& [name, p] : ps.items()) {
                if (p->grad.empty()) continue;
                T* g = p->grad.data();
                for (int64_t i = 0; i < p->grad.size(); i++) g[i] *= s;
            }
        }
        return norm;
    }

    void step(ParamStore<T>& ps, double lr) {
        t_++;
        double bc1 = 1.0 - std::pow(beta1_, double(t_));
        double bc2 = 1.0 - std::pow(beta2_, double(t_));
        const auto& items = ps.items();
        for (size_t p = 0; p < items.size(); p++) {
            auto& param = *items[p].second;
            if (param.grad.empty()) continue;
            T* w = param.value.data();
            const T* g = param.grad.data();
            T* m = m_[p].data();
            T* v = v_[p].data();
            for (int64_t i = 0; i < param.value.size(); i++) {
                m[i] = T(beta1_) * m[i] + T(1 - beta1_) * g[i];
                v[i] = T(beta2_) * v[i] + T(1 - beta2_) * g[i] * g[i];
                double mh = double(m[i]) / bc1;
                double vh = double(v[i]) / bc2;
                w[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    std::vector<Tensor<T>>& moments_m() { return m_; }
    std::vector<Tensor<T>>& moments_v() { return v_; }

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace miflow
