#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <memory>
#include <numeric>

#include "miflow/common.hpp"

namespace miflow {

// Dense row-major tensor. The buffer is shared between reshaped views; all ops
// in this codebase allocate fresh outputs and never mutate inputs (optimizer
// updates on parameter leaves are the one sanctioned exception).
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        buf_ = std::make_shared<std::vector<T>>(static_cast<size_t>(count_elems(shape_)), T(0));
    }

    Tensor(std::vector<int> shape, std::shared_ptr<std::vector<T>> buf)
        : shape_(std::move(shape)), buf_(std::move(buf)) {
        require(buf_ && static_cast<int64_t>(buf_->size()) == count_elems(shape_),
                "tensor: buffer/shape size mismatch");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data(), t.data() + t.size(), v);
        return t;
    }

    static Tensor from(std::vector<int> shape, const std::vector<T>& values) {
        Tensor t(std::move(shape));
        require(static_cast<int64_t>(values.size()) == t.size(), "tensor: init size mismatch");
        std::copy(values.begin(), values.end(), t.data());
        return t;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, T scale = T(1)) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.size(); i++) t.data()[i] = static_cast<T>(rng.normal()) * scale;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i < 0 ? int(shape_.size()) + i : i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return count_elems(shape_); }
    bool empty() const { return !buf_ || buf_->empty(); }

    T* data() { return buf_->data(); }
    const T* data() const { return buf_->data(); }
    T& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

    // shares the buffer
    Tensor reshape(std::vector<int> shape) const {
        require(count_elems(shape) == size(), "reshape: element count mismatch");
        return Tensor(std::move(shape), buf_);
    }

    Tensor clone() const {
        Tensor t(shape_);
        std::memcpy(t.data(), data(), static_cast<size_t>(size()) * sizeof(T));
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        for (int64_t i = 0; i < size(); i++) t.data()[i] = static_cast<U>(data()[i]);
        return t;
    }

    void fill(T v) { std::fill(data(), data() + size(), v); }

    void add_inplace(const Tensor& other) {
        require(other.size() == size(), "add_inplace: size mismatch");
        const T* o = other.data();
        T* d = data();
        for (int64_t i = 0; i < size(); i++) d[i] += o[i];
    }

    static int64_t count_elems(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            require(d >= 0, "tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<T>> buf_;
};

template <class T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); i++) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

// ---- GEMM ----
// C [m,n] (+)= op(A) * op(B); backed by Eigen for throughput. Each output element
// is produced by exactly one evaluation path, so results are run-to-run deterministic.
template <class T>
void gemm(T* c, const T* a, const T* b, int m, int n, int k, bool trans_a, bool trans_b,
          bool accumulate) {
    using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapC = Eigen::Map<MatRM>;
    using MapA = Eigen::Map<const MatRM>;
    MapC C(c, m, n);
    MapA A(a, trans_a ? k : m, trans_a ? m : k);
    MapA B(b, trans_b ? n : k, trans_b ? k : n);
    if (!trans_a && !trans_b) {
        if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
    } else if (!trans_a && trans_b) {
        if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
    } else if (trans_a && !trans_b) {
        if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
    } else {
        if (accumulate) C.noalias() += A.transpose() * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
}

}  // namespace miflow
