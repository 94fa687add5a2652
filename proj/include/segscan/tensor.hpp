#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "segscan/errors.hpp"
#include "segscan/rng.hpp"

namespace segscan {

// Dense row-major N-d array. The universal carrier for features, maps and
// parameters. 32-bit float on runtime paths, 64-bit on gradient-check paths.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape product " + std::to_string(count(shape_)));
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor full(std::vector<std::size_t> shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor rand_uniform(std::vector<std::size_t> shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    // Values are independent of shape metadata; only the product must match.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (count(shape) != data_.size())
            throw DimensionError("reshape to incompatible element count");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t = Tensor<U>(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) t[i] = static_cast<U>(data_[i]);
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// scalar kernels (exponentials guarded so finite inputs give finite outputs)
// ---------------------------------------------------------------------------

template <class T>
inline T exp_guarded(T x) {
    constexpr T cap = sizeof(T) == 4 ? T(87.0) : T(709.0);
    return std::exp(std::min(x, cap));
}

template <class T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = exp_guarded(x);
    return e / (T(1) + e);
}

template <class T>
inline T softplus_scalar(T x) {
    if (x > T(30)) return x;
    return std::log1p(exp_guarded(x));
}

// inverse of softplus, for seeding constrained parameters at a target value
template <class T>
inline T softplus_inverse(T y) {
    if (y > T(30)) return y;
    return std::log(std::expm1(std::max(y, T(1e-12))));
}

template <class T>
inline T clip_scalar(T x, T lo, T hi) {
    return std::min(std::max(x, lo), hi);
}

// division guarded against zero denominators
template <class T>
inline T div_guarded(T a, T b) {
    constexpr T tiny = sizeof(T) == 4 ? T(1e-12) : T(1e-30);
    if (b > -tiny && b < tiny) b = b < T(0) ? -tiny : tiny;
    return a / b;
}

// ---------------------------------------------------------------------------
// elementwise operations with restricted broadcasting:
// exact shape match, scalar (1-element) operand, or per-channel vector whose
// length equals the first extent of the other operand.
// ---------------------------------------------------------------------------

enum class EwOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Tanh,
    Relu,
    Sqrt,
    Abs,
};

namespace detail {

template <class T>
inline T ew_unary(EwOp op, T a) {
    switch (op) {
        case EwOp::Neg: return -a;
        case EwOp::Exp: return exp_guarded(a);
        case EwOp::Log: return std::log(std::max(a, sizeof(T) == 4 ? T(1e-30) : T(1e-300)));
        case EwOp::Sigmoid: return sigmoid_scalar(a);
        case EwOp::Softplus: return softplus_scalar(a);
        case EwOp::Tanh: return std::tanh(a);
        case EwOp::Relu: return a > T(0) ? a : T(0);
        case EwOp::Sqrt: return std::sqrt(std::max(a, T(0)));
        case EwOp::Abs: return std::abs(a);
        default: throw ParameterError("binary tag used as unary elementwise op");
    }
}

template <class T>
inline T ew_binary(EwOp op, T a, T b) {
    switch (op) {
        case EwOp::Add: return a + b;
        case EwOp::Sub: return a - b;
        case EwOp::Mul: return a * b;
        case EwOp::Div: return div_guarded(a, b);
        default: throw ParameterError("unary tag used as binary elementwise op");
    }
}

}  // namespace detail

template <class T>
Tensor<T> ew(EwOp op, const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::ew_unary(op, a[i]);
    return out;
}

template <class T>
Tensor<T> ew(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out(a.shape());
    if (a.same_shape(b)) {
        for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::ew_binary(op, a[i], b[i]);
        return out;
    }
    if (b.numel() == 1) {
        const T s = b[0];
        for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::ew_binary(op, a[i], s);
        return out;
    }
    if (a.numel() == 1) {
        out = Tensor<T>(b.shape());
        const T s = a[0];
        for (std::size_t i = 0; i < b.numel(); ++i) out[i] = detail::ew_binary(op, s, b[i]);
        return out;
    }
    // per-channel vector against leading axis
    if (b.rank() == 1 && a.rank() >= 1 && a.dim(0) == b.dim(0)) {
        const std::size_t inner = a.numel() / a.dim(0);
        for (std::size_t c = 0; c < a.dim(0); ++c)
            for (std::size_t i = 0; i < inner; ++i)
                out[c * inner + i] = detail::ew_binary(op, a[c * inner + i], b[c]);
        return out;
    }
    throw DimensionError("elementwise operands not broadcastable");
}

template <class T>
Tensor<T> ew(EwOp op, const Tensor<T>& a, T scalar) {
    return ew(op, a, Tensor<T>({1}, scalar));
}

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return ew(EwOp::Add, a, b); }
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return ew(EwOp::Sub, a, b); }
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return ew(EwOp::Mul, a, b); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& a) { return ew(EwOp::Sigmoid, a); }
template <class T> Tensor<T> exp(const Tensor<T>& a) { return ew(EwOp::Exp, a); }

template <class T>
Tensor<T> clip(const Tensor<T>& a, T lo, T hi) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = clip_scalar(a[i], lo, hi);
    return out;
}

// ---------------------------------------------------------------------------
// reductions and small helpers
// ---------------------------------------------------------------------------

template <class T>
T sum(const Tensor<T>& a) {
    T s = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
    return s;
}

template <class T>
T mean(const Tensor<T>& a) {
    return a.numel() ? sum(a) / static_cast<T>(a.numel()) : T(0);
}

template <class T>
T max_value(const Tensor<T>& a) {
    T m = std::numeric_limits<T>::lowest();
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, a[i]);
    return m;
}

template <class T>
T min_value(const Tensor<T>& a) {
    T m = std::numeric_limits<T>::max();
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::min(m, a[i]);
    return m;
}

template <class T>
std::size_t argmax(const Tensor<T>& a) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < a.numel(); ++i)
        if (a[i] > a[best]) best = i;
    return best;
}

template <class T>
std::size_t argmin(const Tensor<T>& a) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < a.numel(); ++i)
        if (a[i] < a[best]) best = i;
    return best;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel()) throw DimensionError("max_abs_diff on mismatched sizes");
    T m = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template <class T>
bool all_finite(const Tensor<T>& a) {
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (!std::isfinite(a[i])) return false;
    return true;
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

}  // namespace segscan
