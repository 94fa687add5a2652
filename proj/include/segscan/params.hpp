#pragma once

#include <string>
#include <vector>

#include "segscan/rng.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// A learnable tensor together with its gradient accumulator. Modules expose
// their parameters through visit() callbacks so the optimizer, checkpointing
// and the gradient checker can walk them uniformly.
template <class T>
struct Param {
    Tensor<T> v;
    Tensor<T> g;

    void init(std::vector<std::size_t> shape, T fill = T(0)) {
        v = Tensor<T>(shape, fill);
        g = Tensor<T>(v.shape());
    }

    void init_randn(std::vector<std::size_t> shape, Rng& rng, T stddev) {
        v = Tensor<T>::randn(shape, rng, stddev);
        g = Tensor<T>(v.shape());
    }

    void init_scalar(T value) { init({1}, value); }

    T& scalar() { return v[0]; }
    const T& scalar() const { return v[0]; }

    void zero_grad() { g.fill(T(0)); }
};

// Per-pixel 2 -> hidden -> 1 perceptron with tanh hidden activation.
template <class T, std::size_t Hidden = 8>
struct Mlp2 {
    Param<T> w1;  // (Hidden, 2)
    Param<T> b1;  // (Hidden)
    Param<T> w2;  // (Hidden)
    Param<T> b2;  // (1)

    void init(Rng& rng, T stddev = T(0.5)) {
        w1.init_randn({Hidden, 2}, rng, stddev);
        b1.init({Hidden});
        w2.init_randn({Hidden}, rng, stddev);
        b2.init({1});
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }

    // inputs a, b and output share an arbitrary common shape
    Tensor<T> forward(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& hidden_cache) const {
        const std::size_t n = a.numel();
        hidden_cache = Tensor<T>({Hidden, n});
        Tensor<T> out(a.shape());
        for (std::size_t p = 0; p < n; ++p) {
            T acc = b2.v[0];
            for (std::size_t j = 0; j < Hidden; ++j) {
                const T pre = w1.v.at(j, 0) * a[p] + w1.v.at(j, 1) * b[p] + b1.v[j];
                const T h = std::tanh(pre);
                hidden_cache.at(j, p) = h;
                acc += w2.v[j] * h;
            }
            out[p] = acc;
        }
        return out;
    }

    void backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& hidden_cache,
                  const Tensor<T>& gout, Tensor<T>& ga, Tensor<T>& gb) {
        const std::size_t n = a.numel();
        for (std::size_t p = 0; p < n; ++p) {
            const T go = gout[p];
            if (go == T(0)) continue;
            b2.g[0] += go;
            for (std::size_t j = 0; j < Hidden; ++j) {
                const T h = hidden_cache.at(j, p);
                w2.g[j] += go * h;
                const T gpre = go * w2.v[j] * (T(1) - h * h);
                w1.g.at(j, 0) += gpre * a[p];
                w1.g.at(j, 1) += gpre * b[p];
                b1.g[j] += gpre;
                ga[p] += gpre * w1.v.at(j, 0);
                gb[p] += gpre * w1.v.at(j, 1);
            }
        }
    }
};

}  // namespace segscan
