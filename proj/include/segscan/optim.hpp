#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>

#include "segscan/params.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Decoupled-weight-decay adaptive-moment optimiser with bias correction.
// Per-parameter state is keyed by the visit name, so it survives in any
// traversal order.
template <class T>
class AdamW {
public:
    AdamW(T lr = T(1e-4), T weight_decay = T(0.01), T beta1 = T(0.9), T beta2 = T(0.999),
          T eps = T(1e-8))
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

    void begin_step(T lr_now) {
        ++t_;
        lr_now_ = lr_now;
        bc1_ = T(1) - std::pow(b1_, static_cast<T>(t_));
        bc2_ = T(1) - std::pow(b2_, static_cast<T>(t_));
    }

    void update(const std::string& name, Param<T>& p) {
        auto& st = state_[name];
        if (st.m.numel() != p.v.numel()) {
            st.m = Tensor<T>(p.v.shape());
            st.v = Tensor<T>(p.v.shape());
        }
        for (std::size_t i = 0; i < p.v.numel(); ++i) {
            const T g = p.g[i];
            st.m[i] = b1_ * st.m[i] + (T(1) - b1_) * g;
            st.v[i] = b2_ * st.v[i] + (T(1) - b2_) * g * g;
            const T mhat = st.m[i] / bc1_;
            const T vhat = st.v[i] / bc2_;
            p.v[i] -= lr_now_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.v[i]);
        }
    }

    T base_lr() const { return lr_; }
    std::size_t steps() const { return t_; }

private:
    struct State {
        Tensor<T> m, v;
    };
    T lr_, wd_, b1_, b2_, eps_;
    T lr_now_ = T(0), bc1_ = T(1), bc2_ = T(1);
    std::size_t t_ = 0;
    std::map<std::string, State> state_;
};

// half-cosine annealing from lr down to zero over total steps
template <class T>
T cosine_lr(T lr, std::size_t step, std::size_t total) {
    if (total == 0) return lr;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return static_cast<T>(0.5 * static_cast<double>(lr) * (1.0 + std::cos(3.14159265358979323846 * frac)));
}

}  // namespace segscan
