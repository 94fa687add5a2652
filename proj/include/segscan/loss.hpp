#pragma once

#include <cmath>
#include <vector>

#include "segscan/errors.hpp"
#include "segscan/metrics.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Dice-CE combined loss with deep supervision: per level, soft Dice plus
// pixel-mean cross entropy on nearest-neighbour-downsampled labels, summed
// with per-level weights.

inline constexpr double kDiceEps = 1e-5;

// nearest-neighbour downsample of integer labels by an integer factor
inline std::vector<std::uint16_t> downsample_labels(const LabelMask& gt, std::size_t h,
                                                    std::size_t w) {
    const std::size_t fy = gt.height / h, fx = gt.width / w;
    if (fy * h != gt.height || fx * w != gt.width)
        throw DimensionError("label downsample factor must be integral");
    std::vector<std::uint16_t> out(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[y * w + x] = gt.at(y * fy, x * fx);
    return out;
}

template <class T>
struct LossResult {
    T value = T(0);
    T ce = T(0), dice = T(0);          // weighted sums of the two terms
    std::vector<Tensor<T>> grads;      // d loss / d logits, per level
};

// logits: per level (K, h, w), ordered however the caller likes; weights must
// line up with the levels.
template <class T>
LossResult<T> dice_ce_loss(const std::vector<Tensor<T>>& logits, const LabelMask& gt,
                           const std::vector<T>& level_weights, T dice_weight = T(1),
                           T ce_weight = T(1)) {
    if (logits.size() != level_weights.size())
        throw ConfigError("deep-supervision weights do not match the number of levels");
    LossResult<T> res;
    res.grads.resize(logits.size());
    for (std::size_t lvl = 0; lvl < logits.size(); ++lvl) {
        const Tensor<T>& z = logits[lvl];
        const std::size_t K = z.dim(0), h = z.dim(1), w = z.dim(2), n = h * w;
        const auto labels = downsample_labels(gt, h, w);
        const T wl = level_weights[lvl];

        // softmax probabilities, CE accumulation
        Tensor<T> prob(z.shape());
        T ce = T(0);
        for (std::size_t i = 0; i < n; ++i) {
            T mx = z[i];
            for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[k * n + i]);
            T denom = T(0);
            for (std::size_t k = 0; k < K; ++k) {
                const T e = exp_guarded(z[k * n + i] - mx);
                prob[k * n + i] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (std::size_t k = 0; k < K; ++k) prob[k * n + i] *= inv;
            ce -= std::log(std::max(prob[labels[i] * n + i], T(1e-12)));
        }
        ce /= static_cast<T>(n);

        // soft Dice per class on the probabilities
        std::vector<T> inter(K, T(0)), uni(K, T(0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                const T p = prob[k * n + i];
                const T g = labels[i] == k ? T(1) : T(0);
                inter[k] += p * g;
                uni[k] += p + g;
            }
        }
        T dice_term = T(0);
        for (std::size_t k = 0; k < K; ++k)
            dice_term += T(1) - (T(2) * inter[k] + T(kDiceEps)) / (uni[k] + T(kDiceEps));
        dice_term /= static_cast<T>(K);

        res.ce += wl * ce_weight * ce;
        res.dice += wl * dice_weight * dice_term;
        res.value += wl * (ce_weight * ce + dice_weight * dice_term);

        // gradient wrt probabilities, then back through the softmax
        Tensor<T>& gz = res.grads[lvl];
        gz = Tensor<T>(z.shape());
        const T ce_scale = wl * ce_weight / static_cast<T>(n);
        const T dice_scale = wl * dice_weight / static_cast<T>(K);
        for (std::size_t i = 0; i < n; ++i) {
            T dot = T(0);
            for (std::size_t k = 0; k < K; ++k) {
                const T p = prob[k * n + i];
                const T g = labels[i] == k ? T(1) : T(0);
                const T u_eps = uni[k] + T(kDiceEps);
                const T dp_dice = -(T(2) * g * u_eps - (T(2) * inter[k] + T(kDiceEps))) / (u_eps * u_eps);
                const T dp = dice_scale * dp_dice;
                // CE handled directly in logit space below; store dice dp for now
                gz[k * n + i] = dp;
                dot += dp * p;
            }
            for (std::size_t k = 0; k < K; ++k) {
                const T p = prob[k * n + i];
                const T g = labels[i] == k ? T(1) : T(0);
                gz[k * n + i] = p * (gz[k * n + i] - dot) + ce_scale * (p - g);
            }
        }
    }
    return res;
}

}  // namespace segscan
