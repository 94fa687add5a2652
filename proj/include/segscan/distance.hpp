#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "segscan/errors.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Exact Euclidean distance transform via the two-pass separable
// lower-envelope algorithm on squared distances. Supports anisotropic
// per-axis spacing. An all-false mask yields the documented sentinel
// sqrt((H*sy)^2 + (W*sx)^2) everywhere, with a warning flag.

namespace detail {

// 1-d squared distance transform with grid spacing w. Infinite entries are
// skipped when building the envelope (they can never be the nearest seed).
inline void sq_dist_1d(const std::vector<double>& f, std::vector<double>& d, double w) {
    const std::size_t n = f.size();
    const double INF = std::numeric_limits<double>::infinity();
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    const double w2 = w * w;
    int k = -1;
    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] == INF) continue;
        const double fq = f[q] + w2 * static_cast<double>(q) * static_cast<double>(q);
        while (k >= 0) {
            const std::size_t p = static_cast<std::size_t>(v[static_cast<std::size_t>(k)]);
            const double fp = f[p] + w2 * static_cast<double>(p) * static_cast<double>(p);
            const double s = (fq - fp) / (2.0 * w2 * (static_cast<double>(q) - static_cast<double>(p)));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
            } else {
                ++k;
                v[static_cast<std::size_t>(k)] = static_cast<int>(q);
                z[static_cast<std::size_t>(k)] = s;
                z[static_cast<std::size_t>(k) + 1] = INF;
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = static_cast<int>(q);
            z[0] = -INF;
            z[1] = INF;
        }
    }
    if (k < 0) {
        for (std::size_t q = 0; q < n; ++q) d[q] = INF;
        return;
    }
    std::size_t j = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[j + 1] < static_cast<double>(q)) ++j;
        const double dq = static_cast<double>(q) - static_cast<double>(v[j]);
        d[q] = w2 * dq * dq + f[static_cast<std::size_t>(v[j])];
    }
}

}  // namespace detail

template <class T>
struct DistanceResult {
    Tensor<T> dist;        // H x W Euclidean distances
    bool empty_input = false;  // set when the mask had no true pixel
};

template <class T = float>
DistanceResult<T> distance_transform(const std::vector<std::uint8_t>& mask, std::size_t H,
                                     std::size_t W, double spacing_y = 1.0,
                                     double spacing_x = 1.0) {
    if (mask.size() != H * W) throw DimensionError("distance transform mask size mismatch");
    const double INF = std::numeric_limits<double>::infinity();
    DistanceResult<T> out;
    out.dist = Tensor<T>({H, W});

    bool any = false;
    for (auto m : mask)
        if (m) { any = true; break; }
    if (!any) {
        const double sentinel = std::sqrt(static_cast<double>(H) * spacing_y * static_cast<double>(H) * spacing_y +
                                          static_cast<double>(W) * spacing_x * static_cast<double>(W) * spacing_x);
        out.dist.fill(static_cast<T>(sentinel));
        out.empty_input = true;
        return out;
    }

    std::vector<double> sq(H * W);
    for (std::size_t i = 0; i < H * W; ++i) sq[i] = mask[i] ? 0.0 : INF;

    // columns first, then rows
    std::vector<double> col(H), cd(H);
    for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t y = 0; y < H; ++y) col[y] = sq[y * W + x];
        detail::sq_dist_1d(col, cd, spacing_y);
        for (std::size_t y = 0; y < H; ++y) sq[y * W + x] = cd[y];
    }
    std::vector<double> row(W), rd(W);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) row[x] = sq[y * W + x];
        detail::sq_dist_1d(row, rd, spacing_x);
        for (std::size_t x = 0; x < W; ++x) out.dist[y * W + x] = static_cast<T>(std::sqrt(rd[x]));
    }
    return out;
}

// Convenience overload: threshold a real map into the seed mask (map > tau).
template <class T>
DistanceResult<T> distance_transform(const Tensor<T>& map, T tau) {
    const std::size_t H = map.dim(0), W = map.dim(1);
    std::vector<std::uint8_t> mask(H * W);
    for (std::size_t i = 0; i < H * W; ++i) mask[i] = map[i] > tau ? 1 : 0;
    return distance_transform<T>(mask, H, W);
}

}  // namespace segscan
