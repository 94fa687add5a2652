#pragma once

#include <cmath>
#include <string>

#include "segscan/conv.hpp"
#include "segscan/errors.hpp"
#include "segscan/params.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Boundary semantic guidance map: per-pixel sigmoid of a weighted sum of the
// Sobel magnitude of the encoder/decoder cosine-alignment map and a learned
// foreground probability. Encoder/decoder feature misalignment is lowest at
// homogeneous interiors and highest at boundaries, which is what the Sobel
// term picks up.

inline constexpr double kCosineEps = 1e-8;

template <class T>
struct GuidanceParams {
    Param<T> edge_gain;  // scalar weight on the Sobel term
    Param<T> fg_gain;    // scalar weight on the foreground term
    Param<T> fg_w;       // (1, 2C) pointwise head over concat[F_e; F_d]
    Param<T> fg_b;       // (1)

    void init(std::size_t channels, Rng& rng) {
        edge_gain.init_scalar(T(1));
        fg_gain.init_scalar(T(1));
        fg_w.init_randn({1, 2 * channels}, rng, T(1) / std::sqrt(static_cast<T>(2 * channels)));
        fg_b.init({1});
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".edge_gain", edge_gain);
        f(prefix + ".fg_gain", fg_gain);
        f(prefix + ".fg_w", fg_w);
        f(prefix + ".fg_b", fg_b);
    }
};

template <class T>
struct GuidanceCtx {
    Tensor<T> norm_e, norm_d;  // per-pixel channel-vector norms
    Tensor<T> cosine;          // H x W alignment map
    Tensor<T> gx, gy, smag;    // Sobel intermediates and magnitude
    Tensor<T> cat;             // (2C, H, W) head input
    Tensor<T> fg;              // P_fg in (0,1)
    Tensor<T> m;               // final map in (0,1)
};

// Per-pixel cosine of the channel vectors, in [-1, 1]. Epsilon is added to
// each norm so zero vectors read as zero similarity.
template <class T>
Tensor<T> cosine_map(const Tensor<T>& fe, const Tensor<T>& fd, Tensor<T>* norm_e = nullptr,
                     Tensor<T>* norm_d = nullptr) {
    if (!fe.same_shape(fd)) throw DimensionError("cosine_map inputs must match");
    const std::size_t C = fe.dim(0), HW = fe.dim(1) * fe.dim(2);
    Tensor<T> cosv({fe.dim(1), fe.dim(2)});
    Tensor<T> ne({fe.dim(1), fe.dim(2)});
    Tensor<T> nd({fe.dim(1), fe.dim(2)});
    for (std::size_t p = 0; p < HW; ++p) {
        T dot = T(0), se = T(0), sd = T(0);
        for (std::size_t c = 0; c < C; ++c) {
            const T e = fe[c * HW + p];
            const T d = fd[c * HW + p];
            dot += e * d;
            se += e * e;
            sd += d * d;
        }
        ne[p] = std::sqrt(se);
        nd[p] = std::sqrt(sd);
        cosv[p] = dot / ((ne[p] + T(kCosineEps)) * (nd[p] + T(kCosineEps)));
    }
    if (norm_e) *norm_e = std::move(ne);
    if (norm_d) *norm_d = std::move(nd);
    return cosv;
}

template <class T>
void cosine_map_backward(const Tensor<T>& fe, const Tensor<T>& fd, const Tensor<T>& cosv,
                         const Tensor<T>& ne, const Tensor<T>& nd, const Tensor<T>& gcos,
                         Tensor<T>& gfe, Tensor<T>& gfd) {
    const std::size_t C = fe.dim(0), HW = fe.dim(1) * fe.dim(2);
    constexpr T tiny = sizeof(T) == 4 ? T(1e-12) : T(1e-30);
    for (std::size_t p = 0; p < HW; ++p) {
        const T g = gcos[p];
        if (g == T(0)) continue;
        const T pe = ne[p] + T(kCosineEps);
        const T pd = nd[p] + T(kCosineEps);
        const T inv = T(1) / (pe * pd);
        const T gnum = g * inv;
        // d cos / d ||e|| = -cos / pe (and likewise for d)
        const T ge_norm = -g * cosv[p] / pe;
        const T gd_norm = -g * cosv[p] / pd;
        const T inv_ne = T(1) / std::max(ne[p], tiny);
        const T inv_nd = T(1) / std::max(nd[p], tiny);
        for (std::size_t c = 0; c < C; ++c) {
            const T e = fe[c * HW + p];
            const T d = fd[c * HW + p];
            gfe[c * HW + p] += gnum * d + ge_norm * e * inv_ne;
            gfd[c * HW + p] += gnum * e + gd_norm * d * inv_nd;
        }
    }
}

namespace detail {

inline std::size_t clamp_index(std::ptrdiff_t v, std::size_t n) {
    if (v < 0) return 0;
    if (v >= static_cast<std::ptrdiff_t>(n)) return n - 1;
    return static_cast<std::size_t>(v);
}

// Standard 3x3 Sobel taps applied as correlation. Borders clamp to the edge
// pixel, so constant maps are flat (zero gradient) everywhere and border
// magnitudes are attenuated rather than fabricated.
template <class T>
void sobel_pair(const Tensor<T>& s, Tensor<T>& gx, Tensor<T>& gy) {
    const std::size_t H = s.dim(0), W = s.dim(1);
    static const int KX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    gx = Tensor<T>({H, W});
    gy = Tensor<T>({H, W});
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            T ax = T(0), ay = T(0);
            for (int dy = -1; dy <= 1; ++dy) {
                const std::size_t y = clamp_index(static_cast<std::ptrdiff_t>(i) + dy, H);
                for (int dx = -1; dx <= 1; ++dx) {
                    const std::size_t x = clamp_index(static_cast<std::ptrdiff_t>(j) + dx, W);
                    const T v = s[y * W + x];
                    ax += static_cast<T>(KX[dy + 1][dx + 1]) * v;
                    ay += static_cast<T>(KX[dx + 1][dy + 1]) * v;
                }
            }
            gx[i * W + j] = ax;
            gy[i * W + j] = ay;
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> sobel_mag(const Tensor<T>& s, Tensor<T>* gx_out = nullptr, Tensor<T>* gy_out = nullptr) {
    if (s.rank() != 2 || s.dim(0) < 3 || s.dim(1) < 3)
        throw DimensionError("sobel_mag requires an H x W map with H, W >= 3");
    Tensor<T> gx, gy;
    detail::sobel_pair(s, gx, gy);
    Tensor<T> mag(s.shape());
    for (std::size_t i = 0; i < mag.numel(); ++i)
        mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    if (gx_out) *gx_out = std::move(gx);
    if (gy_out) *gy_out = std::move(gy);
    return mag;
}

template <class T>
void sobel_mag_backward(const Tensor<T>& gx, const Tensor<T>& gy, const Tensor<T>& mag,
                        const Tensor<T>& gmag, Tensor<T>& gs) {
    const std::size_t H = mag.dim(0), W = mag.dim(1);
    constexpr T tiny = sizeof(T) == 4 ? T(1e-12) : T(1e-30);
    static const int KX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    // d mag / d gx = gx / mag (zero at mag == 0), then scatter through the
    // taps; clamped reads scatter back onto the clamped edge pixel
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            const T g = gmag[i * W + j];
            if (g == T(0)) continue;
            const T inv = T(1) / std::max(mag[i * W + j], tiny);
            const T dgx = g * gx[i * W + j] * inv;
            const T dgy = g * gy[i * W + j] * inv;
            for (int dy = -1; dy <= 1; ++dy) {
                const std::size_t y = detail::clamp_index(static_cast<std::ptrdiff_t>(i) + dy, H);
                for (int dx = -1; dx <= 1; ++dx) {
                    const std::size_t x = detail::clamp_index(static_cast<std::ptrdiff_t>(j) + dx, W);
                    gs[y * W + x] +=
                        dgx * static_cast<T>(KX[dy + 1][dx + 1]) + dgy * static_cast<T>(KX[dx + 1][dy + 1]);
                }
            }
        }
    }
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw DimensionError("channel concat spatial mismatch");
    Tensor<T> cat({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    const std::size_t na = a.numel();
    for (std::size_t i = 0; i < na; ++i) cat[i] = a[i];
    for (std::size_t i = 0; i < b.numel(); ++i) cat[na + i] = b[i];
    return cat;
}

template <class T>
Tensor<T> foreground_prob(const Tensor<T>& fe, const Tensor<T>& fd, const GuidanceParams<T>& p,
                          Tensor<T>* cat_out = nullptr) {
    if (!fe.same_shape(fd)) throw DimensionError("foreground_prob inputs must match");
    Tensor<T> cat = concat_channels(fe, fd);
    Tensor<T> pre = conv2d_pointwise(cat, p.fg_w.v, &p.fg_b.v);
    Tensor<T> fg({fe.dim(1), fe.dim(2)});
    for (std::size_t i = 0; i < fg.numel(); ++i) fg[i] = sigmoid_scalar(pre[i]);
    if (cat_out) *cat_out = std::move(cat);
    return fg;
}

// M = sigma(edge_gain * Sobel(cosine(F_e, F_d)) + fg_gain * P_fg)
template <class T>
Tensor<T> build_guidance_map(const Tensor<T>& fe, const Tensor<T>& fd, const GuidanceParams<T>& p,
                             GuidanceCtx<T>& ctx) {
    ctx.cosine = cosine_map(fe, fd, &ctx.norm_e, &ctx.norm_d);
    ctx.smag = sobel_mag(ctx.cosine, &ctx.gx, &ctx.gy);
    ctx.fg = foreground_prob(fe, fd, p, &ctx.cat);
    ctx.m = Tensor<T>(ctx.smag.shape());
    const T wb = p.edge_gain.v[0], wf = p.fg_gain.v[0];
    for (std::size_t i = 0; i < ctx.m.numel(); ++i)
        ctx.m[i] = sigmoid_scalar(wb * ctx.smag[i] + wf * ctx.fg[i]);
    return ctx.m;
}

template <class T>
void guidance_backward(const Tensor<T>& fe, const Tensor<T>& fd, GuidanceParams<T>& p,
                       const GuidanceCtx<T>& ctx, const Tensor<T>& gm, Tensor<T>& gfe,
                       Tensor<T>& gfd) {
    const std::size_t HW = ctx.m.numel();
    const T wb = p.edge_gain.v[0], wf = p.fg_gain.v[0];
    Tensor<T> gsmag(ctx.smag.shape());
    Tensor<T> gfg(ctx.fg.shape());
    T gwb = T(0), gwf = T(0);
    for (std::size_t i = 0; i < HW; ++i) {
        const T m = ctx.m[i];
        const T gpre = gm[i] * m * (T(1) - m);
        gwb += gpre * ctx.smag[i];
        gwf += gpre * ctx.fg[i];
        gsmag[i] = gpre * wb;
        gfg[i] = gpre * wf;
    }
    p.edge_gain.g[0] += gwb;
    p.fg_gain.g[0] += gwf;

    // foreground head path
    Tensor<T> gpre_fg({1, ctx.m.dim(0), ctx.m.dim(1)});
    for (std::size_t i = 0; i < HW; ++i)
        gpre_fg[i] = gfg[i] * ctx.fg[i] * (T(1) - ctx.fg[i]);
    Tensor<T> gcat(ctx.cat.shape());
    conv2d_pointwise_backward(ctx.cat, p.fg_w.v, gpre_fg, gcat, p.fg_w.g, &p.fg_b.g);
    const std::size_t nfe = fe.numel();
    for (std::size_t i = 0; i < nfe; ++i) gfe[i] += gcat[i];
    for (std::size_t i = 0; i < fd.numel(); ++i) gfd[i] += gcat[nfe + i];

    // Sobel-of-cosine path
    Tensor<T> gcos(ctx.cosine.shape());
    sobel_mag_backward(ctx.gx, ctx.gy, ctx.smag, gsmag, gcos);
    cosine_map_backward(fe, fd, ctx.cosine, ctx.norm_e, ctx.norm_d, gcos, gfe, gfd);
}

}  // namespace segscan
