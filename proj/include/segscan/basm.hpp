#pragma once

#include <array>
#include <cmath>
#include <string>

#include "segscan/conv.hpp"
#include "segscan/guidance.hpp"
#include "segscan/posterior.hpp"
#include "segscan/scan.hpp"

namespace segscan {

// Boundary-aware state-space block. Two streams over the fused skip input
// x = F_e + F_d: a cross-directional modulated selective scan and a
// multi-scale depthwise-conv branch gated by (1 + M), merged by per-pixel
// softmax weights from two prediction heads, plus the residual x.

// ---------------------------------------------------------------------------
// SASF: multi-scale local branch
// ---------------------------------------------------------------------------

template <class T>
struct SasfParams {
    Param<T> dw3, dw5, dw7;  // depthwise taps (C,k,k), k in {3,5,7}
    Param<T> proj;           // (C, 3C) pointwise reduction, bias-free

    void init(std::size_t channels, Rng& rng) {
        dw3.init_randn({channels, 3, 3}, rng, std::sqrt(T(2) / T(9)));
        dw5.init_randn({channels, 5, 5}, rng, std::sqrt(T(2) / T(25)));
        dw7.init_randn({channels, 7, 7}, rng, std::sqrt(T(2) / T(49)));
        proj.init_randn({channels, 3 * channels}, rng, std::sqrt(T(2) / static_cast<T>(3 * channels)));
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".dw3", dw3);
        f(prefix + ".dw5", dw5);
        f(prefix + ".dw7", dw7);
        f(prefix + ".proj", proj);
    }
};

template <class T>
struct SasfCtx {
    Tensor<T> c3, c5, c7;  // depthwise responses
    Tensor<T> cat;         // (3C, H, W)
    Tensor<T> pre;         // projected response before the (1+M) gain
};

template <class T>
Tensor<T> sasf_branch(const Tensor<T>& x, const Tensor<T>& m, const SasfParams<T>& p,
                      SasfCtx<T>& ctx) {
    if (x.dim(1) != m.dim(0) || x.dim(2) != m.dim(1))
        throw DimensionError("sasf_branch guidance map shape mismatch");
    ctx.c3 = conv2d_depthwise(x, p.dw3.v);
    ctx.c5 = conv2d_depthwise(x, p.dw5.v);
    ctx.c7 = conv2d_depthwise(x, p.dw7.v);
    ctx.cat = concat_channels(ctx.c3, concat_channels(ctx.c5, ctx.c7));
    ctx.pre = conv2d_pointwise(ctx.cat, p.proj.v);
    const std::size_t C = x.dim(0), HW = m.numel();
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i)
            out[c * HW + i] = ctx.pre[c * HW + i] * (T(1) + m[i]);
    return out;
}

template <class T>
void sasf_backward(const Tensor<T>& x, const Tensor<T>& m, SasfParams<T>& p,
                   const SasfCtx<T>& ctx, const Tensor<T>& gout, Tensor<T>& gx, Tensor<T>& gm) {
    const std::size_t C = x.dim(0), HW = m.numel();
    Tensor<T> gpre(ctx.pre.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
            gpre[c * HW + i] = gout[c * HW + i] * (T(1) + m[i]);
            gm[i] += gout[c * HW + i] * ctx.pre[c * HW + i];
        }
    Tensor<T> gcat(ctx.cat.shape());
    conv2d_pointwise_backward(ctx.cat, p.proj.v, gpre, gcat, p.proj.g);
    const std::size_t n = x.numel();
    Tensor<T> g3({C, x.dim(1), x.dim(2)});
    Tensor<T> g5(g3.shape()), g7(g3.shape());
    for (std::size_t i = 0; i < n; ++i) {
        g3[i] = gcat[i];
        g5[i] = gcat[n + i];
        g7[i] = gcat[2 * n + i];
    }
    conv2d_depthwise_backward(x, p.dw3.v, g3, gx, p.dw3.g);
    conv2d_depthwise_backward(x, p.dw5.v, g5, gx, p.dw5.g);
    conv2d_depthwise_backward(x, p.dw7.v, g7, gx, p.dw7.g);
}

// ---------------------------------------------------------------------------
// cross-directional scan branch
// ---------------------------------------------------------------------------

// row-major forward/backward and column-major forward/backward
inline std::size_t scan_pixel_index(std::size_t dir, std::size_t t, std::size_t H, std::size_t W) {
    switch (dir) {
        case 0: return t;
        case 1: return H * W - 1 - t;
        case 2: {
            const std::size_t x = t / H, y = t % H;
            return y * W + x;
        }
        default: {
            const std::size_t tt = H * W - 1 - t;
            const std::size_t x = tt / H, y = tt % H;
            return y * W + x;
        }
    }
}

// The discretised per-position parameters (projections, softplus, the ZOH
// exponentials and the retain/enhance modulation) depend only on the pixel,
// not on the scan direction, so they are prepared once and shared by all
// four directional recurrences.
template <class T>
struct MambaCtx {
    std::size_t H = 0, W = 0, C = 0, N = 0;
    bool modulated = false;
    bool clamp_flag = false;
    Tensor<T> zpre;                     // (C, P) timestep preactivations
    Tensor<T> delta0, delta;            // (C, P)
    std::vector<std::uint8_t> floored;  // C*P
    Tensor<T> rmod, egain;              // (P): 1 - r and 1 + e when modulated
    Tensor<T> b0, bmod, readout;        // (N, P)
    Tensor<T> abar;                     // (P, C, N)
    std::array<Tensor<T>, 4> tokens;    // (L, C) per direction
    std::array<Tensor<T>, 4> h;         // (L, C, N) per direction
};

// Mean over four directional modulated scans, outputs re-scattered to H x W.
// When re is null the scans run with base parameters (modulation ablated).
template <class T>
Tensor<T> mamba_branch(const Tensor<T>& x, const RetainEnhance<T>* re, const SsmParams<T>& p,
                       MambaCtx<T>& ctx) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), P = H * W, N = p.state_size;
    const std::size_t L = P;
    ctx.H = H;
    ctx.W = W;
    ctx.C = C;
    ctx.N = N;
    ctx.modulated = re != nullptr;
    ctx.clamp_flag = false;

    ctx.zpre = conv2d_pointwise(x, p.delta_w.v).reshaped({C, P});
    for (std::size_t c = 0; c < C; ++c) {
        T* z = ctx.zpre.data() + c * P;
        const T bias = p.delta_b.v[c];
        for (std::size_t q = 0; q < P; ++q) z[q] += bias;
    }
    if (re) {
        ctx.rmod = Tensor<T>({P});
        ctx.egain = Tensor<T>({P});
        for (std::size_t q = 0; q < P; ++q) {
            if (re->r[q] >= T(1)) ctx.clamp_flag = true;
            ctx.rmod[q] = T(1) - re->r[q];
            ctx.egain[q] = T(1) + re->e[q];
        }
    }
    ctx.delta0 = Tensor<T>({C, P});
    ctx.delta = Tensor<T>({C, P});
    ctx.floored.assign(C * P, 0);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t q = 0; q < P; ++q) {
            const T d0 = softplus_scalar(ctx.zpre[c * P + q]);
            ctx.delta0[c * P + q] = d0;
            T d = d0;
            if (re) {
                d = d0 * ctx.rmod[q];
                if (d < static_cast<T>(kDeltaFloor)) {
                    d = static_cast<T>(kDeltaFloor);
                    ctx.floored[c * P + q] = 1;
                }
            }
            ctx.delta[c * P + q] = d;
        }
    }
    ctx.b0 = conv2d_pointwise(x, p.b_proj.v).reshaped({N, P});
    ctx.bmod = ctx.b0;
    if (re)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t q = 0; q < P; ++q) ctx.bmod[n * P + q] = ctx.b0[n * P + q] * ctx.egain[q];
    ctx.readout = conv2d_pointwise(x, p.c_proj.v).reshaped({N, P});

    ctx.abar = Tensor<T>({P, C, N});
    for (std::size_t q = 0; q < P; ++q) {
        T* ab = ctx.abar.data() + q * C * N;
        for (std::size_t c = 0; c < C; ++c) {
            const T d = ctx.delta[c * P + q];
            const T* arow = p.a.v.data() + c * N;
            for (std::size_t n = 0; n < N; ++n) ab[c * N + n] = exp_guarded(d * arow[n]);
        }
    }

    Tensor<T> acc(x.shape());
    std::vector<T> hrun(C * N);
    for (std::size_t d = 0; d < 4; ++d) {
        auto& toks = ctx.tokens[d];
        toks = Tensor<T>({L, C});
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t q = scan_pixel_index(d, t, H, W);
            for (std::size_t c = 0; c < C; ++c) toks[t * C + c] = x[c * P + q];
        }
        ctx.h[d] = Tensor<T>({L, C, N});
        std::fill(hrun.begin(), hrun.end(), T(0));
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t q = scan_pixel_index(d, t, H, W);
            const T* ab = ctx.abar.data() + q * C * N;
            T* ht = ctx.h[d].data() + t * C * N;
            for (std::size_t c = 0; c < C; ++c) {
                const T dx = ctx.delta[c * P + q] * toks[t * C + c];
                for (std::size_t n = 0; n < N; ++n) {
                    const std::size_t i = c * N + n;
                    hrun[i] = ab[i] * hrun[i] + dx * ctx.bmod[n * P + q];
                    ht[i] = hrun[i];
                }
            }
            for (std::size_t c = 0; c < C; ++c) {
                T y = p.skip.v[c] * toks[t * C + c];
                const T* hc = ht + c * N;
                for (std::size_t n = 0; n < N; ++n) y += ctx.readout[n * P + q] * hc[n];
                acc[c * P + q] += T(0.25) * y;
            }
        }
    }
    return acc;
}

// Accumulates into gx and, when the forward was modulated, gr/ge (H x W maps).
template <class T>
void mamba_backward(const Tensor<T>& x, SsmParams<T>& p, MambaCtx<T>& ctx, const Tensor<T>& gout,
                    Tensor<T>& gx, Tensor<T>* gr, Tensor<T>* ge) {
    const std::size_t C = ctx.C, H = ctx.H, W = ctx.W, P = H * W, N = ctx.N, L = P;
    Tensor<T> gdelta({C, P});
    Tensor<T> gbmod({N, P});
    Tensor<T> gread({N, P});
    std::vector<T> lam(C * N);

    for (std::size_t d = 0; d < 4; ++d) {
        const auto& toks = ctx.tokens[d];
        const auto& hd = ctx.h[d];
        std::fill(lam.begin(), lam.end(), T(0));
        for (std::size_t tt = L; tt-- > 0;) {
            const std::size_t q = scan_pixel_index(d, tt, H, W);
            const T* ab = ctx.abar.data() + q * C * N;
            const T* ht = hd.data() + tt * C * N;
            const T* hprev = tt > 0 ? hd.data() + (tt - 1) * C * N : nullptr;
            for (std::size_t c = 0; c < C; ++c) {
                const T g = T(0.25) * gout[c * P + q];
                const T xc = toks[tt * C + c];
                p.skip.g[c] += g * xc;
                T gxc = p.skip.v[c] * g;
                const T dq = ctx.delta[c * P + q];
                T* lamc = lam.data() + c * N;
                const T* hc = ht + c * N;
                T gd = T(0);
                T* garow = p.a.g.data() + c * N;
                const T* arow = p.a.v.data() + c * N;
                for (std::size_t n = 0; n < N; ++n) {
                    gread[n * P + q] += g * hc[n];
                    T l = lamc[n] + ctx.readout[n * P + q] * g;
                    const T hp = hprev ? hprev[c * N + n] : T(0);
                    const T gabar = l * hp;
                    const T abv = ab[c * N + n];
                    gd += gabar * abv * arow[n] + l * ctx.bmod[n * P + q] * xc;
                    garow[n] += gabar * abv * dq;
                    gbmod[n * P + q] += l * dq * xc;
                    gxc += l * dq * ctx.bmod[n * P + q];
                    lamc[n] = abv * l;
                }
                gdelta[c * P + q] += gd;
                gx[c * P + q] += gxc;
            }
        }
    }

    // shared modulation and projection chains
    Tensor<T> gz({C, x.dim(1), x.dim(2)});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t q = 0; q < P; ++q) {
            T gd0 = T(0);
            if (!ctx.floored[c * P + q]) {
                gd0 = ctx.modulated ? gdelta[c * P + q] * ctx.rmod[q] : gdelta[c * P + q];
                if (gr && ctx.modulated)
                    (*gr)[q] -= gdelta[c * P + q] * ctx.delta0[c * P + q];
            }
            gz[c * P + q] = gd0 * sigmoid_scalar(ctx.zpre[c * P + q]);
        }
    }
    Tensor<T> gb0 = gbmod;
    if (ctx.modulated) {
        for (std::size_t q = 0; q < P; ++q) {
            T e_acc = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                e_acc += gbmod[n * P + q] * ctx.b0[n * P + q];
                gb0[n * P + q] = gbmod[n * P + q] * ctx.egain[q];
            }
            if (ge) (*ge)[q] += e_acc;
        }
    }

    conv2d_pointwise_backward(x, p.delta_w.v, gz, gx, p.delta_w.g, &p.delta_b.g);
    const Tensor<T> gb0_map = gb0.reshaped({N, x.dim(1), x.dim(2)});
    conv2d_pointwise_backward(x, p.b_proj.v, gb0_map, gx, p.b_proj.g);
    const Tensor<T> gread_map = gread.reshaped({N, x.dim(1), x.dim(2)});
    conv2d_pointwise_backward(x, p.c_proj.v, gread_map, gx, p.c_proj.g);
}

// ---------------------------------------------------------------------------
// SE-style dual-stream fusion
// ---------------------------------------------------------------------------

template <class T>
struct FusionParams {
    Param<T> head_ssm_w;   // (1, 2C+1)
    Param<T> head_ssm_b;   // (1)
    Param<T> head_safs_w;  // (1, 2C+1)
    Param<T> head_safs_b;  // (1)
    Param<T> temp_raw;     // temperature = softplus(raw) > 0

    void init(std::size_t channels, Rng& rng) {
        const T s = T(1) / std::sqrt(static_cast<T>(2 * channels + 1));
        head_ssm_w.init_randn({1, 2 * channels + 1}, rng, s);
        head_ssm_b.init({1});
        head_safs_w.init_randn({1, 2 * channels + 1}, rng, s);
        head_safs_b.init({1});
        temp_raw.init_scalar(softplus_inverse(T(1)));
    }

    T temperature() const { return softplus_scalar(temp_raw.v[0]); }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".head_ssm_w", head_ssm_w);
        f(prefix + ".head_ssm_b", head_ssm_b);
        f(prefix + ".head_safs_w", head_safs_w);
        f(prefix + ".head_safs_b", head_safs_b);
        f(prefix + ".temp_raw", temp_raw);
    }
};

template <class T>
struct FusionCtx {
    Tensor<T> cat;      // (2C+1, H, W)
    Tensor<T> z_ssm;    // (1, H, W)
    Tensor<T> z_safs;   // (1, H, W)
    Tensor<T> w_ssm;    // (H, W); w_safs = 1 - w_ssm
    bool se_enabled = true;
};

template <class T>
Tensor<T> se_fusion(const Tensor<T>& f_ssm, const Tensor<T>& f_safs, const Tensor<T>& m,
                    const Tensor<T>& x_residual, const FusionParams<T>& p, bool se_enabled,
                    FusionCtx<T>& ctx) {
    if (!f_ssm.same_shape(f_safs) || !f_ssm.same_shape(x_residual))
        throw DimensionError("se_fusion stream shapes differ");
    const std::size_t C = f_ssm.dim(0), HW = m.numel();
    ctx.se_enabled = se_enabled;
    ctx.w_ssm = Tensor<T>({f_ssm.dim(1), f_ssm.dim(2)});
    if (se_enabled) {
        ctx.cat = concat_channels(f_ssm, concat_channels(f_safs, m.reshaped({1, f_ssm.dim(1), f_ssm.dim(2)})));
        ctx.z_ssm = conv2d_pointwise(ctx.cat, p.head_ssm_w.v, &p.head_ssm_b.v);
        ctx.z_safs = conv2d_pointwise(ctx.cat, p.head_safs_w.v, &p.head_safs_b.v);
        const T inv_t = T(1) / p.temperature();
        for (std::size_t i = 0; i < HW; ++i)
            ctx.w_ssm[i] = sigmoid_scalar((ctx.z_ssm[i] - ctx.z_safs[i]) * inv_t);
    } else {
        ctx.w_ssm.fill(T(0.5));  // ablation: fixed equal weights
    }
    Tensor<T> out(f_ssm.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i)
            out[c * HW + i] = ctx.w_ssm[i] * f_ssm[c * HW + i] +
                              (T(1) - ctx.w_ssm[i]) * f_safs[c * HW + i] + x_residual[c * HW + i];
    return out;
}

template <class T>
void se_fusion_backward(const Tensor<T>& f_ssm, const Tensor<T>& f_safs, FusionParams<T>& p,
                        const FusionCtx<T>& ctx, const Tensor<T>& gout, Tensor<T>& gf_ssm,
                        Tensor<T>& gf_safs, Tensor<T>& gm, Tensor<T>& gx_residual) {
    const std::size_t C = f_ssm.dim(0), HW = ctx.w_ssm.numel();
    Tensor<T> gw({f_ssm.dim(1), f_ssm.dim(2)});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
            const T g = gout[c * HW + i];
            gf_ssm[c * HW + i] += ctx.w_ssm[i] * g;
            gf_safs[c * HW + i] += (T(1) - ctx.w_ssm[i]) * g;
            gx_residual[c * HW + i] += g;
            gw[i] += g * (f_ssm[c * HW + i] - f_safs[c * HW + i]);
        }
    if (!ctx.se_enabled) return;  // fixed weights: no head/temperature paths

    const T temp = p.temperature();
    const T inv_t = T(1) / temp;
    Tensor<T> gz_ssm({1, f_ssm.dim(1), f_ssm.dim(2)});
    Tensor<T> gz_safs(gz_ssm.shape());
    T gtemp = T(0);
    for (std::size_t i = 0; i < HW; ++i) {
        const T w = ctx.w_ssm[i];
        const T s = (ctx.z_ssm[i] - ctx.z_safs[i]) * inv_t;
        const T gs = gw[i] * w * (T(1) - w);
        gz_ssm[i] = gs * inv_t;
        gz_safs[i] = -gs * inv_t;
        gtemp -= gs * s * inv_t;
    }
    p.temp_raw.g[0] += gtemp * sigmoid_scalar(p.temp_raw.v[0]);

    Tensor<T> gcat(ctx.cat.shape());
    conv2d_pointwise_backward(ctx.cat, p.head_ssm_w.v, gz_ssm, gcat, p.head_ssm_w.g, &p.head_ssm_b.g);
    conv2d_pointwise_backward(ctx.cat, p.head_safs_w.v, gz_safs, gcat, p.head_safs_w.g, &p.head_safs_b.g);
    const std::size_t n = f_ssm.numel();
    for (std::size_t i = 0; i < n; ++i) {
        gf_ssm[i] += gcat[i];
        gf_safs[i] += gcat[n + i];
    }
    for (std::size_t i = 0; i < HW; ++i) gm[i] += gcat[2 * n + i];
}

// ---------------------------------------------------------------------------
// full block
// ---------------------------------------------------------------------------

template <class T>
struct BasmParams {
    std::size_t channels = 0;
    GuidanceParams<T> guidance;
    PosteriorParams<T> posterior;
    SsmParams<T> ssm;
    SasfParams<T> sasf;
    FusionParams<T> fusion;
    bool modulation_enabled = true;  // force R = E = 0 when off
    bool se_fusion_enabled = true;   // fixed 0.5/0.5 weights when off

    void init(std::size_t c, std::size_t state_size, Rng& rng, T mu_r = T(0.8), T mu_e = T(1.2)) {
        channels = c;
        guidance.init(c, rng);
        posterior.init(rng, mu_r, mu_e);
        ssm.init(c, state_size, rng);
        sasf.init(c, rng);
        fusion.init(c, rng);
    }

    void project() {
        ssm.project();
        posterior.retain_scale.v[0] = std::max(posterior.retain_scale.v[0], T(0));
        posterior.enhance_scale.v[0] = std::max(posterior.enhance_scale.v[0], T(0));
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        guidance.visit(prefix + ".guidance", f);
        posterior.visit(prefix + ".posterior", f);
        ssm.visit(prefix + ".ssm", f);
        sasf.visit(prefix + ".sasf", f);
        fusion.visit(prefix + ".fusion", f);
    }
};

template <class T>
struct BasmCtx {
    Tensor<T> x;  // fused block input F_e + F_d
    GuidanceCtx<T> guid;
    PosteriorCtx<T> post;
    MambaCtx<T> mamba;
    SasfCtx<T> sasf;
    FusionCtx<T> fusion;
    Tensor<T> f_ssm, f_safs;
};

template <class T>
Tensor<T> basm_forward(const Tensor<T>& fe, const Tensor<T>& fd, BasmParams<T>& p, BasmCtx<T>& ctx) {
    if (!fe.same_shape(fd)) throw DimensionError("basm_forward inputs must match");
    ctx.x = add(fe, fd);
    build_guidance_map(fe, fd, p.guidance, ctx.guid);
    boundary_posterior(ctx.guid.m, p.posterior, ctx.post);
    ctx.f_ssm = mamba_branch(ctx.x, p.modulation_enabled ? &ctx.post.re : nullptr, p.ssm, ctx.mamba);
    ctx.f_safs = sasf_branch(ctx.x, ctx.guid.m, p.sasf, ctx.sasf);
    return se_fusion(ctx.f_ssm, ctx.f_safs, ctx.guid.m, ctx.x, p.fusion, p.se_fusion_enabled,
                     ctx.fusion);
}

template <class T>
void basm_backward(const Tensor<T>& fe, const Tensor<T>& fd, BasmParams<T>& p, BasmCtx<T>& ctx,
                   const Tensor<T>& gout, Tensor<T>& gfe, Tensor<T>& gfd) {
    Tensor<T> gx(ctx.x.shape());
    Tensor<T> gm(ctx.guid.m.shape());
    Tensor<T> gf_ssm(ctx.f_ssm.shape());
    Tensor<T> gf_safs(ctx.f_safs.shape());

    se_fusion_backward(ctx.f_ssm, ctx.f_safs, p.fusion, ctx.fusion, gout, gf_ssm, gf_safs, gm, gx);
    sasf_backward(ctx.x, ctx.guid.m, p.sasf, ctx.sasf, gf_safs, gx, gm);

    if (p.modulation_enabled) {
        Tensor<T> gr({ctx.mamba.H, ctx.mamba.W});
        Tensor<T> ge({ctx.mamba.H, ctx.mamba.W});
        mamba_backward(ctx.x, p.ssm, ctx.mamba, gf_ssm, gx, &gr, &ge);
        Tensor<T> none;
        posterior_backward(ctx.guid.m, p.posterior, ctx.post, gr, ge, none, gm);
    } else {
        mamba_backward(ctx.x, p.ssm, ctx.mamba, gf_ssm, gx, static_cast<Tensor<T>*>(nullptr),
                       static_cast<Tensor<T>*>(nullptr));
    }

    guidance_backward(fe, fd, p.guidance, ctx.guid, gm, gfe, gfd);
    for (std::size_t i = 0; i < gx.numel(); ++i) {
        gfe[i] += gx[i];
        gfd[i] += gx[i];
    }
}

}  // namespace segscan
