#pragma once

#include <cmath>
#include <string>

#include "segscan/distance.hpp"
#include "segscan/errors.hpp"
#include "segscan/params.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Boundary posterior: the product of a geometric prior (exponentially
// compressed distance field of the thresholded guidance map) and a per-pixel
// Q*K attention likelihood, min-max normalised to [0,1], then decoupled into
// complementary retain/enhance weights R = mu_R (1 - P_b), E = mu_E P_b.

template <class T>
struct PosteriorParams {
    Param<T> threshold_raw;  // tau = sigmoid(raw), in (0,1)
    Param<T> decay_raw;      // alpha = softplus(raw), > 0
    Param<T> temp_raw;       // gamma = softplus(raw), > 0
    Param<T> retain_scale;   // mu_R >= 0 (projected after optimiser steps)
    Param<T> enhance_scale;  // mu_E >= 0
    Mlp2<T> q_mlp;
    Mlp2<T> k_mlp;

    void init(Rng& rng, T mu_r = T(0.8), T mu_e = T(1.2)) {
        threshold_raw.init_scalar(T(0));                    // tau = 0.5
        decay_raw.init_scalar(softplus_inverse(T(0.5)));    // alpha = 0.5
        temp_raw.init_scalar(softplus_inverse(T(1)));       // gamma = 1
        retain_scale.init_scalar(mu_r);
        enhance_scale.init_scalar(mu_e);
        q_mlp.init(rng);
        k_mlp.init(rng);
    }

    T tau() const { return sigmoid_scalar(threshold_raw.v[0]); }
    T alpha() const { return softplus_scalar(decay_raw.v[0]); }
    T gamma() const { return softplus_scalar(temp_raw.v[0]); }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".threshold_raw", threshold_raw);
        f(prefix + ".decay_raw", decay_raw);
        f(prefix + ".temp_raw", temp_raw);
        f(prefix + ".retain_scale", retain_scale);
        f(prefix + ".enhance_scale", enhance_scale);
        q_mlp.visit(prefix + ".q_mlp", f);
        k_mlp.visit(prefix + ".k_mlp", f);
    }
};

template <class T>
struct RetainEnhance {
    Tensor<T> pb;  // H x W in [0,1]
    Tensor<T> r;   // mu_R (1 - P_b)
    Tensor<T> e;   // mu_E P_b
};

template <class T>
struct PosteriorCtx {
    Tensor<T> dt;  // distance field; constant under differentiation (hard threshold)
    bool dt_empty = false;
    Tensor<T> dtil;                  // exp(-alpha dt)
    Tensor<T> q, k;                  // per-pixel scalar projections
    Tensor<T> q_hidden, k_hidden;    // MLP hidden activations
    Tensor<T> lmap;                  // q k / gamma
    Tensor<T> v;                     // dtil (x) lmap
    Tensor<T> pb;
    std::size_t imin = 0, imax = 0;  // winners of the min-max normalisation
    T den = T(0);                    // max - min; <= 0 means a constant map
    RetainEnhance<T> re;
};

// d~ = exp(-alpha * DT(M > tau)), in (0,1]; 1 on the binarised set.
template <class T>
Tensor<T> geometric_prior(const Tensor<T>& m, const PosteriorParams<T>& p,
                          Tensor<T>* dt_out = nullptr, bool* empty_out = nullptr) {
    auto dres = distance_transform(m, p.tau());
    const T alpha = p.alpha();
    Tensor<T> dtil(dres.dist.shape());
    for (std::size_t i = 0; i < dtil.numel(); ++i)
        dtil[i] = exp_guarded(-alpha * dres.dist[i]);
    if (dt_out) *dt_out = std::move(dres.dist);
    if (empty_out) *empty_out = dres.empty_input;
    return dtil;
}

// L(i,j) = Q(i,j) K(i,j) / gamma, Q and K from independent per-pixel MLPs
// over the pair (M, d~).
template <class T>
Tensor<T> attention_likelihood(const Tensor<T>& m, const Tensor<T>& dtil, PosteriorParams<T>& p,
                               PosteriorCtx<T>* ctx = nullptr) {
    if (!m.same_shape(dtil)) throw DimensionError("attention_likelihood input shapes differ");
    Tensor<T> qh, kh;
    Tensor<T> q = p.q_mlp.forward(m, dtil, qh);
    Tensor<T> k = p.k_mlp.forward(m, dtil, kh);
    const T inv_gamma = T(1) / p.gamma();
    Tensor<T> lmap(m.shape());
    for (std::size_t i = 0; i < lmap.numel(); ++i) lmap[i] = q[i] * k[i] * inv_gamma;
    if (ctx) {
        ctx->q = std::move(q);
        ctx->k = std::move(k);
        ctx->q_hidden = std::move(qh);
        ctx->k_hidden = std::move(kh);
    }
    return lmap;
}

namespace detail {

// min-max to [0,1]; constant maps (no boundary evidence) map to all zeros
template <class T>
Tensor<T> minmax_norm(const Tensor<T>& v, std::size_t& imin, std::size_t& imax, T& den) {
    imin = argmin(v);
    imax = argmax(v);
    den = v[imax] - v[imin];
    Tensor<T> out(v.shape());
    if (den <= T(0)) return out;
    const T lo = v[imin];
    const T inv = T(1) / den;
    for (std::size_t i = 0; i < v.numel(); ++i) out[i] = (v[i] - lo) * inv;
    return out;
}

template <class T>
void minmax_norm_backward(const Tensor<T>& pb, std::size_t imin, std::size_t imax, T den,
                          const Tensor<T>& gpb, Tensor<T>& gv) {
    if (den <= T(0)) return;
    const T inv = T(1) / den;
    T gsum = T(0), gdot = T(0);
    for (std::size_t i = 0; i < pb.numel(); ++i) {
        gsum += gpb[i];
        gdot += gpb[i] * pb[i];
        gv[i] += gpb[i] * inv;
    }
    gv[imax] += -gdot * inv;
    gv[imin] += (gdot - gsum) * inv;
}

}  // namespace detail

template <class T>
RetainEnhance<T> boundary_posterior(const Tensor<T>& m, PosteriorParams<T>& p,
                                    PosteriorCtx<T>& ctx) {
    ctx.dtil = geometric_prior(m, p, &ctx.dt, &ctx.dt_empty);
    ctx.lmap = attention_likelihood(m, ctx.dtil, p, &ctx);
    ctx.v = Tensor<T>(m.shape());
    for (std::size_t i = 0; i < ctx.v.numel(); ++i) ctx.v[i] = ctx.dtil[i] * ctx.lmap[i];
    ctx.pb = detail::minmax_norm(ctx.v, ctx.imin, ctx.imax, ctx.den);
    const T mu_r = p.retain_scale.v[0], mu_e = p.enhance_scale.v[0];
    ctx.re.pb = ctx.pb;
    ctx.re.r = Tensor<T>(m.shape());
    ctx.re.e = Tensor<T>(m.shape());
    for (std::size_t i = 0; i < ctx.pb.numel(); ++i) {
        ctx.re.r[i] = mu_r * (T(1) - ctx.pb[i]);
        ctx.re.e[i] = mu_e * ctx.pb[i];
    }
    return ctx.re;
}

// Accumulates into gm and the parameter grads. gpb_direct covers consumers of
// P_b itself (heatmap probes, etc.); pass an empty tensor when unused.
// The binarisation M > tau is a hard threshold: no gradient reaches tau or M
// through the distance field, only through the likelihood/product paths.
template <class T>
void posterior_backward(const Tensor<T>& m, PosteriorParams<T>& p, const PosteriorCtx<T>& ctx,
                        const Tensor<T>& gr, const Tensor<T>& ge, const Tensor<T>& gpb_direct,
                        Tensor<T>& gm) {
    const std::size_t n = ctx.pb.numel();
    const T mu_r = p.retain_scale.v[0], mu_e = p.enhance_scale.v[0];
    Tensor<T> gpb(ctx.pb.shape());
    T gmu_r = T(0), gmu_e = T(0);
    const bool has_direct = gpb_direct.numel() == n;
    for (std::size_t i = 0; i < n; ++i) {
        T acc = has_direct ? gpb_direct[i] : T(0);
        if (gr.numel() == n) {
            acc -= mu_r * gr[i];
            gmu_r += gr[i] * (T(1) - ctx.pb[i]);
        }
        if (ge.numel() == n) {
            acc += mu_e * ge[i];
            gmu_e += ge[i] * ctx.pb[i];
        }
        gpb[i] = acc;
    }
    p.retain_scale.g[0] += gmu_r;
    p.enhance_scale.g[0] += gmu_e;

    Tensor<T> gv(ctx.v.shape());
    detail::minmax_norm_backward(ctx.pb, ctx.imin, ctx.imax, ctx.den, gpb, gv);

    Tensor<T> gdtil(ctx.dtil.shape());
    Tensor<T> glmap(ctx.lmap.shape());
    for (std::size_t i = 0; i < n; ++i) {
        gdtil[i] = gv[i] * ctx.lmap[i];
        glmap[i] = gv[i] * ctx.dtil[i];
    }

    // likelihood: L = q k / gamma
    const T gamma = p.gamma();
    const T inv_gamma = T(1) / gamma;
    Tensor<T> gq(ctx.q.shape());
    Tensor<T> gk(ctx.k.shape());
    T ggamma = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        gq[i] = glmap[i] * ctx.k[i] * inv_gamma;
        gk[i] = glmap[i] * ctx.q[i] * inv_gamma;
        ggamma -= glmap[i] * ctx.q[i] * ctx.k[i] * inv_gamma * inv_gamma;
    }
    p.temp_raw.g[0] += ggamma * sigmoid_scalar(p.temp_raw.v[0]);

    p.q_mlp.backward(m, ctx.dtil, ctx.q_hidden, gq, gm, gdtil);
    p.k_mlp.backward(m, ctx.dtil, ctx.k_hidden, gk, gm, gdtil);

    // geometric prior: d~ = exp(-alpha dt), dt constant
    T galpha = T(0);
    for (std::size_t i = 0; i < n; ++i) galpha -= gdtil[i] * ctx.dt[i] * ctx.dtil[i];
    p.decay_raw.g[0] += galpha * sigmoid_scalar(p.decay_raw.v[0]);
}

}  // namespace segscan
