#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "segscan/errors.hpp"
#include "segscan/params.hpp"
#include "segscan/scan.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Channel-sequence state aggregation. The channel index is the scan
// dimension: each channel is pooled to a (mean, max) descriptor, projected to
// a token of width dm, and the tokens are scanned in contiguous groups with a
// shared SSM whose transitions are clipped. The per-step effective multiplier
// is min(clip(exp(delta A), 0, lambda), Lambda), which keeps every running
// product of transitions at or below Lambda and makes the geometric-series
// state bound max_i ||bbar_i|| ||u_i|| / (1 - Lambda) hold by construction.
// Outputs gate the original channels with a residual connection.

template <class T>
struct CmsaParams {
    std::size_t groups = 4;
    std::size_t dm = 16;
    Param<T> step_clip_raw;  // lambda = softplus(raw) > 0
    Param<T> cum_clip_raw;   // Lambda = sigmoid(raw) * 0.999, in (0,1)
    Param<T> token_w;        // (dm, 2)
    Param<T> token_b;        // (dm)
    Param<T> gate_w;         // (1, dm)
    Param<T> gate_b;         // (1)
    SsmParams<T> ssm;        // shared channel-scan parameters, width dm

    void init(std::size_t groups_, std::size_t dm_, std::size_t state_size, Rng& rng,
              T lambda_init = T(1), T big_lambda_init = T(0.9)) {
        groups = groups_;
        dm = dm_;
        step_clip_raw.init_scalar(softplus_inverse(lambda_init));
        const T p = clip_scalar(big_lambda_init / T(0.999), T(1e-4), T(1) - T(1e-4));
        cum_clip_raw.init_scalar(std::log(p / (T(1) - p)));
        token_w.init_randn({dm, 2}, rng, T(0.5));
        token_b.init({dm});
        gate_w.init_randn({1, dm}, rng, T(1) / std::sqrt(static_cast<T>(dm)));
        gate_b.init({1});
        ssm.init(dm, state_size, rng, T(0.3));
    }

    T step_clip() const { return softplus_scalar(step_clip_raw.v[0]); }
    T cum_clip() const { return sigmoid_scalar(cum_clip_raw.v[0]) * T(0.999); }

    void project() { ssm.project(); }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".step_clip_raw", step_clip_raw);
        f(prefix + ".cum_clip_raw", cum_clip_raw);
        f(prefix + ".token_w", token_w);
        f(prefix + ".token_b", token_b);
        f(prefix + ".gate_w", gate_w);
        f(prefix + ".gate_b", gate_b);
        ssm.visit(prefix + ".ssm", f);
    }
};

// ---------------------------------------------------------------------------
// channel tokens
// ---------------------------------------------------------------------------

template <class T>
struct TokenCtx {
    Tensor<T> pooled;                 // (C, 2): spatial mean and max
    std::vector<std::size_t> argmax;  // winning pixel per channel (first index)
};

template <class T>
Tensor<T> channel_tokens(const Tensor<T>& x, const CmsaParams<T>& p, TokenCtx<T>& ctx) {
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    ctx.pooled = Tensor<T>({C, 2});
    ctx.argmax.assign(C, 0);
    for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x.data() + c * HW;
        T s = T(0), mx = xc[0];
        std::size_t arg = 0;
        for (std::size_t i = 0; i < HW; ++i) {
            s += xc[i];
            if (xc[i] > mx) {
                mx = xc[i];
                arg = i;
            }
        }
        ctx.pooled.at(c, 0) = s / static_cast<T>(HW);
        ctx.pooled.at(c, 1) = mx;
        ctx.argmax[c] = arg;
    }
    Tensor<T> tokens({C, p.dm});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < p.dm; ++j)
            tokens.at(c, j) = p.token_w.v.at(j, 0) * ctx.pooled.at(c, 0) +
                              p.token_w.v.at(j, 1) * ctx.pooled.at(c, 1) + p.token_b.v[j];
    return tokens;
}

template <class T>
void channel_tokens_backward(const Tensor<T>& x, CmsaParams<T>& p, const TokenCtx<T>& ctx,
                             const Tensor<T>& gtokens, Tensor<T>& gx) {
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < C; ++c) {
        T gmean = T(0), gmax = T(0);
        for (std::size_t j = 0; j < p.dm; ++j) {
            const T g = gtokens.at(c, j);
            p.token_w.g.at(j, 0) += g * ctx.pooled.at(c, 0);
            p.token_w.g.at(j, 1) += g * ctx.pooled.at(c, 1);
            p.token_b.g[j] += g;
            gmean += g * p.token_w.v.at(j, 0);
            gmax += g * p.token_w.v.at(j, 1);
        }
        T* gxc = gx.data() + c * HW;
        const T spread = gmean / static_cast<T>(HW);
        for (std::size_t i = 0; i < HW; ++i) gxc[i] += spread;
        gxc[ctx.argmax[c]] += gmax;
    }
}

// ---------------------------------------------------------------------------
// grouped bounded scan
// ---------------------------------------------------------------------------

// branch of the effective transition multiplier per entry
enum : std::uint8_t { kBranchRaw = 0, kBranchStepClip = 1, kBranchCumClip = 2 };

template <class T>
struct GroupedScanCache {
    std::size_t C = 0, G = 0, Cg = 0, dm = 0, N = 0;
    Tensor<T> zpre, delta0;          // (C, dm)
    Tensor<T> bproj, cproj;          // (C, N)
    Tensor<T> eff;                   // (C, dm, N) effective multipliers
    std::vector<std::uint8_t> code;  // C*dm*N branch codes
    Tensor<T> h;                     // (C, dm, N)
    bool clip_enabled = true;
};

template <class T>
Tensor<T> grouped_bounded_scan(const Tensor<T>& tokens, const CmsaParams<T>& p,
                               GroupedScanCache<T>& k, bool clip_enabled = true) {
    const std::size_t C = tokens.dim(0), dm = tokens.dim(1), N = p.ssm.state_size;
    if (dm != p.dm) throw DimensionError("token width does not match cmsa dm");
    if (p.groups == 0 || C % p.groups != 0)
        throw ConfigError("channel count " + std::to_string(C) + " not divisible by groups " +
                          std::to_string(p.groups));
    k.C = C;
    k.G = p.groups;
    k.Cg = C / p.groups;
    k.dm = dm;
    k.N = N;
    k.clip_enabled = clip_enabled;
    k.zpre = Tensor<T>({C, dm});
    k.delta0 = Tensor<T>({C, dm});
    k.bproj = Tensor<T>({C, N});
    k.cproj = Tensor<T>({C, N});
    k.eff = Tensor<T>({C, dm, N});
    k.code.assign(C * dm * N, kBranchRaw);
    k.h = Tensor<T>({C, dm, N});

    const T lam = p.step_clip();
    const T cum = p.cum_clip();
    Tensor<T> y({C, dm});
    std::vector<T> h(dm * N);
    for (std::size_t g = 0; g < k.G; ++g) {
        std::fill(h.begin(), h.end(), T(0));  // state confined to the group
        for (std::size_t i = 0; i < k.Cg; ++i) {
            const std::size_t c = g * k.Cg + i;
            const T* u = tokens.data() + c * dm;
            T* z = k.zpre.data() + c * dm;
            for (std::size_t d = 0; d < dm; ++d) {
                T acc = p.ssm.delta_b.v[d];
                const T* wrow = p.ssm.delta_w.v.data() + d * dm;
                for (std::size_t j = 0; j < dm; ++j) acc += wrow[j] * u[j];
                z[d] = acc;
                k.delta0.at(c, d) = softplus_scalar(acc);
            }
            for (std::size_t n = 0; n < N; ++n) {
                T accb = T(0), accc = T(0);
                const T* wb = p.ssm.b_proj.v.data() + n * dm;
                const T* wc = p.ssm.c_proj.v.data() + n * dm;
                for (std::size_t j = 0; j < dm; ++j) {
                    accb += wb[j] * u[j];
                    accc += wc[j] * u[j];
                }
                k.bproj.at(c, n) = accb;
                k.cproj.at(c, n) = accc;
            }
            T* hk = k.h.data() + c * dm * N;
            for (std::size_t d = 0; d < dm; ++d) {
                const T delta = k.delta0.at(c, d);
                const T du = delta * u[d];
                const T* arow = p.ssm.a.v.data() + d * N;
                for (std::size_t n = 0; n < N; ++n) {
                    const std::size_t idx = (c * dm + d) * N + n;
                    T eff = exp_guarded(delta * arow[n]);
                    if (clip_enabled) {
                        if (eff > lam) {
                            eff = lam;
                            k.code[idx] = kBranchStepClip;
                        }
                        if (eff > cum) {
                            eff = cum;
                            k.code[idx] = kBranchCumClip;
                        }
                    }
                    k.eff[idx] = eff;
                    h[d * N + n] = eff * h[d * N + n] + du * k.bproj.at(c, n);
                    hk[d * N + n] = h[d * N + n];
                }
            }
            T* yk = y.data() + c * dm;
            for (std::size_t d = 0; d < dm; ++d) {
                T acc = T(0);
                for (std::size_t n = 0; n < N; ++n) acc += k.cproj.at(c, n) * hk[d * N + n];
                yk[d] = acc;
            }
        }
    }
    return y;
}

template <class T>
void grouped_bounded_scan_backward(const Tensor<T>& tokens, CmsaParams<T>& p,
                                   const GroupedScanCache<T>& k, const Tensor<T>& gy,
                                   Tensor<T>& gtokens) {
    const std::size_t C = k.C, dm = k.dm, N = k.N;
    T glam = T(0), gcum = T(0);
    std::vector<T> lam(dm * N), gdelta(dm), gb(N), gc(N), gz(dm);
    for (std::size_t g = 0; g < k.G; ++g) {
        std::fill(lam.begin(), lam.end(), T(0));
        for (std::size_t i = k.Cg; i-- > 0;) {
            const std::size_t c = g * k.Cg + i;
            const T* u = tokens.data() + c * dm;
            const T* gyk = gy.data() + c * dm;
            const T* hk = k.h.data() + c * dm * N;
            const T* hprev = i > 0 ? k.h.data() + (c - 1) * dm * N : nullptr;
            T* gu = gtokens.data() + c * dm;

            // readout y = sum_n cproj[n] h[d][n]
            std::fill(gc.begin(), gc.end(), T(0));
            for (std::size_t d = 0; d < dm; ++d) {
                const T gyd = gyk[d];
                for (std::size_t n = 0; n < N; ++n) {
                    gc[n] += gyd * hk[d * N + n];
                    lam[d * N + n] += k.cproj.at(c, n) * gyd;
                }
            }

            std::fill(gdelta.begin(), gdelta.end(), T(0));
            std::fill(gb.begin(), gb.end(), T(0));
            for (std::size_t d = 0; d < dm; ++d) {
                const T delta = k.delta0.at(c, d);
                const T ud = u[d];
                const T* arow = p.ssm.a.v.data() + d * N;
                T* garow = p.ssm.a.g.data() + d * N;
                T gud = T(0);
                for (std::size_t n = 0; n < N; ++n) {
                    const std::size_t idx = (c * dm + d) * N + n;
                    const T l = lam[d * N + n];
                    const T hp = hprev ? hprev[d * N + n] : T(0);
                    const T geff = l * hp;
                    switch (k.code[idx]) {
                        case kBranchStepClip: glam += geff; break;
                        case kBranchCumClip: gcum += geff; break;
                        default: {
                            const T raw = k.eff[idx];
                            gdelta[d] += geff * raw * arow[n];
                            garow[n] += geff * raw * delta;
                        }
                    }
                    gdelta[d] += l * k.bproj.at(c, n) * ud;
                    gb[n] += l * delta * ud;
                    gud += l * delta * k.bproj.at(c, n);
                    lam[d * N + n] = k.eff[idx] * l;
                }
                gu[d] += gud;
            }

            for (std::size_t d = 0; d < dm; ++d)
                gz[d] = gdelta[d] * sigmoid_scalar(k.zpre.at(c, d));
            for (std::size_t d = 0; d < dm; ++d) {
                const T g = gz[d];
                if (g == T(0)) continue;
                T* gw = p.ssm.delta_w.g.data() + d * dm;
                const T* w = p.ssm.delta_w.v.data() + d * dm;
                for (std::size_t j = 0; j < dm; ++j) {
                    gw[j] += g * u[j];
                    gu[j] += w[j] * g;
                }
                p.ssm.delta_b.g[d] += g;
            }
            for (std::size_t n = 0; n < N; ++n) {
                T* gwb = p.ssm.b_proj.g.data() + n * dm;
                const T* wb = p.ssm.b_proj.v.data() + n * dm;
                T* gwc = p.ssm.c_proj.g.data() + n * dm;
                const T* wc = p.ssm.c_proj.v.data() + n * dm;
                for (std::size_t j = 0; j < dm; ++j) {
                    gwb[j] += gb[n] * u[j];
                    gu[j] += wb[j] * gb[n];
                    gwc[j] += gc[n] * u[j];
                    gu[j] += wc[j] * gc[n];
                }
            }
        }
    }
    if (k.clip_enabled) {
        p.step_clip_raw.g[0] += glam * sigmoid_scalar(p.step_clip_raw.v[0]);
        const T s = sigmoid_scalar(p.cum_clip_raw.v[0]);
        p.cum_clip_raw.g[0] += gcum * s * (T(1) - s) * T(0.999);
    }
}

// ---------------------------------------------------------------------------
// boundedness check (Eq.-level guarantee, empirically asserted)
// ---------------------------------------------------------------------------

template <class T>
struct BoundReport {
    double max_ratio = 0.0;  // max over lanes of ||h_k|| / bound
    std::size_t violations = 0;
    std::size_t worst_group = 0, worst_channel = 0;
};

// Asserts ||h_k|| <= max_i(||bbar_i|| ||u_i||) / (1 - Lambda) for every
// channel of every group lane. Throws InvariantFailure on violation.
template <class T>
BoundReport<T> boundedness_check(const Tensor<T>& tokens, const GroupedScanCache<T>& k,
                                 T big_lambda, bool throw_on_violation = true) {
    if (big_lambda >= T(1)) throw ParameterError("boundedness check requires Lambda < 1");
    BoundReport<T> rep;
    const std::size_t dm = k.dm, N = k.N;
    for (std::size_t g = 0; g < k.G; ++g) {
        for (std::size_t d = 0; d < dm; ++d) {
            double wmax = 0.0;
            double bound_den = 1.0 - static_cast<double>(big_lambda);
            for (std::size_t i = 0; i < k.Cg; ++i) {
                const std::size_t c = g * k.Cg + i;
                // write vector for this lane: delta0[c][d] u[c][d] bproj[c][:]
                double bn = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    const double b = static_cast<double>(k.bproj.at(c, n));
                    bn += b * b;
                }
                const double w = std::abs(static_cast<double>(k.delta0.at(c, d)) *
                                          static_cast<double>(tokens.at(c, d))) *
                                 std::sqrt(bn);
                wmax = std::max(wmax, w);
                double hn = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    const double h = static_cast<double>(k.h[(c * dm + d) * N + n]);
                    hn += h * h;
                }
                const double bound = wmax / bound_den;
                const double ratio = bound > 0.0 ? std::sqrt(hn) / bound : 0.0;
                if (ratio > rep.max_ratio) {
                    rep.max_ratio = ratio;
                    rep.worst_group = g;
                    rep.worst_channel = c;
                }
                if (ratio > 1.0 + 1e-9) {
                    ++rep.violations;
                    if (throw_on_violation)
                        throw InvariantFailure("state bound exceeded at group " + std::to_string(g) +
                                               ", channel " + std::to_string(c));
                }
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// full module
// ---------------------------------------------------------------------------

template <class T>
struct CmsaCtx {
    TokenCtx<T> tok;
    Tensor<T> tokens;  // (C, dm)
    GroupedScanCache<T> scan;
    Tensor<T> y;       // (C, dm) scan outputs
    Tensor<T> gate;    // (C) sigmoid gates
};

// gate g_c = sigmoid(out_proj(y_c)); X_hat_c = X_c (1 + g_c)
template <class T>
Tensor<T> cmsa_forward(const Tensor<T>& x, const CmsaParams<T>& p, CmsaCtx<T>& ctx) {
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    ctx.tokens = channel_tokens(x, p, ctx.tok);
    ctx.y = grouped_bounded_scan(ctx.tokens, p, ctx.scan);
    ctx.gate = Tensor<T>({C});
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
        T logit = p.gate_b.v[0];
        for (std::size_t j = 0; j < p.dm; ++j) logit += p.gate_w.v.at(0, j) * ctx.y.at(c, j);
        const T gct = sigmoid_scalar(logit);
        ctx.gate[c] = gct;
        const T* xc = x.data() + c * HW;
        T* oc = out.data() + c * HW;
        const T gain = T(1) + gct;
        for (std::size_t i = 0; i < HW; ++i) oc[i] = xc[i] * gain;
    }
    return out;
}

template <class T>
void cmsa_backward(const Tensor<T>& x, CmsaParams<T>& p, const CmsaCtx<T>& ctx,
                   const Tensor<T>& gout, Tensor<T>& gx) {
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor<T> gy({C, p.dm});
    for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x.data() + c * HW;
        const T* gc = gout.data() + c * HW;
        T* gxc = gx.data() + c * HW;
        const T gain = T(1) + ctx.gate[c];
        T ggate = T(0);
        for (std::size_t i = 0; i < HW; ++i) {
            gxc[i] += gc[i] * gain;
            ggate += gc[i] * xc[i];
        }
        const T glogit = ggate * ctx.gate[c] * (T(1) - ctx.gate[c]);
        p.gate_b.g[0] += glogit;
        for (std::size_t j = 0; j < p.dm; ++j) {
            p.gate_w.g.at(0, j) += glogit * ctx.y.at(c, j);
            gy.at(c, j) = glogit * p.gate_w.v.at(0, j);
        }
    }
    Tensor<T> gtokens({C, p.dm});
    grouped_bounded_scan_backward(ctx.tokens, p, ctx.scan, gy, gtokens);
    channel_tokens_backward(x, p, ctx.tok, gtokens, gx);
}

}  // namespace segscan
