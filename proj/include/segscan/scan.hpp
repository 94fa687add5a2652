#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "segscan/errors.hpp"
#include "segscan/params.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Selective state-space scan. Per token x_t (C channels, state size N):
//   z_t      = Wd x_t + bd                      (C)
//   delta0_t = softplus(z_t)                    (C)  base timestep
//   b0_t     = Wb x_t                           (N)  base input projection
//   c_t      = Wc x_t                           (N)  readout
//   delta_t  = delta0_t (1 - r_t)   [modulated] floored at 1e-6
//   bm_t     = b0_t (1 + e_t)       [modulated]
//   abar     = exp(delta_t[c] A[c][n])          ZOH transition, A < 0
//   h_t      = abar h_{t-1} + delta_t[c] bm_t[n] x_t[c]
//   y_t[c]   = sum_n c_t[n] h_t[c][n] + skip[c] x_t[c]
// The simplified ZOH input bbar = delta * b is used throughout.

inline constexpr double kDeltaFloor = 1e-6;

template <class T>
struct SsmParams {
    std::size_t state_size = 0;
    Param<T> a;        // (C, N), entries < 0
    Param<T> delta_w;  // (C, C)
    Param<T> delta_b;  // (C)
    Param<T> b_proj;   // (N, C)
    Param<T> c_proj;   // (N, C)
    Param<T> skip;     // (C)

    void init(std::size_t channels, std::size_t n, Rng& rng, T delta_init = T(0.05)) {
        state_size = n;
        a.init({channels, n});
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t j = 0; j < n; ++j) a.v.at(c, j) = -static_cast<T>(j + 1);
        const T ws = T(1) / std::sqrt(static_cast<T>(channels));
        delta_w.init_randn({channels, channels}, rng, T(0.05) * ws);
        delta_b.init({channels}, softplus_inverse(delta_init));
        b_proj.init_randn({n, channels}, rng, ws);
        c_proj.init_randn({n, channels}, rng, ws);
        skip.init({channels}, T(1));
    }

    // keeps the stability invariant (A < 0) after optimiser updates
    void project() {
        for (std::size_t i = 0; i < a.v.numel(); ++i) a.v[i] = std::min(a.v[i], T(-1e-4));
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".a", a);
        f(prefix + ".delta_w", delta_w);
        f(prefix + ".delta_b", delta_b);
        f(prefix + ".b_proj", b_proj);
        f(prefix + ".c_proj", c_proj);
        f(prefix + ".skip", skip);
    }
};

template <class T>
struct ScanSequence {
    Tensor<T> tokens;   // (L, C)
    Tensor<T> retain;   // (L); empty means unmodulated
    Tensor<T> enhance;  // (L)

    bool modulated() const { return retain.numel() == tokens.dim(0); }
};

// ---------------------------------------------------------------------------
// standalone ops
// ---------------------------------------------------------------------------

// ZOH: abar = exp(delta A) elementwise (diagonal A), bbar = delta b.
// a is (C,N), delta is (C), b is (N); outputs abar (C,N) and bbar (C,N).
template <class T>
void discretize_zoh(const Tensor<T>& a, const Tensor<T>& delta, const Tensor<T>& b,
                    Tensor<T>& abar, Tensor<T>& bbar) {
    const std::size_t C = a.dim(0), N = a.dim(1);
    if (delta.numel() != C || b.numel() != N) throw DimensionError("discretize_zoh shape mismatch");
    for (std::size_t c = 0; c < C; ++c)
        if (delta[c] <= T(0)) throw ParameterError("discretize_zoh requires delta > 0");
    abar = Tensor<T>({C, N});
    bbar = Tensor<T>({C, N});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t n = 0; n < N; ++n) {
            abar.at(c, n) = exp_guarded(delta[c] * a.at(c, n));
            bbar.at(c, n) = delta[c] * b[n];
        }
}

// Eq-style boundary modulation. delta0 is (L,C), b0 is (L,N), r and e are (L).
// Returns true when any r >= 1 forced the delta floor (diagnostics flag).
template <class T>
bool modulate_params(const Tensor<T>& delta0, const Tensor<T>& b0, const Tensor<T>& r,
                     const Tensor<T>& e, Tensor<T>& delta_out, Tensor<T>& b_out) {
    const std::size_t L = delta0.dim(0), C = delta0.dim(1), N = b0.dim(1);
    if (r.numel() != L || e.numel() != L) throw DimensionError("modulation sequence length mismatch");
    delta_out = Tensor<T>({L, C});
    b_out = Tensor<T>({L, N});
    bool clamped = false;
    for (std::size_t t = 0; t < L; ++t) {
        if (r[t] >= T(1)) clamped = true;
        const T m = T(1) - r[t];
        for (std::size_t c = 0; c < C; ++c)
            delta_out.at(t, c) = std::max(delta0.at(t, c) * m, static_cast<T>(kDeltaFloor));
        const T gain = T(1) + e[t];
        for (std::size_t n = 0; n < N; ++n) b_out.at(t, n) = b0.at(t, n) * gain;
    }
    return clamped;
}

// ---------------------------------------------------------------------------
// full scan, forward
// ---------------------------------------------------------------------------

template <class T>
struct ScanCache {
    std::size_t L = 0, C = 0, N = 0;
    Tensor<T> zpre;     // (L,C)
    Tensor<T> delta0;   // (L,C)
    Tensor<T> delta;    // (L,C) after modulation + floor
    std::vector<std::uint8_t> floored;  // L*C flags
    Tensor<T> b0;       // (L,N)
    Tensor<T> bmod;     // (L,N)
    Tensor<T> readout;  // (L,N)
    Tensor<T> abar;     // (L,C,N)
    Tensor<T> h;        // (L,C,N)
    bool modulated = false;
    bool clamp_flag = false;  // some r >= 1 hit the delta floor

    bool valid() const { return L > 0; }
};

namespace detail {

// shared precomputation of the per-position discretised parameters
template <class T>
void scan_prepare(const ScanSequence<T>& seq, const SsmParams<T>& p, ScanCache<T>& k) {
    const std::size_t L = seq.tokens.dim(0), C = seq.tokens.dim(1), N = p.state_size;
    k.L = L;
    k.C = C;
    k.N = N;
    k.modulated = seq.modulated();
    k.clamp_flag = false;
    k.zpre = Tensor<T>({L, C});
    k.delta0 = Tensor<T>({L, C});
    k.delta = Tensor<T>({L, C});
    k.floored.assign(L * C, 0);
    k.b0 = Tensor<T>({L, N});
    k.bmod = Tensor<T>({L, N});
    k.readout = Tensor<T>({L, N});
    k.abar = Tensor<T>({L, C, N});
    for (std::size_t t = 0; t < L; ++t) {
        const T* x = seq.tokens.data() + t * C;
        T* z = k.zpre.data() + t * C;
        for (std::size_t c = 0; c < C; ++c) {
            T acc = p.delta_b.v[c];
            const T* wrow = p.delta_w.v.data() + c * C;
            for (std::size_t j = 0; j < C; ++j) acc += wrow[j] * x[j];
            z[c] = acc;
        }
        const T mod = k.modulated ? (T(1) - seq.retain[t]) : T(1);
        if (k.modulated && seq.retain[t] >= T(1)) k.clamp_flag = true;
        for (std::size_t c = 0; c < C; ++c) {
            k.delta0.at(t, c) = softplus_scalar(z[c]);
            T d = k.delta0.at(t, c) * mod;
            if (k.modulated && d < static_cast<T>(kDeltaFloor)) {
                d = static_cast<T>(kDeltaFloor);
                k.floored[t * C + c] = 1;
            }
            k.delta.at(t, c) = d;
        }
        const T gain = k.modulated ? (T(1) + seq.enhance[t]) : T(1);
        for (std::size_t n = 0; n < N; ++n) {
            T accb = T(0), accc = T(0);
            const T* wb = p.b_proj.v.data() + n * C;
            const T* wc = p.c_proj.v.data() + n * C;
            for (std::size_t j = 0; j < C; ++j) {
                accb += wb[j] * x[j];
                accc += wc[j] * x[j];
            }
            k.b0.at(t, n) = accb;
            k.bmod.at(t, n) = accb * gain;
            k.readout.at(t, n) = accc;
        }
        T* ab = k.abar.data() + t * C * N;
        for (std::size_t c = 0; c < C; ++c) {
            const T d = k.delta.at(t, c);
            const T* ar = p.a.v.data() + c * N;
            for (std::size_t n = 0; n < N; ++n) ab[c * N + n] = exp_guarded(d * ar[n]);
        }
    }
}

template <class T>
Tensor<T> scan_readout(const ScanSequence<T>& seq, const SsmParams<T>& p, const ScanCache<T>& k) {
    const std::size_t L = k.L, C = k.C, N = k.N;
    Tensor<T> y({L, C});
    for (std::size_t t = 0; t < L; ++t) {
        const T* x = seq.tokens.data() + t * C;
        const T* cr = k.readout.data() + t * N;
        const T* h = k.h.data() + t * C * N;
        T* yt = y.data() + t * C;
        for (std::size_t c = 0; c < C; ++c) {
            T acc = p.skip.v[c] * x[c];
            const T* hc = h + c * N;
            for (std::size_t n = 0; n < N; ++n) acc += cr[n] * hc[n];
            yt[c] = acc;
        }
    }
    return y;
}

}  // namespace detail

// Sequential reference recurrence. The cache (when supplied) retains forward
// activations for scan_backward.
template <class T>
Tensor<T> selective_scan_seq(const ScanSequence<T>& seq, const SsmParams<T>& p,
                             ScanCache<T>* cache = nullptr) {
    ScanCache<T> local;
    ScanCache<T>& k = cache ? *cache : local;
    detail::scan_prepare(seq, p, k);
    const std::size_t L = k.L, C = k.C, N = k.N;
    k.h = Tensor<T>({L, C, N});
    std::vector<T> hprev(C * N, T(0));
    for (std::size_t t = 0; t < L; ++t) {
        const T* x = seq.tokens.data() + t * C;
        const T* ab = k.abar.data() + t * C * N;
        const T* bm = k.bmod.data() + t * N;
        T* ht = k.h.data() + t * C * N;
        for (std::size_t c = 0; c < C; ++c) {
            const T dx = k.delta.at(t, c) * x[c];
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t i = c * N + n;
                hprev[i] = ab[i] * hprev[i] + dx * bm[n];
                ht[i] = hprev[i];
            }
        }
    }
    return detail::scan_readout(seq, p, k);
}

// ---------------------------------------------------------------------------
// parallel variant: Blelloch-style balanced-tree reduction over the
// associative combine (a2,b2) o (a1,b1) = (a2 a1, a2 b1 + b2).
// Deterministic fixed tree order; identity element (1, 0).
// ---------------------------------------------------------------------------

namespace detail {

// inclusive scan of one lane; optional cap saturates combined a-coefficients
template <class T>
void scan_lane_blelloch(const T* a, const T* b, std::size_t L, T* h,
                        T a_cap = std::numeric_limits<T>::infinity()) {
    std::size_t M = 1;
    while (M < L) M <<= 1;
    std::vector<T> na(M), nb(M), la(M), lb(M);
    for (std::size_t i = 0; i < L; ++i) {
        na[i] = a[i];
        nb[i] = b[i];
    }
    for (std::size_t i = L; i < M; ++i) {
        na[i] = T(1);
        nb[i] = T(0);
    }
    for (std::size_t i = 0; i < M; ++i) {
        la[i] = na[i];
        lb[i] = nb[i];
    }
    auto combine = [a_cap](T ahi, T bhi, T alo, T blo, T& ao, T& bo) {
        ao = std::min(ahi * alo, a_cap);
        bo = ahi * blo + bhi;
    };
    // upsweep
    for (std::size_t d = 1; d < M; d <<= 1) {
        for (std::size_t i = 0; i + 2 * d <= M; i += 2 * d) {
            const std::size_t l = i + d - 1, r = i + 2 * d - 1;
            combine(na[r], nb[r], na[l], nb[l], na[r], nb[r]);
        }
    }
    // downsweep (exclusive prefixes)
    na[M - 1] = T(1);
    nb[M - 1] = T(0);
    for (std::size_t d = M >> 1; d > 0; d >>= 1) {
        for (std::size_t i = 0; i + 2 * d <= M; i += 2 * d) {
            const std::size_t l = i + d - 1, r = i + 2 * d - 1;
            const T ta = na[l], tb = nb[l];
            na[l] = na[r];
            nb[l] = nb[r];
            combine(ta, tb, na[r], nb[r], na[r], nb[r]);
        }
    }
    // inclusive = leaf o exclusive; h_t is the b-component (h_{-1} = 0)
    for (std::size_t i = 0; i < L; ++i) {
        T ao, bo;
        combine(la[i], lb[i], na[i], nb[i], ao, bo);
        h[i] = bo;
    }
}

}  // namespace detail

template <class T>
Tensor<T> selective_scan_parallel(const ScanSequence<T>& seq, const SsmParams<T>& p) {
    ScanCache<T> k;
    detail::scan_prepare(seq, p, k);
    const std::size_t L = k.L, C = k.C, N = k.N;
    k.h = Tensor<T>({L, C, N});
    std::vector<T> lane_a(L), lane_b(L), lane_h(L);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t t = 0; t < L; ++t) {
                lane_a[t] = k.abar[(t * C + c) * N + n];
                lane_b[t] = k.delta.at(t, c) * seq.tokens[t * C + c] * k.bmod.at(t, n);
            }
            detail::scan_lane_blelloch(lane_a.data(), lane_b.data(), L, lane_h.data());
            for (std::size_t t = 0; t < L; ++t) k.h[(t * C + c) * N + n] = lane_h[t];
        }
    }
    return detail::scan_readout(seq, p, k);
}

// ---------------------------------------------------------------------------
// reverse-time adjoint
// ---------------------------------------------------------------------------

template <class T>
struct ScanGrads {
    Tensor<T> tokens;   // (L,C)
    Tensor<T> retain;   // (L) when the forward was modulated
    Tensor<T> enhance;  // (L)
};

template <class T>
ScanGrads<T> scan_backward(const ScanSequence<T>& seq, SsmParams<T>& p, const ScanCache<T>& k,
                           const Tensor<T>& gy) {
    if (!k.valid()) throw StateError("scan_backward requires the forward cache");
    const std::size_t L = k.L, C = k.C, N = k.N;
    if (gy.dim(0) != L || gy.dim(1) != C) throw DimensionError("scan_backward grad shape mismatch");

    ScanGrads<T> out;
    out.tokens = Tensor<T>({L, C});
    if (k.modulated) {
        out.retain = Tensor<T>({L});
        out.enhance = Tensor<T>({L});
    }

    std::vector<T> lam(C * N, T(0));
    std::vector<T> gdelta(C), gb0(N), gbmod(N), gread(N), gz(C);
    for (std::size_t tt = L; tt-- > 0;) {
        const std::size_t t = tt;
        const T* x = seq.tokens.data() + t * C;
        const T* gyt = gy.data() + t * C;
        const T* ht = k.h.data() + t * C * N;
        const T* hprev = t > 0 ? k.h.data() + (t - 1) * C * N : nullptr;
        const T* ab = k.abar.data() + t * C * N;
        const T* bm = k.bmod.data() + t * N;
        const T* cr = k.readout.data() + t * N;
        T* gx = out.tokens.data() + t * C;

        // readout: y = sum_n cr[n] h[c][n] + skip[c] x[c]
        std::fill(gread.begin(), gread.end(), T(0));
        for (std::size_t c = 0; c < C; ++c) {
            const T g = gyt[c];
            p.skip.g[c] += g * x[c];
            gx[c] += p.skip.v[c] * g;
            const T* hc = ht + c * N;
            T* lamc = lam.data() + c * N;
            for (std::size_t n = 0; n < N; ++n) {
                gread[n] += g * hc[n];
                lamc[n] += cr[n] * g;
            }
        }

        // state update h_t = abar h_{t-1} + delta[c] bmod[n] x[c]
        std::fill(gdelta.begin(), gdelta.end(), T(0));
        std::fill(gbmod.begin(), gbmod.end(), T(0));
        for (std::size_t c = 0; c < C; ++c) {
            const T d = k.delta.at(t, c);
            const T xc = x[c];
            const T* arow = p.a.v.data() + c * N;
            T* garow = p.a.g.data() + c * N;
            T* lamc = lam.data() + c * N;
            const T* abc = ab + c * N;
            T gd = T(0), gxc = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const T l = lamc[n];
                const T hp = hprev ? hprev[c * N + n] : T(0);
                const T gabar = l * hp;
                gd += gabar * abc[n] * arow[n] + l * bm[n] * xc;
                garow[n] += gabar * abc[n] * d;
                gbmod[n] += l * d * xc;
                gxc += l * d * bm[n];
                lamc[n] = abc[n] * l;  // propagate to t-1
            }
            gdelta[c] = gd;
            gx[c] += gxc;
        }

        // modulation chains
        const T mod = k.modulated ? (T(1) - seq.retain[t]) : T(1);
        T gr = T(0), ge = T(0);
        for (std::size_t c = 0; c < C; ++c) {
            T gd0;
            if (k.floored[t * C + c]) {
                gd0 = T(0);  // clamped at the floor: flat
            } else {
                gd0 = gdelta[c] * mod;
                if (k.modulated) gr -= gdelta[c] * k.delta0.at(t, c);
            }
            gz[c] = gd0 * sigmoid_scalar(k.zpre.at(t, c));  // softplus'
        }
        const T gain = k.modulated ? (T(1) + seq.enhance[t]) : T(1);
        for (std::size_t n = 0; n < N; ++n) {
            gb0[n] = gbmod[n] * gain;
            if (k.modulated) ge += gbmod[n] * k.b0.at(t, n);
        }
        if (k.modulated) {
            out.retain[t] = gr;
            out.enhance[t] = ge;
        }

        // projections
        for (std::size_t c = 0; c < C; ++c) {
            const T g = gz[c];
            if (g == T(0)) continue;
            T* gw = p.delta_w.g.data() + c * C;
            const T* w = p.delta_w.v.data() + c * C;
            for (std::size_t j = 0; j < C; ++j) {
                gw[j] += g * x[j];
                gx[j] += w[j] * g;
            }
            p.delta_b.g[c] += g;
        }
        for (std::size_t n = 0; n < N; ++n) {
            const T gb = gb0[n];
            const T gc = gread[n];
            T* gwb = p.b_proj.g.data() + n * C;
            const T* wb = p.b_proj.v.data() + n * C;
            T* gwc = p.c_proj.g.data() + n * C;
            const T* wc = p.c_proj.v.data() + n * C;
            for (std::size_t j = 0; j < C; ++j) {
                gwb[j] += gb * x[j];
                gx[j] += wb[j] * gb;
                gwc[j] += gc * x[j];
                gx[j] += wc[j] * gc;
            }
        }
    }
    return out;
}

}  // namespace segscan
