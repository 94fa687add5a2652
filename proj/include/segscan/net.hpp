#pragma once

#include <string>
#include <vector>

#include "segscan/basm.hpp"
#include "segscan/cmsa.hpp"
#include "segscan/config.hpp"
#include "segscan/conv.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Desk-scale encoder/decoder: three levels of widths 16/32/64 on 64x64
// inputs, the channel-aggregation module at the bottleneck, the
// boundary-aware block at both skip connections, and a prediction head at
// every decoder level (coarse to fine).

template <class T>
struct ConvLayer {
    Param<T> w;  // (Cout, Cin, 3, 3)
    Param<T> b;  // (Cout)
    std::size_t stride = 1;
    bool relu = true;

    void init(std::size_t cin, std::size_t cout, Rng& rng, std::size_t stride_ = 1,
              bool relu_ = true) {
        stride = stride_;
        relu = relu_;
        w.init_randn({cout, cin, 3, 3}, rng, std::sqrt(T(2) / static_cast<T>(cin * 9)));
        b.init({cout});
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }

    struct Ctx {
        Tensor<T> x, y, col;
    };

    Tensor<T> forward(const Tensor<T>& x, Ctx& ctx) {
        ctx.x = x;
        auto y = conv2d_dense(x, w.v, b.v, stride, &ctx.col);
        if (relu)
            for (std::size_t i = 0; i < y.numel(); ++i)
                if (y[i] < T(0)) y[i] = T(0);
        ctx.y = y;
        return y;
    }

    Tensor<T> backward(const Ctx& ctx, Tensor<T> gy) {
        if (relu)
            for (std::size_t i = 0; i < gy.numel(); ++i)
                if (ctx.y[i] <= T(0)) gy[i] = T(0);
        Tensor<T> gx(ctx.x.shape());
        conv2d_dense_backward(ctx.x, w.v, gy, stride, gx, w.g, b.g, &ctx.col);
        return gx;
    }
};

template <class T>
struct PointwiseLayer {
    Param<T> w;  // (Cout, Cin)
    Param<T> b;  // (Cout)

    void init(std::size_t cin, std::size_t cout, Rng& rng) {
        w.init_randn({cout, cin}, rng, std::sqrt(T(1) / static_cast<T>(cin)));
        b.init({cout});
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
        f(prefix + ".b", b);
    }

    struct Ctx {
        Tensor<T> x;
    };

    Tensor<T> forward(const Tensor<T>& x, Ctx& ctx) {
        ctx.x = x;
        return conv2d_pointwise(x, w.v, &b.v);
    }

    Tensor<T> backward(const Ctx& ctx, const Tensor<T>& gy) {
        Tensor<T> gx(ctx.x.shape());
        conv2d_pointwise_backward(ctx.x, w.v, gy, gx, w.g, &b.g);
        return gx;
    }
};

template <class T>
Tensor<T> upsample2(const Tensor<T>& x) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor<T> y({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < 2 * H; ++i) {
            const T* src = x.data() + (c * H + i / 2) * W;
            T* dst = y.data() + (c * 2 * H + i) * 2 * W;
            for (std::size_t j = 0; j < 2 * W; ++j) dst[j] = src[j / 2];
        }
    return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& gy, std::size_t H, std::size_t W) {
    const std::size_t C = gy.dim(0);
    Tensor<T> gx({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < 2 * H; ++i) {
            T* dst = gx.data() + (c * H + i / 2) * W;
            const T* src = gy.data() + (c * 2 * H + i) * 2 * W;
            for (std::size_t j = 0; j < 2 * W; ++j) dst[j / 2] += src[j];
        }
    return gx;
}

template <class T>
struct NetConfig {
    std::size_t image_size = 64;
    std::size_t classes = 4;
    std::size_t widths[3] = {16, 32, 64};
    std::size_t state_size = 4;
    std::size_t cmsa_groups = 4;
    std::size_t cmsa_dm = 16;
    bool basm_enabled = true;
    bool basm_modulation = true;
    bool basm_se_fusion = true;
    bool cmsa_enabled = true;
    T mu_r = T(0.8);
    T mu_e = T(1.2);
    T cmsa_lambda = T(1);
    T cmsa_big_lambda = T(0.9);
    std::uint64_t seed = 42;

    static NetConfig from_config(const Config& c) {
        NetConfig n;
        n.seed = static_cast<std::uint64_t>(c.get_size("seed", 42));
        n.state_size = c.get_size("net.state_size", 4);
        n.basm_enabled = c.get_flag("basm.enabled", true);
        n.basm_modulation = c.get_flag("basm.modulation", true);
        n.basm_se_fusion = c.get_flag("basm.se_fusion", true);
        n.cmsa_enabled = c.get_flag("cmsa.enabled", true);
        n.cmsa_groups = c.get_size("cmsa.groups", 4);
        n.cmsa_dm = c.get_size("cmsa.dm", 16);
        n.cmsa_lambda = static_cast<T>(c.get_num("cmsa.lambda_init", 1.0));
        n.cmsa_big_lambda = static_cast<T>(c.get_num("cmsa.Lambda_init", 0.9));
        n.mu_r = static_cast<T>(c.get_num("posterior.mu_R", 0.8));
        n.mu_e = static_cast<T>(c.get_num("posterior.mu_E", 1.2));
        if (n.widths[2] % n.cmsa_groups != 0)
            throw ConfigError("bottleneck width not divisible by cmsa.groups");
        return n;
    }
};

template <class T>
struct ToyNet {
    NetConfig<T> cfg;
    ConvLayer<T> enc0a, enc0b, down0, enc1a, enc1b, down1, enc2a, enc2b;
    CmsaParams<T> cmsa;
    PointwiseLayer<T> up1_proj;
    BasmParams<T> basm1;
    ConvLayer<T> dec1;
    PointwiseLayer<T> up0_proj;
    BasmParams<T> basm0;
    ConvLayer<T> dec0;
    PointwiseLayer<T> head2, head1, head0;  // coarse, mid, fine

    void init(const NetConfig<T>& c) {
        cfg = c;
        Rng rng(c.seed ^ 0x5eed5eedULL);
        const auto w0 = c.widths[0], w1 = c.widths[1], w2 = c.widths[2];
        enc0a.init(1, w0, rng);
        enc0b.init(w0, w0, rng);
        down0.init(w0, w1, rng, 2);
        enc1a.init(w1, w1, rng);
        enc1b.init(w1, w1, rng);
        down1.init(w1, w2, rng, 2);
        enc2a.init(w2, w2, rng);
        enc2b.init(w2, w2, rng);
        cmsa.init(c.cmsa_groups, c.cmsa_dm, c.state_size, rng, c.cmsa_lambda, c.cmsa_big_lambda);
        up1_proj.init(w2, w1, rng);
        basm1.init(w1, c.state_size, rng, c.mu_r, c.mu_e);
        dec1.init(w1, w1, rng);
        up0_proj.init(w1, w0, rng);
        basm0.init(w0, c.state_size, rng, c.mu_r, c.mu_e);
        dec0.init(w0, w0, rng);
        head2.init(w2, c.classes, rng);
        head1.init(w1, c.classes, rng);
        head0.init(w0, c.classes, rng);
        basm1.modulation_enabled = basm0.modulation_enabled = c.basm_modulation;
        basm1.se_fusion_enabled = basm0.se_fusion_enabled = c.basm_se_fusion;
    }

    template <class F>
    void visit(F&& f) {
        enc0a.visit("enc0a", f);
        enc0b.visit("enc0b", f);
        down0.visit("down0", f);
        enc1a.visit("enc1a", f);
        enc1b.visit("enc1b", f);
        down1.visit("down1", f);
        enc2a.visit("enc2a", f);
        enc2b.visit("enc2b", f);
        if (cfg.cmsa_enabled) cmsa.visit("cmsa", f);
        up1_proj.visit("up1_proj", f);
        if (cfg.basm_enabled) basm1.visit("basm1", f);
        dec1.visit("dec1", f);
        up0_proj.visit("up0_proj", f);
        if (cfg.basm_enabled) basm0.visit("basm0", f);
        dec0.visit("dec0", f);
        head2.visit("head2", f);
        head1.visit("head1", f);
        head0.visit("head0", f);
    }

    void zero_grad() {
        visit([](const std::string&, Param<T>& p) { p.zero_grad(); });
    }

    void project() {
        if (cfg.basm_enabled) {
            basm0.project();
            basm1.project();
        }
        if (cfg.cmsa_enabled) cmsa.project();
    }

    std::size_t param_count() {
        std::size_t n = 0;
        visit([&n](const std::string&, Param<T>& p) { n += p.v.numel(); });
        return n;
    }

    struct Fwd {
        typename ConvLayer<T>::Ctx e0a, e0b, d0, e1a, e1b, d1, e2a, e2b, dc1, dc0;
        typename PointwiseLayer<T>::Ctx u1p, u0p, h2, h1, h0;
        CmsaCtx<T> cmsa;
        BasmCtx<T> basm1, basm0;
        Tensor<T> x0, x1, x2, bott, u1, f1, dec1_out, u0, f0, dec0_out;
        std::vector<Tensor<T>> logits;  // [coarse (16x16), mid (32x32), fine (64x64)]
    };

    std::vector<Tensor<T>> forward(const Tensor<T>& image, Fwd& k) {
        k.x0 = enc0b.forward(enc0a.forward(image, k.e0a), k.e0b);
        k.x1 = enc1b.forward(enc1a.forward(down0.forward(k.x0, k.d0), k.e1a), k.e1b);
        k.x2 = enc2b.forward(enc2a.forward(down1.forward(k.x1, k.d1), k.e2a), k.e2b);
        k.bott = cfg.cmsa_enabled ? cmsa_forward(k.x2, cmsa, k.cmsa) : k.x2;

        k.u1 = up1_proj.forward(upsample2(k.bott), k.u1p);
        k.f1 = cfg.basm_enabled ? basm_forward(k.x1, k.u1, basm1, k.basm1) : add(k.x1, k.u1);
        k.dec1_out = dec1.forward(k.f1, k.dc1);

        k.u0 = up0_proj.forward(upsample2(k.dec1_out), k.u0p);
        k.f0 = cfg.basm_enabled ? basm_forward(k.x0, k.u0, basm0, k.basm0) : add(k.x0, k.u0);
        k.dec0_out = dec0.forward(k.f0, k.dc0);

        k.logits.clear();
        k.logits.push_back(head2.forward(k.bott, k.h2));
        k.logits.push_back(head1.forward(k.dec1_out, k.h1));
        k.logits.push_back(head0.forward(k.dec0_out, k.h0));
        return k.logits;
    }

    // accumulates parameter gradients for one sample given per-level logit
    // gradients (coarse, mid, fine)
    void backward(Fwd& k, const std::vector<Tensor<T>>& glogits) {
        auto gdec0 = head0.backward(k.h0, glogits[2]);
        auto gf0 = dec0.backward(k.dc0, gdec0);

        Tensor<T> gx0(k.x0.shape());
        Tensor<T> gu0(k.u0.shape());
        if (cfg.basm_enabled) {
            basm_backward(k.x0, k.u0, basm0, k.basm0, gf0, gx0, gu0);
        } else {
            gx0 = gf0;
            gu0 = gf0;
        }
        auto gdec1 = head1.backward(k.h1, glogits[1]);
        {
            auto gup = up0_proj.backward(k.u0p, gu0);
            auto g = upsample2_backward(gup, k.dec1_out.dim(1), k.dec1_out.dim(2));
            for (std::size_t i = 0; i < gdec1.numel(); ++i) gdec1[i] += g[i];
        }
        auto gf1 = dec1.backward(k.dc1, gdec1);

        Tensor<T> gx1(k.x1.shape());
        Tensor<T> gu1(k.u1.shape());
        if (cfg.basm_enabled) {
            basm_backward(k.x1, k.u1, basm1, k.basm1, gf1, gx1, gu1);
        } else {
            gx1 = gf1;
            gu1 = gf1;
        }
        auto gbott = head2.backward(k.h2, glogits[0]);
        {
            auto gup = up1_proj.backward(k.u1p, gu1);
            auto g = upsample2_backward(gup, k.bott.dim(1), k.bott.dim(2));
            for (std::size_t i = 0; i < gbott.numel(); ++i) gbott[i] += g[i];
        }

        Tensor<T> gx2(k.x2.shape());
        if (cfg.cmsa_enabled)
            cmsa_backward(k.x2, cmsa, k.cmsa, gbott, gx2);
        else
            gx2 = gbott;

        // encoder chain, folding in the skip gradients at each level
        auto gx1_enc = down1.backward(k.d1, enc2a.backward(k.e2a, enc2b.backward(k.e2b, gx2)));
        for (std::size_t i = 0; i < gx1.numel(); ++i) gx1[i] += gx1_enc[i];
        auto gx0_enc = down0.backward(k.d0, enc1a.backward(k.e1a, enc1b.backward(k.e1b, gx1)));
        for (std::size_t i = 0; i < gx0.numel(); ++i) gx0[i] += gx0_enc[i];
        enc0a.backward(k.e0a, enc0b.backward(k.e0b, gx0));
    }
};

}  // namespace segscan
