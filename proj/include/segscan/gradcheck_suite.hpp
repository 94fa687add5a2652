#pragma once

#include <string>
#include <vector>

#include "segscan/basm.hpp"
#include "segscan/cmsa.hpp"
#include "segscan/gradcheck.hpp"
#include "segscan/loss.hpp"

namespace segscan {

// Full per-parameter-group verification against the central-difference
// oracle, on small 64-bit instances. Used by the gradcheck CLI subcommand
// and by the acceptance suite.

struct GradcheckEntry {
    std::string group;
    double rel_err = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double worst = 0.0;

    void add(const std::string& group, double rel) {
        entries.push_back({group, rel});
        worst = std::max(worst, rel);
    }

    bool pass(double tol = 1e-4) const { return worst < tol; }
};

namespace detail {

template <class Params, class Objective>
void check_params(Params& p, const std::string& prefix, const Objective& objective,
                  GradcheckReport& rep, double h = 1e-5) {
    p.visit(prefix, [&](const std::string& name, Param<double>& prm) {
        if (name.find("threshold_raw") != std::string::npos) {
            // hard binarisation threshold: the loss is locally flat, so the
            // analytic zero must agree with a (near-)zero numeric slope
            auto saved = prm.v;
            auto fd = finite_diff_grad(
                [&](const Tensor<double>& t) {
                    prm.v = t;
                    const double v = objective();
                    prm.v = saved;
                    return v;
                },
                saved, 1e-6);
            double num = 0.0;
            for (std::size_t i = 0; i < fd.numel(); ++i) num = std::max(num, std::abs(fd[i]));
            double ana = 0.0;
            for (std::size_t i = 0; i < prm.g.numel(); ++i) ana = std::max(ana, std::abs(prm.g[i]));
            rep.add(name, std::max(num, ana));
            return;
        }
        auto saved = prm.v;
        auto fd = finite_diff_grad(
            [&](const Tensor<double>& t) {
                prm.v = t;
                const double v = objective();
                prm.v = saved;
                return v;
            },
            saved, h);
        rep.add(name, relative_error(prm.g, fd));
    });
}

}  // namespace detail

inline GradcheckReport run_gradcheck_suite() {
    GradcheckReport rep;

    // boundary-aware block: covers the scan parameters (A, delta/B/C
    // projections, D), the guidance weights and head, the posterior scalars
    // and MLPs, the SASF kernels and the fusion heads/temperature
    {
        const std::size_t C = 2, H = 4, W = 4, N = 2;
        Tensor<double> fe, fd, probe;
        BasmParams<double> p;
        // The posterior has two genuine switching surfaces: the min-max
        // winners and the hard binarisation M > tau. Probing across either
        // pollutes the numeric gradient, so pick a seed whose instance keeps
        // both comfortably away from the probe radius.
        for (std::uint64_t seed = 814;; ++seed) {
            Rng rng(seed);
            fe = Tensor<double>::randn({C, H, W}, rng);
            fd = Tensor<double>::randn({C, H, W}, rng);
            p = BasmParams<double>();
            p.init(C, N, rng, 0.6, 0.9);
            probe = Tensor<double>::randn({C, H, W}, rng);
            BasmCtx<double> c;
            basm_forward(fe, fd, p, c);
            std::vector<double> v(c.post.v.vec());
            std::sort(v.begin(), v.end());
            const double range = v.back() - v.front();
            if (range <= 0) continue;
            const double gap_lo = (v[1] - v[0]) / range;
            const double gap_hi = (v[v.size() - 1] - v[v.size() - 2]) / range;
            double tau_margin = 1e9;
            const double tau = p.posterior.tau();
            for (std::size_t i = 0; i < c.guid.m.numel(); ++i)
                tau_margin = std::min(tau_margin, std::abs(c.guid.m[i] - tau));
            if (gap_lo > 1e-2 && gap_hi > 1e-2 && tau_margin > 1e-3) break;
        }
        auto objective = [&]() {
            BasmCtx<double> c;
            auto out = basm_forward(fe, fd, p, c);
            double s = 0;
            for (std::size_t i = 0; i < out.numel(); ++i) s += probe[i] * out[i];
            return s;
        };
        BasmCtx<double> ctx;
        basm_forward(fe, fd, p, ctx);
        Tensor<double> gfe(fe.shape()), gfd(fd.shape());
        basm_backward(fe, fd, p, ctx, probe, gfe, gfd);
        detail::check_params(p, "basm", objective, rep);

        auto fd_fe = finite_diff_grad(
            [&](const Tensor<double>& t) {
                auto saved = fe;
                fe = t;
                const double v = objective();
                fe = saved;
                return v;
            },
            fe, 1e-5);
        rep.add("basm.input_fe", relative_error(gfe, fd_fe));
    }

    // channel aggregation in all three clip regimes (free, step-clipped,
    // cumulative-saturated) so the lambda and Lambda paths both carry
    {
        const double setups[3][2] = {{5.0, 0.99}, {0.3, 0.9}, {0.9, 0.2}};
        const char* tags[3] = {".free", ".step_clip", ".cum_clip"};
        for (int s = 0; s < 3; ++s) {
            Rng rng(915 + s);
            const std::size_t C = 8, H = 3, W = 3;
            auto x = Tensor<double>::randn({C, H, W}, rng);
            CmsaParams<double> p;
            p.init(4, 4, 2, rng, setups[s][0], setups[s][1]);
            auto probe = Tensor<double>::randn({C, H, W}, rng);
            auto objective = [&]() {
                CmsaCtx<double> c;
                auto out = cmsa_forward(x, p, c);
                double v = 0;
                for (std::size_t i = 0; i < out.numel(); ++i) v += probe[i] * out[i];
                return v;
            };
            CmsaCtx<double> ctx;
            cmsa_forward(x, p, ctx);
            Tensor<double> gx(x.shape());
            cmsa_backward(x, p, ctx, probe, gx);
            GradcheckReport local;
            detail::check_params(p, std::string("cmsa") + tags[s], objective, local);
            for (auto& e : local.entries) {
                if (e.group.find("ssm.skip") != std::string::npos) continue;  // unused readout skip
                rep.add(e.group, e.rel_err);
            }
        }
    }

    // combined loss
    {
        Rng rng(77);
        LabelMask gt;
        gt.height = gt.width = 4;
        gt.num_classes = 4;
        gt.labels.assign(16, 0);
        for (auto& l : gt.labels) l = static_cast<std::uint16_t>(rng.below(4));
        auto z0 = Tensor<double>::randn({4, 4, 4}, rng);
        auto z1 = Tensor<double>::randn({4, 2, 2}, rng);
        const std::vector<double> w = {1.0, 0.5};
        auto res = dice_ce_loss<double>({z0, z1}, gt, w);
        auto fd0 = finite_diff_grad(
            [&](const Tensor<double>& t) { return dice_ce_loss<double>({t, z1}, gt, w).value; }, z0,
            1e-5);
        rep.add("loss.logits_fine", relative_error(res.grads[0], fd0));
        auto fd1 = finite_diff_grad(
            [&](const Tensor<double>& t) { return dice_ce_loss<double>({z0, t}, gt, w).value; }, z1,
            1e-5);
        rep.add("loss.logits_coarse", relative_error(res.grads[1], fd1));
    }

    return rep;
}

}  // namespace segscan
