#include <catch_amalgamated.hpp>

#include <cmath>

#include "segscan/gradcheck.hpp"
#include "segscan/scan.hpp"

using namespace segscan;

namespace {

// Configure the input-dependent projections to behave as fixed parameters:
// delta comes purely from the bias, B and C read the (single-channel) token.
template <class T>
SsmParams<T> scalar_params(T a_value, T delta_value, T b_gain, T c_gain, T skip) {
    Rng rng(0);
    SsmParams<T> p;
    p.init(1, 1, rng);
    p.a.v[0] = a_value;
    p.delta_w.v.fill(T(0));
    p.delta_b.v[0] = softplus_inverse(delta_value);
    p.b_proj.v.fill(T(0));
    p.c_proj.v.fill(T(0));
    p.skip.v[0] = skip;
    // constant B and C regardless of token: emulate via bias-free projection
    // of a constant token is not possible, so tests that need constant B/C
    // use unit tokens instead.
    p.b_proj.v[0] = b_gain;
    p.c_proj.v[0] = c_gain;
    return p;
}

template <class T>
ScanSequence<T> random_sequence(Rng& rng, std::size_t L, std::size_t C, bool modulated) {
    ScanSequence<T> s;
    s.tokens = Tensor<T>::randn({L, C}, rng);
    if (modulated) {
        s.retain = Tensor<T>({L});
        s.enhance = Tensor<T>({L});
        for (std::size_t t = 0; t < L; ++t) {
            s.retain[t] = static_cast<T>(0.8 * rng.uniform());
            s.enhance[t] = static_cast<T>(1.2 * rng.uniform());
        }
    }
    return s;
}

}  // namespace

TEST_CASE("zoh discretisation") {
    Tensor<double> a({1, 1}, -1.0);
    Tensor<double> delta({1}, 0.5);
    Tensor<double> b({1}, 1.0);
    Tensor<double> abar, bbar;
    discretize_zoh(a, delta, b, abar, bbar);
    CHECK(abar[0] == Catch::Approx(std::exp(-0.5)));
    CHECK(bbar[0] == Catch::Approx(0.5));

    // delta -> 0 limit: identity transition, vanishing input
    delta[0] = 1e-12;
    discretize_zoh(a, delta, b, abar, bbar);
    CHECK(abar[0] == Catch::Approx(1.0));
    CHECK(bbar[0] == Catch::Approx(0.0).margin(1e-11));

    a[0] = -2.0;
    delta[0] = std::log(2.0);
    discretize_zoh(a, delta, b, abar, bbar);
    CHECK(abar[0] == Catch::Approx(0.25));

    delta[0] = -0.1;
    CHECK_THROWS_AS(discretize_zoh(a, delta, b, abar, bbar), ParameterError);
}

TEST_CASE("boundary modulation of delta and B") {
    const std::size_t L = 4, C = 2, N = 3;
    Tensor<double> delta0({L, C}, 0.7);
    Tensor<double> b0({L, N}, 2.0);
    Tensor<double> r({L}, 0.0);
    Tensor<double> e({L}, 0.0);
    Tensor<double> dm, bm;

    CHECK_FALSE(modulate_params(delta0, b0, r, e, dm, bm));
    CHECK(max_abs_diff(dm, delta0) == 0.0);  // r = 0: unmodulated

    e.fill(1.0);
    modulate_params(delta0, b0, r, e, dm, bm);
    for (std::size_t i = 0; i < bm.numel(); ++i) CHECK(bm[i] == Catch::Approx(4.0));  // doubled

    // Interior pixels with mu_R = 0.8: delta scales by 0.2.
    r.fill(0.8);
    modulate_params(delta0, b0, r, e, dm, bm);
    for (std::size_t i = 0; i < dm.numel(); ++i) CHECK(dm[i] == Catch::Approx(0.2 * 0.7));

    // r >= 1 hits the floor and raises the diagnostics flag
    r[1] = 1.2;
    CHECK(modulate_params(delta0, b0, r, e, dm, bm));
    CHECK(dm.at(1, 0) == Catch::Approx(kDeltaFloor));
    CHECK(dm.at(1, 0) > 0.0);
}

TEST_CASE("sequential scan closed-form cases") {
    // scalar case: A = -1, delta = ln 2 (abar = 1/2, bbar = ln 2), B = C = 1,
    // D = 0, unit tokens -> y = [ln 2, 1.5 ln 2]
    auto p = scalar_params<double>(-1.0, std::log(2.0), 1.0, 1.0, 0.0);
    ScanSequence<double> seq;
    seq.tokens = Tensor<double>({2, 1}, 1.0);
    auto y = selective_scan_seq(seq, p);
    CHECK(y[0] == Catch::Approx(std::log(2.0)).epsilon(1e-9));             // 0.6931
    CHECK(y[1] == Catch::Approx(0.5 * std::log(2.0) + std::log(2.0)));     // 1.0397

    // L = 1 single-step unrolling: y = c (delta b x) x + d x with x = 1
    ScanSequence<double> one;
    one.tokens = Tensor<double>({1, 1}, 1.0);
    auto p2 = scalar_params<double>(-0.7, 0.3, 2.0, 1.5, 0.25);
    auto y1 = selective_scan_seq(one, p2);
    CHECK(y1[0] == Catch::Approx(1.5 * (0.3 * 2.0 * 1.0) * 1.0 + 0.25));

    // zero input -> zero output
    Rng rng(3);
    SsmParams<double> pr;
    pr.init(3, 4, rng);
    ScanSequence<double> zs;
    zs.tokens = Tensor<double>({5, 3}, 0.0);
    auto yz = selective_scan_seq(zs, pr);
    for (std::size_t i = 0; i < yz.numel(); ++i) CHECK(yz[i] == 0.0);
}

TEST_CASE("parallel scan equals the sequential reference") {
    Rng rng(101);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t L = 1 + rng.below(200);
        const std::size_t C = 1 + rng.below(4);
        const std::size_t N = 1 + rng.below(6);
        SsmParams<float> p;
        p.init(C, N, rng, 0.5f);
        auto seq = random_sequence<float>(rng, L, C, trial % 2 == 0);
        auto ys = selective_scan_seq(seq, p);
        auto yp = selective_scan_parallel(seq, p);
        CHECK(max_abs_diff(ys, yp) < 1e-5f);
    }

    // L = 1: no combines, exact equality
    SsmParams<float> p1;
    p1.init(2, 3, rng);
    auto s1 = random_sequence<float>(rng, 1, 2, false);
    CHECK(max_abs_diff(selective_scan_seq(s1, p1), selective_scan_parallel(s1, p1)) == 0.0f);
}

TEST_CASE("scan combine monoid identity") {
    // composing with the identity pair (1, 0) leaves any element unchanged
    const double a = 0.37, b = -1.4;
    double a1, b1;
    // (a,b) o (1,0)
    a1 = a * 1.0;
    b1 = a * 0.0 + b;
    CHECK(a1 == a);
    CHECK(b1 == b);
    // (1,0) o (a,b)
    a1 = 1.0 * a;
    b1 = 1.0 * b + 0.0;
    CHECK(a1 == a);
    CHECK(b1 == b);
}

TEST_CASE("monotone modulation of the transition and write terms") {
    // increasing R strictly increases every abar entry (A < 0);
    // increasing E strictly increases ||B_k|| when B0 != 0
    Rng rng(7);
    SsmParams<double> p;
    p.init(2, 3, rng);
    ScanSequence<double> seq = random_sequence<double>(rng, 6, 2, true);

    auto abar_of = [&](double r_shift) {
        ScanSequence<double> s = seq;
        for (std::size_t t = 0; t < 6; ++t)
            s.retain[t] = std::min(0.95, s.retain[t] * 0.5 + r_shift);
        ScanCache<double> k;
        selective_scan_seq(s, p, &k);
        return k.abar;
    };
    auto low = abar_of(0.0);
    auto high = abar_of(0.3);
    for (std::size_t i = 0; i < low.numel(); ++i) CHECK(high[i] > low[i]);

    auto bnorm_of = [&](double e_shift) {
        ScanSequence<double> s = seq;
        for (std::size_t t = 0; t < 6; ++t) s.enhance[t] += e_shift;
        ScanCache<double> k;
        selective_scan_seq(s, p, &k);
        double norm = 0;
        for (std::size_t i = 0; i < k.bmod.numel(); ++i) norm += k.bmod[i] * k.bmod[i];
        return norm;
    };
    CHECK(bnorm_of(0.5) > bnorm_of(0.0));
}

TEST_CASE("boundary and interior timesteps are distinguishable by construction") {
    // step map: boundary pixels P_b = 1, interior P_b = 0, mu_R = 0.8 and a
    // position-constant delta0 -> mean ratio exactly 1 / (1 - mu_R) = 5
    Rng rng(9);
    const std::size_t L = 64, C = 3;
    SsmParams<double> p;
    p.init(C, 2, rng);
    p.delta_w.v.fill(0.0);  // position-constant delta0

    ScanSequence<double> seq = random_sequence<double>(rng, L, C, true);
    const double mu_r = 0.8;
    for (std::size_t t = 0; t < L; ++t) {
        const bool boundary = t % 7 == 0;
        const double pb = boundary ? 1.0 : 0.0;
        seq.retain[t] = mu_r * (1.0 - pb);
        seq.enhance[t] = 1.2 * pb;
    }
    ScanCache<double> k;
    selective_scan_seq(seq, p, &k);
    double mean_b = 0, mean_i = 0;
    std::size_t nb = 0, ni = 0;
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) {
            if (t % 7 == 0) {
                mean_b += k.delta.at(t, c);
                ++nb;
            } else {
                mean_i += k.delta.at(t, c);
                ++ni;
            }
        }
    mean_b /= static_cast<double>(nb);
    mean_i /= static_cast<double>(ni);
    CHECK(mean_b / mean_i == Catch::Approx(5.0).margin(1e-9));
}

TEST_CASE("stability: bounded tokens give bounded states") {
    Rng rng(19);
    SsmParams<double> p;
    p.init(2, 4, rng);
    ScanSequence<double> seq;
    seq.tokens = Tensor<double>({2048, 2});
    for (std::size_t i = 0; i < seq.tokens.numel(); ++i)
        seq.tokens[i] = std::sin(0.37 * static_cast<double>(i)) * 3.0;
    ScanCache<double> k;
    selective_scan_seq(seq, p, &k);
    CHECK(all_finite(k.h));
    double mx = 0;
    for (std::size_t i = 0; i < k.h.numel(); ++i) mx = std::max(mx, std::abs(k.h[i]));
    CHECK(mx < 1e4);
    for (std::size_t i = 0; i < k.abar.numel(); ++i) CHECK(k.abar[i] < 1.0);
}

TEST_CASE("scan adjoint matches the finite-difference oracle") {
    Rng rng(501);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t L = 3 + rng.below(14);  // <= 16
        const std::size_t C = 1 + rng.below(3);
        const std::size_t N = 1 + rng.below(4);
        const bool modulated = trial % 2 == 0;
        SsmParams<double> p;
        p.init(C, N, rng, 0.3);
        auto seq = random_sequence<double>(rng, L, C, modulated);
        auto probe = Tensor<double>::randn({L, C}, rng);

        auto objective = [&](SsmParams<double>& pp, const ScanSequence<double>& ss) {
            auto y = selective_scan_seq(ss, pp);
            double s = 0;
            for (std::size_t i = 0; i < y.numel(); ++i) s += probe[i] * y[i];
            return s;
        };

        ScanCache<double> cache;
        selective_scan_seq(seq, p, &cache);
        auto grads = scan_backward(seq, p, cache, probe);

        auto fd_tok = finite_diff_grad(
            [&](const Tensor<double>& t) {
                ScanSequence<double> s = seq;
                s.tokens = t;
                return objective(p, s);
            },
            seq.tokens, 1e-5);
        INFO("trial " << trial << " tokens");
        CHECK(relative_error(grads.tokens, fd_tok) < 1e-4);

        if (modulated) {
            auto fd_r = finite_diff_grad(
                [&](const Tensor<double>& t) {
                    ScanSequence<double> s = seq;
                    s.retain = t;
                    return objective(p, s);
                },
                seq.retain, 1e-5);
            CHECK(relative_error(grads.retain, fd_r) < 1e-4);
            auto fd_e = finite_diff_grad(
                [&](const Tensor<double>& t) {
                    ScanSequence<double> s = seq;
                    s.enhance = t;
                    return objective(p, s);
                },
                seq.enhance, 1e-5);
            CHECK(relative_error(grads.enhance, fd_e) < 1e-4);
        }

        p.visit("s", [&](const std::string& name, Param<double>& prm) {
            auto saved = prm.v;
            auto fdg = finite_diff_grad(
                [&](const Tensor<double>& t) {
                    prm.v = t;
                    double s = objective(p, seq);
                    prm.v = saved;
                    return s;
                },
                saved, 1e-5);
            INFO("trial " << trial << " param " << name);
            CHECK(relative_error(prm.g, fdg) < 1e-4);
        });
    }
}

TEST_CASE("dead output paths give zero gradients") {
    Rng rng(61);
    const std::size_t L = 6, C = 2, N = 3;
    SsmParams<double> p;
    p.init(C, N, rng);
    auto seq = random_sequence<double>(rng, L, C, true);
    auto gy = Tensor<double>::randn({L, C}, rng);

    // C = 0 and D = 0: no path from tokens to outputs
    p.c_proj.v.fill(0.0);
    p.skip.v.fill(0.0);
    ScanCache<double> k;
    selective_scan_seq(seq, p, &k);
    auto g = scan_backward(seq, p, k, gy);
    for (std::size_t i = 0; i < g.tokens.numel(); ++i) CHECK(g.tokens[i] == 0.0);

    // B0 = 0 annihilates the enhance chain
    SsmParams<double> p2;
    p2.init(C, N, rng);
    p2.b_proj.v.fill(0.0);
    ScanCache<double> k2;
    selective_scan_seq(seq, p2, &k2);
    auto g2 = scan_backward(seq, p2, k2, gy);
    for (std::size_t t = 0; t < L; ++t) CHECK(g2.enhance[t] == 0.0);
}

TEST_CASE("scan backward without a cache is a state error") {
    Rng rng(1);
    SsmParams<double> p;
    p.init(1, 1, rng);
    ScanSequence<double> seq;
    seq.tokens = Tensor<double>({2, 1}, 1.0);
    ScanCache<double> empty;
    Tensor<double> gy({2, 1}, 1.0);
    CHECK_THROWS_AS(scan_backward(seq, p, empty, gy), StateError);
}
