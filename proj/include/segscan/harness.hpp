#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "segscan/checkpoint.hpp"
#include "segscan/config.hpp"
#include "segscan/loss.hpp"
#include "segscan/net.hpp"
#include "segscan/optim.hpp"
#include "segscan/synth.hpp"

namespace segscan {

// Training/evaluation harness: deterministic single-logical-stream training
// with per-step JSON-line logging, held-out evaluation and checkpointing.

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch = 4;
    float lr = 1e-4f;
    float weight_decay = 0.01f;
    float dice_w = 1.0f;
    float ce_w = 1.0f;
    std::vector<float> ds_weights = {1.0f, 0.5f, 0.25f};  // coarse to fine
    std::size_t eval_every = 50;
    float target_mdice = 0.0f;  // > 0 enables early stopping
    std::size_t n_train = 128;
    std::size_t n_val = 32;
    std::size_t image_size = 64;
    std::uint64_t seed = 42;
    std::size_t threads = 1;

    static TrainConfig from_config(const Config& c) {
        TrainConfig t;
        t.steps = c.get_size("train.steps", t.steps);
        t.batch = c.get_size("train.batch", t.batch);
        t.lr = static_cast<float>(c.get_num("train.lr", t.lr));
        t.weight_decay = static_cast<float>(c.get_num("train.weight_decay", t.weight_decay));
        t.dice_w = static_cast<float>(c.get_num("train.dice_weight", t.dice_w));
        t.ce_w = static_cast<float>(c.get_num("train.ce_weight", t.ce_w));
        auto ws = c.get_list("train.ds_weights", {1.0, 0.5, 0.25});
        t.ds_weights.assign(ws.begin(), ws.end());
        t.eval_every = c.get_size("train.eval_every", t.eval_every);
        t.target_mdice = static_cast<float>(c.get_num("train.target_mdice", 0.0));
        t.n_train = c.get_size("data.n_train", t.n_train);
        t.n_val = c.get_size("data.n_val", t.n_val);
        t.image_size = c.get_size("data.image_size", t.image_size);
        t.seed = static_cast<std::uint64_t>(c.get_size("seed", 42));
        t.threads = c.get_size("threads", 1);
        if (t.lr < 0) throw ConfigError("train.lr must be >= 0");
        if (t.batch == 0) throw ConfigError("train.batch must be positive");
        return t;
    }
};

// each index writes only its own outputs, so the join is deterministic
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            f(i);
        }
    };
    std::vector<std::thread> pool;
    const std::size_t use = std::min(threads, n);
    pool.reserve(use);
    for (std::size_t t = 0; t < use; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

inline LabelMask predict_mask(ToyNet<float>& net, const SynthSample& sample,
                              typename ToyNet<float>::Fwd& fwd) {
    auto logits = net.forward(sample.image, fwd);
    const Tensor<float>& fine = logits.back();
    const std::size_t K = fine.dim(0), n = fine.dim(1) * fine.dim(2);
    LabelMask pred;
    pred.height = fine.dim(1);
    pred.width = fine.dim(2);
    pred.num_classes = K;
    pred.labels.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t best = 0;
        float bv = fine[i];
        for (std::size_t k = 1; k < K; ++k)
            if (fine[k * n + i] > bv) {
                bv = fine[k * n + i];
                best = static_cast<std::uint16_t>(k);
            }
        pred.labels[i] = best;
    }
    return pred;
}

// mean over images of the per-image foreground macro means
inline std::pair<double, double> evaluate_split(ToyNet<float>& net,
                                                const std::vector<SynthSample>& split,
                                                std::size_t threads = 1) {
    if (split.empty()) return {0.0, 0.0};
    std::vector<double> dices(split.size()), ious(split.size());
    parallel_for(split.size(), threads, [&](std::size_t i) {
        typename ToyNet<float>::Fwd fwd;
        auto pred = predict_mask(net, split[i], fwd);
        auto m = evaluate_masks(pred, split[i].mask);
        dices[i] = m.mdice;
        ious[i] = m.miou;
    });
    double sd = 0, si = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        sd += dices[i];
        si += ious[i];
    }
    return {sd / static_cast<double>(split.size()), si / static_cast<double>(split.size())};
}

struct TrainResult {
    double final_mdice = 0.0, final_miou = 0.0;
    double best_mdice = 0.0;
    std::size_t steps_run = 0;
    double final_loss = 0.0;
    std::vector<std::pair<std::size_t, double>> eval_curve;
    std::string checkpoint_dir, log_path;
};

inline void export_split_pgm(const std::vector<SynthSample>& split, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < split.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s/img_%03zu.pgm", dir.c_str(), i);
        const auto& img = split[i].image;
        std::vector<unsigned char> px(img.numel());
        for (std::size_t j = 0; j < img.numel(); ++j)
            px[j] = static_cast<unsigned char>(clip_scalar(img[j], 0.0f, 1.0f) * 255.0f + 0.5f);
        save_pgm(name, px, img.dim(2), img.dim(1));
        std::snprintf(name, sizeof(name), "%s/msk_%03zu.pgm", dir.c_str(), i);
        std::vector<unsigned char> mp(split[i].mask.labels.size());
        for (std::size_t j = 0; j < mp.size(); ++j)
            mp[j] = static_cast<unsigned char>(split[i].mask.labels[j]);
        save_pgm(name, mp, split[i].mask.width, split[i].mask.height);
    }
}

inline std::vector<SynthSample> load_split_pgm(const std::string& dir, std::size_t classes = 4) {
    namespace fs = std::filesystem;
    std::vector<SynthSample> out;
    for (std::size_t i = 0;; ++i) {
        char img[64], msk[64];
        std::snprintf(img, sizeof(img), "img_%03zu.pgm", i);
        std::snprintf(msk, sizeof(msk), "msk_%03zu.pgm", i);
        const fs::path pimg = fs::path(dir) / img;
        const fs::path pmsk = fs::path(dir) / msk;
        if (!fs::exists(pimg) || !fs::exists(pmsk)) break;
        std::size_t w = 0, h = 0;
        auto px = load_pgm(pimg.string(), w, h);
        SynthSample s;
        s.image = Tensor<float>({1, h, w});
        for (std::size_t j = 0; j < px.size(); ++j)
            s.image[j] = static_cast<float>(px[j]) / 255.0f;
        std::size_t mw = 0, mh = 0;
        auto mp = load_pgm(pmsk.string(), mw, mh);
        if (mw != w || mh != h) throw IoError("image/mask size mismatch in " + dir);
        s.mask.height = mh;
        s.mask.width = mw;
        s.mask.num_classes = classes;
        s.mask.labels.assign(mp.begin(), mp.end());
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("no img_NNN.pgm/msk_NNN.pgm pairs found in " + dir);
    return out;
}

// One full training run. Writes log.jsonl, checkpoint/ and val/ under
// out_dir (when non-empty) and returns the summary.
inline TrainResult train_model(const Config& cfg, const std::string& out_dir,
                               std::ostream* progress = nullptr) {
    const auto net_cfg = NetConfig<float>::from_config(cfg);
    const auto tc = TrainConfig::from_config(cfg);
    if (tc.ds_weights.size() != 3)
        throw ConfigError("train.ds_weights must list 3 levels (coarse,mid,fine)");

    ToyNet<float> net;
    net.init(net_cfg);

    auto train_set = synth_dataset(tc.seed, tc.n_train, tc.image_size);
    auto val_set = synth_dataset(tc.seed ^ 0x76a1ee5ULL, tc.n_val, tc.image_size);

    std::ofstream log;
    TrainResult res;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        res.log_path = out_dir + "/log.jsonl";
        log.open(res.log_path);
        if (!log) throw IoError("cannot open log " + res.log_path);
        log.precision(9);  // full float round trip so trajectories compare bit-for-bit
        log << "{\"config_hash\":\"" << std::hex << cfg.hash() << std::dec
            << "\",\"params\":" << net.param_count() << "}\n";
        export_split_pgm(val_set, out_dir + "/val");
        std::ofstream cfg_out(out_dir + "/config.used");
        cfg_out << cfg.dump();
    }

    AdamW<float> opt(tc.lr, tc.weight_decay);
    Rng shuffle_rng(tc.seed ^ 0x58177f1ed1ULL);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // trigger reshuffle on first use

    typename ToyNet<float>::Fwd fwd;
    const float inv_batch = 1.0f / static_cast<float>(tc.batch);
    for (std::size_t step = 1; step <= tc.steps; ++step) {
        net.zero_grad();
        float loss = 0.0f;
        for (std::size_t b = 0; b < tc.batch; ++b) {
            if (cursor >= order.size()) {
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[shuffle_rng.below(i)]);
                cursor = 0;
            }
            const auto& sample = train_set[order[cursor++]];
            auto logits = net.forward(sample.image, fwd);
            auto lr_res = dice_ce_loss(logits, sample.mask, tc.ds_weights, tc.dice_w, tc.ce_w);
            loss += lr_res.value * inv_batch;
            for (auto& g : lr_res.grads)
                for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= inv_batch;
            net.backward(fwd, lr_res.grads);
        }
        if (!std::isfinite(loss)) {
            if (log) log << "{\"step\":" << step << ",\"event\":\"nan_abort\"}\n";
            throw StateError("loss became non-finite at step " + std::to_string(step) +
                             "; aborting with diagnostics in the log");
        }
        const float lr_now = cosine_lr(tc.lr, step - 1, tc.steps);
        opt.begin_step(lr_now);
        net.visit([&](const std::string& name, Param<float>& p) { opt.update(name, p); });
        net.project();
        res.final_loss = loss;
        res.steps_run = step;

        if (log) log << "{\"step\":" << step << ",\"loss\":" << loss << ",\"lr\":" << lr_now << "}\n";

        if (tc.eval_every && (step % tc.eval_every == 0 || step == tc.steps)) {
            auto [mdice, miou] = evaluate_split(net, val_set, tc.threads);
            res.final_mdice = mdice;
            res.final_miou = miou;
            res.best_mdice = std::max(res.best_mdice, mdice);
            res.eval_curve.emplace_back(step, mdice);
            if (log)
                log << "{\"step\":" << step << ",\"val_mdice\":" << mdice
                    << ",\"val_miou\":" << miou << "}\n";
            if (progress)
                (*progress) << "step " << step << " loss " << loss << " val_mdice " << mdice
                            << "\n";
            if (tc.target_mdice > 0 && mdice >= tc.target_mdice) break;
        }
    }

    if (!out_dir.empty()) {
        res.checkpoint_dir = out_dir + "/checkpoint";
        save_checkpoint(res.checkpoint_dir, net);
    }
    return res;
}

// ---------------------------------------------------------------------------
// scan micro-benchmark
// ---------------------------------------------------------------------------

struct BenchResult {
    double seq_ns_per_token = 0.0;
    double par_ns_per_token = 0.0;
};

inline BenchResult bench_scan(std::size_t len, std::size_t state, std::size_t channels,
                              std::size_t reps) {
    Rng rng(1234);
    SsmParams<float> p;
    p.init(channels, state, rng, 0.5f);
    ScanSequence<float> seq;
    seq.tokens = Tensor<float>::randn({len, channels}, rng);
    volatile float sink = 0.0f;

    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    for (std::size_t r = 0; r < reps; ++r) {
        auto y = selective_scan_seq(seq, p);
        sink = sink + y[0];
    }
    const auto t1 = clock::now();
    for (std::size_t r = 0; r < reps; ++r) {
        auto y = selective_scan_parallel(seq, p);
        sink = sink + y[0];
    }
    const auto t2 = clock::now();

    const double tokens = static_cast<double>(len) * static_cast<double>(reps);
    BenchResult b;
    b.seq_ns_per_token =
        static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()) / tokens;
    b.par_ns_per_token =
        static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t2 - t1).count()) / tokens;
    return b;
}

// ---------------------------------------------------------------------------
// report-time probe maps from the finest boundary-aware block
// ---------------------------------------------------------------------------

struct ProbeMaps {
    Tensor<float> m, pb, r, e, w_ssm;
};

inline ProbeMaps probe_maps(ToyNet<float>& net, const SynthSample& sample) {
    typename ToyNet<float>::Fwd fwd;
    net.forward(sample.image, fwd);
    if (!net.cfg.basm_enabled)
        throw StateError("probe maps require basm.enabled = on");
    ProbeMaps maps;
    maps.m = fwd.basm0.guid.m;
    maps.pb = fwd.basm0.post.re.pb;
    maps.r = fwd.basm0.post.re.r;
    maps.e = fwd.basm0.post.re.e;
    maps.w_ssm = fwd.basm0.fusion.w_ssm;
    return maps;
}

}  // namespace segscan
