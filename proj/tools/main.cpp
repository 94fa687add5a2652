// Command-line harness: training, evaluation, sweeps, scan benchmarking,
// gradient verification and report generation for the segscan library.
//
// Exit codes: 0 ok, 1 invariant/test failure, 2 configuration error,
// 3 I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "segscan/checkpoint.hpp"
#include "segscan/gradcheck_suite.hpp"
#include "segscan/harness.hpp"
#include "segscan/metrics.hpp"
#include "segscan/net.hpp"
#include "segscan/synth.hpp"

using json = nlohmann::json;
using namespace segscan;

namespace {

Config load_run_config(const std::string& explicit_path, const std::string& checkpoint_dir) {
    namespace fs = std::filesystem;
    if (!explicit_path.empty()) return Config::from_file(explicit_path);
    for (const auto& candidate :
         {fs::path(checkpoint_dir) / "config.used", fs::path(checkpoint_dir).parent_path() / "config.used"}) {
        if (fs::exists(candidate)) return Config::from_file(candidate.string());
    }
    return Config();  // defaults
}

int cmd_gradcheck() {
    auto rep = run_gradcheck_suite();
    for (const auto& e : rep.entries)
        std::cout << (e.rel_err < 1e-4 ? "[ok]   " : "[FAIL] ") << e.group << "  rel_err=" << e.rel_err
                  << "\n";
    std::cout << "worst relative error: " << rep.worst << " (tolerance 1e-4)\n";
    if (!rep.pass()) {
        std::cerr << "gradient check failed\n";
        return 1;
    }
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    Config cfg = Config::from_file(config_path);
    auto res = train_model(cfg, out_dir, &std::cerr);
    json j{{"steps", res.steps_run},
           {"final_loss", res.final_loss},
           {"final_mdice", res.final_mdice},
           {"final_miou", res.final_miou},
           {"best_mdice", res.best_mdice},
           {"checkpoint", res.checkpoint_dir},
           {"log", res.log_path}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& config_path, const std::string& out_path) {
    Config cfg = load_run_config(config_path, checkpoint);
    ToyNet<float> net;
    net.init(NetConfig<float>::from_config(cfg));
    load_checkpoint(checkpoint, net);
    auto split = load_split_pgm(data_dir);

    std::ofstream out_file;
    std::ostream* os = &std::cout;
    if (!out_path.empty()) {
        out_file.open(out_path);
        if (!out_file) throw IoError("cannot open " + out_path);
        os = &out_file;
    }

    double sum_dice = 0, sum_iou = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        typename ToyNet<float>::Fwd fwd;
        auto pred = predict_mask(net, split[i], fwd);
        auto m = evaluate_masks(pred, split[i].mask);
        char image_name[32];
        std::snprintf(image_name, sizeof(image_name), "img_%03zu.pgm", i);
        for (std::size_t c = 1; c < m.per_class.size(); ++c) {
            json line{{"image", image_name},        {"class", c},
                      {"dice", m.per_class[c].dice}, {"iou", m.per_class[c].iou},
                      {"hd95", m.per_class[c].hd95}, {"asd", m.per_class[c].asd}};
            (*os) << line.dump() << "\n";
        }
        sum_dice += m.mdice;
        sum_iou += m.miou;
    }
    json summary{{"images", split.size()},
                 {"mdice", sum_dice / static_cast<double>(split.size())},
                 {"miou", sum_iou / static_cast<double>(split.size())}};
    std::cerr << summary.dump(2) << "\n";
    return 0;
}

int cmd_sweep(const std::string& param, const std::string& values_csv,
              const std::string& config_path, const std::string& out_dir) {
    if (param != "mu_R" && param != "mu_E" && param != "G")
        throw ConfigError("sweep --param must be one of mu_R, mu_E, G");
    Config base = config_path.empty() ? Config() : Config::from_file(config_path);
    std::vector<double> values;
    {
        Config tmp;
        tmp.set("v", values_csv);
        values = tmp.get_list("v", {});
    }
    json table = json::array();
    std::cout << param << "  mDice   mIoU\n";
    for (double v : values) {
        Config cfg = base;
        if (param == "mu_R") {
            cfg.set("posterior.mu_R", std::to_string(v));
        } else if (param == "mu_E") {
            cfg.set("posterior.mu_E", std::to_string(v));
        } else {
            if (v <= 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
                throw ConfigError("G values must be positive integers");
            cfg.set("cmsa.groups", std::to_string(static_cast<std::size_t>(v)));
        }
        std::string run_dir;
        if (!out_dir.empty()) {
            std::ostringstream oss;
            oss << out_dir << "/" << param << "_" << v;
            run_dir = oss.str();
        }
        auto res = train_model(cfg, run_dir, &std::cerr);
        std::cout << v << "   " << res.final_mdice << "   " << res.final_miou << "\n";
        table.push_back(json{{"value", v},
                             {"mdice", res.final_mdice},
                             {"miou", res.final_miou},
                             {"steps", res.steps_run}});
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream os(out_dir + "/sweep.json");
        os << json{{"param", param}, {"rows", table}}.dump(2) << "\n";
    }
    std::cout << json{{"param", param}, {"rows", table}}.dump(2) << "\n";
    return 0;
}

int cmd_scan_bench(std::size_t len, std::size_t state, std::size_t channels, std::size_t reps) {
    auto b = bench_scan(len, state, channels, reps);
    json j{{"len", len},
           {"state", state},
           {"channels", channels},
           {"reps", reps},
           {"seq_ns_per_token", b.seq_ns_per_token},
           {"par_ns_per_token", b.par_ns_per_token}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_report(const std::string& log_path, const std::string& checkpoint,
               const std::string& config_path, const std::string& out_dir, std::uint64_t seed) {
    std::ifstream is(log_path);
    if (!is) throw IoError("cannot open log " + log_path);

    json summary;
    summary["log"] = log_path;
    std::string line;
    std::size_t steps = 0;
    double last_loss = 0, last_mdice = -1, last_miou = -1;
    std::string config_hash;
    std::size_t params_logged = 0;
    bool any = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;
        any = true;
        if (j.contains("config_hash")) config_hash = j["config_hash"];
        if (j.contains("params")) params_logged = j["params"];
        if (j.contains("step")) steps = std::max(steps, j["step"].get<std::size_t>());
        if (j.contains("loss")) last_loss = j["loss"];
        if (j.contains("val_mdice")) last_mdice = j["val_mdice"];
        if (j.contains("val_miou")) last_miou = j["val_miou"];
    }
    if (!any) {
        summary["steps"] = "no data";
        summary["final_loss"] = "no data";
        summary["val_mdice"] = "no data";
    } else {
        summary["steps"] = steps;
        summary["config_hash"] = config_hash;
        summary["params_logged"] = params_logged;
        summary["final_loss"] = last_loss;
        if (last_mdice >= 0) {
            summary["val_mdice"] = last_mdice;
            summary["val_miou"] = last_miou;
        } else {
            summary["val_mdice"] = "no data";
        }
    }

    auto bench = bench_scan(1024, 8, 4, 2);
    summary["scan_bench"] = {{"len", 1024},
                             {"seq_ns_per_token", bench.seq_ns_per_token},
                             {"par_ns_per_token", bench.par_ns_per_token}};

    if (!checkpoint.empty()) {
        const std::size_t n = checkpoint_param_count(checkpoint);
        summary["params_manifest"] = n;
        if (params_logged != 0) summary["params_match"] = (n == params_logged);

        Config cfg = load_run_config(config_path, checkpoint);
        ToyNet<float> net;
        net.init(NetConfig<float>::from_config(cfg));
        load_checkpoint(checkpoint, net);
        auto sample = synth_dataset(seed, 1, 64)[0];
        auto maps = probe_maps(net, sample);
        std::filesystem::create_directories(out_dir);
        const float mu_r = net.basm0.posterior.retain_scale.v[0];
        const float mu_e = net.basm0.posterior.enhance_scale.v[0];
        auto scaled = [](const Tensor<float>& t, float s) {
            Tensor<float> o(t.shape());
            for (std::size_t i = 0; i < t.numel(); ++i) o[i] = s > 0 ? t[i] / s : t[i];
            return o;
        };
        save_pgm(out_dir + "/guidance_m.pgm", to_grey255(maps.m), maps.m.dim(1), maps.m.dim(0));
        save_pgm(out_dir + "/posterior_pb.pgm", to_grey255(maps.pb), maps.pb.dim(1), maps.pb.dim(0));
        save_pgm(out_dir + "/retain_r.pgm", to_grey255(scaled(maps.r, mu_r)), maps.r.dim(1), maps.r.dim(0));
        save_pgm(out_dir + "/enhance_e.pgm", to_grey255(scaled(maps.e, mu_e)), maps.e.dim(1), maps.e.dim(0));
        save_pgm(out_dir + "/weight_ssm.pgm", to_grey255(maps.w_ssm), maps.w_ssm.dim(1), maps.w_ssm.dim(0));
        summary["heatmaps"] = out_dir;
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream os(out_dir + "/summary.json");
        os << summary.dump(2) << "\n";
    }
    std::cout << summary.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"boundary-aware selective-scan segmentation toolkit"};
    app.require_subcommand(1);

    auto* grad = app.add_subcommand("gradcheck", "verify hand-derived gradients against finite differences");

    std::string train_config, train_out = "runs/train";
    auto* train = app.add_subcommand("train", "train the desk-scale model on synthetic data");
    train->add_option("--config", train_config, "key = value config file")->required();
    train->add_option("--out", train_out, "output directory");

    std::string eval_ckpt, eval_data, eval_config, eval_out;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a PGM dataset directory");
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--data", eval_data, "directory with img_NNN.pgm / msk_NNN.pgm pairs")->required();
    eval->add_option("--config", eval_config, "config override");
    eval->add_option("--out", eval_out, "write JSON-lines metrics here instead of stdout");

    std::string sweep_param, sweep_values, sweep_config, sweep_out;
    auto* sweep = app.add_subcommand("sweep", "train across a hyperparameter row (mu_R, mu_E or G)");
    sweep->add_option("--param", sweep_param, "mu_R | mu_E | G")->required();
    sweep->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep->add_option("--config", sweep_config, "base config file");
    sweep->add_option("--out", sweep_out, "output directory for runs and sweep.json");

    std::size_t bench_len = 4096, bench_state = 16, bench_channels = 4, bench_reps = 3;
    auto* bench = app.add_subcommand("scan-bench", "time sequential vs parallel selective scans");
    bench->add_option("--len", bench_len, "sequence length");
    bench->add_option("--state", bench_state, "state size N");
    bench->add_option("--channels", bench_channels, "channels per token");
    bench->add_option("--reps", bench_reps, "repetitions");

    std::string report_log, report_ckpt, report_config, report_out = "report";
    std::uint64_t report_seed = 7;
    auto* report = app.add_subcommand("report", "summarise a training log; render probe heatmaps");
    report->add_option("--log", report_log, "log.jsonl from a training run")->required();
    report->add_option("--checkpoint", report_ckpt, "checkpoint directory for heatmaps/param recount");
    report->add_option("--config", report_config, "config override");
    report->add_option("--out", report_out, "output directory");
    report->add_option("--seed", report_seed, "seed of the probe sample");

    try {
        app.parse(argc, argv);
        if (grad->parsed()) return cmd_gradcheck();
        if (train->parsed()) return cmd_train(train_config, train_out);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_config, eval_out);
        if (sweep->parsed()) return cmd_sweep(sweep_param, sweep_values, sweep_config, sweep_out);
        if (bench->parsed()) return cmd_scan_bench(bench_len, bench_state, bench_channels, bench_reps);
        if (report->parsed())
            return cmd_report(report_log, report_ckpt, report_config, report_out, report_seed);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems are configuration errors
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}
