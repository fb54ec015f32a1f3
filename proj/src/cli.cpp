#include "mdda/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mdda/checkpoint.hpp"
#include "mdda/complexity.hpp"
#include "mdda/gradcheck.hpp"
#include "mdda/image_io.hpp"
#include "mdda/metrics.hpp"
#include "mdda/runconfig.hpp"

namespace mdda {

namespace fs = std::filesystem;

// Stable per-index seed derivation shared by data assembly and make-data.
static uint64_t splitmix_seed(uint64_t seed, uint64_t index) {
    uint64_t s = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    return splitmix64(s);
}

namespace {

struct CommonArgs {
    std::string config_path;
    std::string preset;
    std::vector<std::string> overrides;  // key=value
    int threads = -1;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_config = true) {
    if (with_config) {
        cmd->add_option("--config", args.config_path, "run configuration file");
        cmd->add_option("--preset", args.preset, "built-in config: full, small or tiny")
            ->check(CLI::IsMember({"full", "small", "tiny"}));
    }
    cmd->add_option("--set", args.overrides, "override a config key, e.g. --set sigma=50");
    cmd->add_option("--threads", args.threads, "worker threads (1 = fully deterministic ordering)");
    cmd->add_option("--seed", args.seed, "override the run seed");
}

void apply_preset(RunConfig& cfg, const std::string& preset) {
    if (preset.empty()) return;
    if (preset == "full") {
        cfg.set("base_dim", "60");
        cfg.set("mdab_counts", "3,6,6,6,6,3");
        cfg.set("etb_count", "10");
    } else if (preset == "small") {
        cfg.set("base_dim", "48");
        cfg.set("mdab_counts", "2,6,8,4,3,2");
        cfg.set("etb_count", "10");
    } else if (preset == "tiny") {
        cfg.set("base_dim", "8");
        cfg.set("mdab_counts", "1,1,1,1,1,1");
        cfg.set("etb_count", "2");
    }
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? RunConfig() : RunConfig::from_file(args.config_path);
    apply_preset(cfg, args.preset);
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    if (args.threads > 0) cfg.set("threads", std::to_string(args.threads));
    if (cfg.threads() > 0) set_threads(cfg.threads());
    return cfg;
}

std::string basename_of(const std::string& path) { return fs::path(path).filename().string(); }

// Loads pre-generated pairs (make-data layout: <dir>/degraded + <dir>/clean).
std::vector<TrainPair> load_pairs(const std::string& dir) {
    const auto files = list_images(dir + "/degraded");
    if (files.empty()) throw IoError("no images in '" + dir + "/degraded'");
    std::vector<TrainPair> pairs;
    for (const auto& f : files) {
        const std::string name = basename_of(f);
        const std::string clean_path = dir + "/clean/" + name;
        if (!fs::exists(clean_path)) throw IoError("no clean counterpart for '" + name + "'");
        pairs.push_back(TrainPair{load_image(f), load_image(clean_path)});
    }
    return pairs;
}

// Builds the paired patch set from a directory of clean images.
std::vector<TrainPair> build_pairs(const RunConfig& cfg) {
    if (!cfg.get("data_dir").empty()) return load_pairs(cfg.get("data_dir"));
    const std::string dir = cfg.get("clean_dir");
    if (dir.empty()) throw ConfigError("either data_dir or clean_dir is required to assemble training data");
    const auto files = list_images(dir);
    if (files.empty()) throw IoError("no PNG/PPM images in '" + dir + "'");
    DegradeSpec spec = cfg.degrade_spec();
    std::vector<TrainPair> pairs;
    uint64_t patch_index = 0;
    for (size_t i = 0; i < files.size(); ++i) {
        auto img = load_image(files[i]);
        auto patches = extract_patches(img, cfg.patch_size(), cfg.patches_per_image(),
                                       splitmix_seed(cfg.seed(), i));
        for (auto& p : patches) {
            DegradeSpec s = spec;
            s.rng_seed = splitmix_seed(cfg.seed() ^ 0x5eedu, patch_index++);
            pairs.push_back(TrainPair{degrade(p.data, s), p.data});
        }
    }
    return pairs;
}

int do_train(const CommonArgs& common, const std::string& run_dir_arg, const std::string& resume) {
    RunConfig cfg = resolve_config(common);
    const std::string run_dir = run_dir_arg.empty() ? "run" : run_dir_arg;
    fs::create_directories(run_dir);
    fs::create_directories(run_dir + "/checkpoints");
    fs::create_directories(run_dir + "/outputs");
    cfg.write(run_dir + "/effective-config");

    auto pairs = build_pairs(cfg);
    const int holdout_n = std::min<int>(cfg.holdout_count(), static_cast<int>(pairs.size()) - 1);
    std::vector<TrainPair> holdout(pairs.end() - holdout_n, pairs.end());
    pairs.resize(pairs.size() - holdout_n);

    Model<float> model = build_model<float>(cfg.model_config(), cfg.seed());
    AdamW<float> opt;
    opt.init(model.params);
    if (!resume.empty()) {
        auto loaded = load_checkpoint(resume);
        model = std::move(loaded.model);
        opt = std::move(loaded.opt);
    }

    TrainOptions opts;
    opts.steps = cfg.steps();
    opts.batch = cfg.batch();
    opts.seed = cfg.seed();
    opts.sched = cfg.schedule(opt.step + cfg.steps());
    opts.eval_every = cfg.eval_every();
    opts.checkpoint_every = cfg.checkpoint_every();
    opts.checkpoint_dir = run_dir + "/checkpoints";

    std::cout << "training: " << pairs.size() << " pairs, " << holdout.size() << " held out, "
              << opts.steps << " steps, batch " << opts.batch << ", seed " << opts.seed << "\n";
    const auto trace = train_loop(model, opt, pairs, holdout, opts);
    write_trace_csv(trace, run_dir + "/loss.csv", false);
    save_checkpoint(model, opt, run_dir + "/checkpoints/final.ckpt");

    EvalReport report;
    for (size_t i = 0; i < holdout.size(); ++i) {
        auto restored = restore<float>(nullptr, model, holdout[i].degraded);
        char name[64];
        std::snprintf(name, sizeof name, "holdout_%03zu.png", i);
        save_image(restored, run_dir + "/outputs/" + name);
        report.entries.push_back(evaluate_pair(restored, holdout[i].clean, ChannelMode::kRgb, name));
    }
    if (!report.entries.empty()) {
        write_eval_csv(report, run_dir + "/eval.csv");
        std::cout << "holdout: mean PSNR " << report.mean_psnr() << " dB, mean SSIM "
                  << report.mean_ssim() << "\n";
    }
    if (!trace.empty()) std::cout << "final loss " << trace.back().loss << "\n";
    std::cout << "run artifacts in " << run_dir << "/\n";
    return 0;
}

int do_infer(const CommonArgs& common, const std::string& ckpt, const std::string& input,
             const std::string& output) {
    if (common.threads > 0) set_threads(common.threads);
    auto loaded = load_checkpoint(ckpt);
    const auto files = list_images(input);
    if (files.empty()) {
        std::cerr << "warning: no PNG/PPM images in '" << input << "', nothing to do\n";
        return 0;
    }
    fs::create_directories(output);
    for (const auto& f : files) {
        auto img = load_image(f);
        auto restored = restore<float>(nullptr, loaded.model, img);
        const std::string out = output + "/" + basename_of(f);
        save_image(restored, out);
        std::cout << f << " -> " << out << "\n";
    }
    return 0;
}

int do_eval(const CommonArgs& common, const std::string& restored_dir, const std::string& clean_dir,
            bool y_channel, const std::string& out_csv) {
    if (common.threads > 0) set_threads(common.threads);
    const auto files = list_images(restored_dir);
    if (files.empty()) throw IoError("no images in '" + restored_dir + "'");
    EvalReport report;
    report.mode = y_channel ? ChannelMode::kY : ChannelMode::kRgb;
    for (const auto& f : files) {
        const std::string name = basename_of(f);
        const std::string clean_path = clean_dir + "/" + name;
        if (!fs::exists(clean_path)) throw IoError("no clean counterpart for '" + name + "' in " + clean_dir);
        report.entries.push_back(
            evaluate_pair(load_image(f), load_image(clean_path), report.mode, name));
    }
    write_eval_csv(report, out_csv);
    std::printf("%zu pairs (%s): mean PSNR %.4f dB, mean SSIM %.6f\n", report.entries.size(),
                y_channel ? "Y channel" : "RGB", report.mean_psnr(), report.mean_ssim());
    std::cout << "per-image report: " << out_csv << "\n";
    return 0;
}

int do_bench(const CommonArgs& common, int res, int runs, int warmups, bool latency) {
    RunConfig cfg = resolve_config(common);
    const ModelConfig mc = cfg.model_config();
    const int64_t params = count_params(mc);
    const FlopCount fc = count_flops(mc, res, res);
    std::printf("stage layout      : %s  (dims", mc.stage_types.c_str());
    for (int d : mc.nominal_dims()) std::printf(" %d", d);
    std::printf(")\n");
    std::printf("parameters        : %lld (%.2f M)\n", static_cast<long long>(params),
                static_cast<double>(params) / 1e6);
    std::printf("flops @%dx%d     : %lld MACs (%.2f G), convention: 1 MAC = 1 FLOP,\n"
                "                    conv + linear layers only\n",
                res, res, static_cast<long long>(fc.conv_fc_macs),
                static_cast<double>(fc.conv_fc_macs) / 1e9);
    std::printf("attention matmuls : %lld MACs (%.2f G), reported separately; grand total %.2f G\n",
                static_cast<long long>(fc.attn_macs), static_cast<double>(fc.attn_macs) / 1e9,
                static_cast<double>(fc.total()) / 1e9);
    if (latency) {
        Model<float> model = build_model<float>(mc, cfg.seed());
        auto input = make_tensor<float>(1, 3, res, res);
        Rng rng(cfg.seed());
        for (float& v : input->data) v = static_cast<float>(rng.uniform());
        std::vector<double> ms;
        for (int i = 0; i < warmups + runs; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            auto out = restore<float>(nullptr, model, input);
            const auto t1 = std::chrono::steady_clock::now();
            if (i >= warmups)
                ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(ms.begin(), ms.end());
        const double median = ms[ms.size() / 2];
        std::printf("latency           : median %.2f ms (min %.2f, max %.2f) over %d runs after %d warm-ups,"
                    " threads=%d [CPU, informational]\n",
                    median, ms.front(), ms.back(), runs, warmups, effective_threads());
    }
    return 0;
}

int do_make_data(const CommonArgs& common, const std::string& clean_dir, const std::string& out_dir,
                 int patch, int count) {
    RunConfig cfg = resolve_config(common);
    if (!clean_dir.empty()) cfg.set("clean_dir", clean_dir);
    if (patch > 0) cfg.set("patch_size", std::to_string(patch));
    if (count > 0) cfg.set("patches_per_image", std::to_string(count));
    const auto files = list_images(cfg.get("clean_dir"));
    if (files.empty()) throw IoError("no PNG/PPM images in '" + cfg.get("clean_dir") + "'");
    fs::create_directories(out_dir + "/clean");
    fs::create_directories(out_dir + "/degraded");
    DegradeSpec spec = cfg.degrade_spec();

    std::ofstream manifest(out_dir + "/manifest.csv", std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest in '" + out_dir + "'");
    manifest << "# seed = " << cfg.seed() << "\n";
    manifest << "# degrade = " << degrade_kind_name(spec.kind) << "\n";
    manifest << "# spec: sigma=" << cfg.get("sigma") << " rain_count=" << cfg.get("rain_count")
             << " rain_length=" << cfg.get("rain_length") << " rain_angle=" << cfg.get("rain_angle")
             << " rain_intensity=" << cfg.get("rain_intensity") << " haze_beta=" << cfg.get("haze_beta")
             << " haze_airlight=" << cfg.get("haze_airlight") << " haze_depth=" << cfg.get("haze_depth")
             << "\n";
    manifest << "index,source,top,left,patch_seed,degraded,clean\n";

    uint64_t patch_index = 0;
    for (size_t i = 0; i < files.size(); ++i) {
        auto img = load_image(files[i]);
        auto patches = extract_patches(img, cfg.patch_size(), cfg.patches_per_image(),
                                       splitmix_seed(cfg.seed(), i));
        for (const auto& p : patches) {
            DegradeSpec s = spec;
            s.rng_seed = splitmix_seed(cfg.seed() ^ 0x5eedu, patch_index);
            auto deg = degrade(p.data, s);
            char name[32];
            std::snprintf(name, sizeof name, "%05llu.png", static_cast<unsigned long long>(patch_index));
            save_image(p.data, out_dir + "/clean/" + name);
            save_image(deg, out_dir + "/degraded/" + name);
            manifest << patch_index << "," << files[i] << "," << p.top << "," << p.left << ","
                     << s.rng_seed << ",degraded/" << name << ",clean/" << name << "\n";
            ++patch_index;
        }
    }
    std::cout << "wrote " << patch_index << " pairs to " << out_dir << "/\n";
    return 0;
}

}  // namespace

int cmd_dispatch(int argc, const char* const* argv) {
    CLI::App app{"mdda: image restoration with dynamic-attention CNN blocks and a transformer latent stage"};
    app.require_subcommand(1);

    CommonArgs train_args, infer_args, eval_args, bench_args, data_args;
    std::string run_dir, resume, ckpt, input_dir, output_dir, restored_dir, clean_dir, out_csv = "eval.csv";
    std::string md_clean, md_out;
    bool y_channel = false, no_latency = false;
    int res = 256, runs = 10, warmups = 3, md_patch = 0, md_count = 0;

    auto* train = app.add_subcommand("train", "train a model on synthetic degradations");
    add_common(train, train_args);
    train->add_option("--run-dir", run_dir, "output directory (default: run)");
    train->add_option("--resume", resume, "checkpoint to resume from");
    std::string data_dir;
    train->add_option("--data", data_dir, "pre-generated pair directory (make-data output)");

    auto* infer = app.add_subcommand("infer", "restore every image in a directory");
    add_common(infer, infer_args, false);
    infer->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    infer->add_option("--input", input_dir, "directory of degraded images")->required();
    infer->add_option("--output", output_dir, "directory for restored images")->required();

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM report over (restored, clean) pairs");
    add_common(eval, eval_args, false);
    eval->add_option("--restored", restored_dir)->required();
    eval->add_option("--clean", clean_dir)->required();
    eval->add_flag("--y-channel", y_channel, "evaluate on the Y channel (BT.601) instead of RGB");
    eval->add_option("--out", out_csv, "report CSV path");

    auto* bench = app.add_subcommand("bench", "parameter count, FLOPs and forward latency");
    add_common(bench, bench_args);
    bench->add_option("--res", res, "square input resolution (multiple of 8)");
    bench->add_option("--runs", runs, "timed runs (>= 10 recommended)");
    bench->add_option("--warmups", warmups, "untimed warm-up runs");
    bench->add_flag("--no-latency", no_latency, "skip the timed forward passes");

    auto* mkdata = app.add_subcommand("make-data", "emit paired degraded/clean patches + manifest");
    add_common(mkdata, data_args);
    mkdata->add_option("--clean", md_clean, "directory of clean source images");
    mkdata->add_option("--out", md_out, "output directory")->required();
    mkdata->add_option("--patch", md_patch, "patch size");
    mkdata->add_option("--count", md_count, "patches per source image");

    try {
        app.parse(argc, argv);
        if (train->parsed()) {
            if (!data_dir.empty()) train_args.overrides.push_back("data_dir=" + data_dir);
            return do_train(train_args, run_dir, resume);
        }
        if (infer->parsed()) return do_infer(infer_args, ckpt, input_dir, output_dir);
        if (eval->parsed()) return do_eval(eval_args, restored_dir, clean_dir, y_channel, out_csv);
        if (bench->parsed()) return do_bench(bench_args, res, runs, warmups, !no_latency);
        if (mkdata->parsed()) return do_make_data(data_args, md_clean, md_out, md_patch, md_count);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "mdda: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "mdda: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "mdda: unexpected error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace mdda
