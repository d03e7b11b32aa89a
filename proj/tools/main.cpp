#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "atvd/config.hpp"
#include "atvd/evaluate.hpp"
#include "atvd/gradcheck.hpp"
#include "atvd/training.hpp"
#include "atvd/turbulence.hpp"

namespace fs = std::filesystem;
using namespace atvd;

namespace {

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// Resolution order for every setting: command-line flag, then config-file key,
// then the profile default. Config keys are the flag names with '-' replaced
// by '_'; keys outside a subcommand's set are hard errors.
class Settings {
public:
    Settings(const CLI::App* sub, const std::string& config_path) : sub_(sub) {
        if (!config_path.empty()) cfg_ = Config::load(config_path);
    }

    template <typename V>
    V pick(const std::string& flag, const V& flag_val, const V& fallback) {
        std::string key = key_of(flag);
        allowed_.insert(key);
        V out = fallback;
        if (sub_->count(flag) > 0) {
            out = flag_val;
        } else if (cfg_.has(key)) {
            if constexpr (std::is_same_v<V, std::string>) {
                out = cfg_.get_string(key, fallback);
            } else if constexpr (std::is_same_v<V, uint64_t>) {
                out = cfg_.get_u64(key, fallback);
            } else if constexpr (std::is_same_v<V, int>) {
                out = cfg_.get_int(key, fallback);
            } else if constexpr (std::is_same_v<V, bool>) {
                out = cfg_.get_int(key, fallback ? 1 : 0) != 0;
            } else {
                out = cfg_.get_double(key, fallback);
            }
        }
        note(key, out);
        return out;
    }

    // validates leftover config keys and logs the fully resolved settings
    void finish(const std::string& subname) {
        cfg_.validate_keys(allowed_);
        log_info("resolved ", subname, ":", line_);
    }

private:
    static std::string key_of(const std::string& flag) {
        std::string key = flag.substr(flag.find_first_not_of('-'));
        for (char& c : key)
            if (c == '-') c = '_';
        return key;
    }

    template <typename V>
    void note(const std::string& key, const V& v) {
        if constexpr (std::is_same_v<V, std::string>) {
            line_ += cat(" ", key, "=", v.empty() ? "''" : v);
        } else if constexpr (std::is_same_v<V, bool>) {
            line_ += cat(" ", key, "=", v ? 1 : 0);
        } else if constexpr (std::is_same_v<V, double>) {
            line_ += cat(" ", key, "=", fmt_double(v));
        } else {
            line_ += cat(" ", key, "=", v);
        }
    }

    const CLI::App* sub_;
    Config cfg_;
    std::set<std::string> allowed_;
    std::string line_;
};

struct CommonFlags {
    std::string config;
    uint64_t seed = 0;
    int workers = 1;
    std::string profile = "desk";

    void attach(CLI::App* sub) {
        sub->add_option("--config", config, "key = value settings file");
        sub->add_option("--seed", seed, "base RNG seed");
        sub->add_option("--workers", workers, "worker thread bound (never changes results)");
        sub->add_option("--profile", profile, "hyperparameter profile")
            ->check(CLI::IsMember({"desk", "paper"}));
    }

    // resolves the shared settings; profile must come first because it picks
    // the defaults everything else falls back to
    void resolve(Settings& s) {
        profile = s.pick<std::string>("--profile", profile, "desk");
        seed = s.pick<uint64_t>("--seed", seed, 0);
        workers = s.pick<int>("--workers", workers, 1);
        require(workers >= 1, cat("workers must be >= 1, got ", workers));
    }
};

TrainConfig profile_defaults(const std::string& profile) {
    return profile == "paper" ? TrainConfig::paper() : TrainConfig::desk();
}

// train/restore/eval share the schedule and model-scale knobs
struct ModelFlags {
    int epochs = 0, iters = 0, batch = 0, crop = 0, T = 0;
    double beta_start = 0, beta_end = 0, lr_start = 0, lr_end = 0;
    double lambda_vae = 0, lambda_adv = 0, lambda_degrad = 0;
    int log_every = 0;

    void attach(CLI::App* sub) {
        sub->add_option("--epochs", epochs, "training epochs");
        sub->add_option("--iters", iters, "iterations per epoch");
        sub->add_option("--batch", batch, "batch size");
        sub->add_option("--crop", crop, "training crop size");
        sub->add_option("--T", T, "diffusion steps");
        sub->add_option("--beta-start", beta_start, "schedule start");
        sub->add_option("--beta-end", beta_end, "schedule end");
        sub->add_option("--lr-start", lr_start, "cosine LR start");
        sub->add_option("--lr-end", lr_end, "cosine LR end");
        sub->add_option("--lambda-vae", lambda_vae, "VAE loss weight");
        sub->add_option("--lambda-adv", lambda_adv, "adversarial loss weight");
        sub->add_option("--lambda-degrad", lambda_degrad, "degradation loss weight");
        sub->add_option("--log-every", log_every, "metric log interval in steps");
    }

    TrainConfig resolve(Settings& s, const std::string& profile, uint64_t seed) {
        TrainConfig base = profile_defaults(profile);
        TrainConfig out = base;
        out.epochs = s.pick<int>("--epochs", epochs, base.epochs);
        out.iters_per_epoch = s.pick<int>("--iters", iters, base.iters_per_epoch);
        out.batch_size = s.pick<int>("--batch", batch, base.batch_size);
        out.crop = s.pick<int>("--crop", crop, base.crop);
        out.T = s.pick<int>("--T", T, base.T);
        out.beta_start = s.pick<double>("--beta-start", beta_start, base.beta_start);
        out.beta_end = s.pick<double>("--beta-end", beta_end, base.beta_end);
        out.lr_start = s.pick<double>("--lr-start", lr_start, base.lr_start);
        out.lr_end = s.pick<double>("--lr-end", lr_end, base.lr_end);
        out.lambdas.l1 = s.pick<double>("--lambda-vae", lambda_vae, base.lambdas.l1);
        out.lambdas.l2 = s.pick<double>("--lambda-adv", lambda_adv, base.lambdas.l2);
        out.lambdas.l3 = s.pick<double>("--lambda-degrad", lambda_degrad, base.lambdas.l3);
        out.log_every = s.pick<int>("--log-every", log_every, base.log_every);
        out.seed = seed;
        return out;
    }
};

int cmd_simulate(const CLI::App* sub, CommonFlags& common, std::string clean_dir, std::string out,
                 int pairs, int crop, double lo, double hi, int synth, int image_size) {
    Settings s(sub, common.config);
    common.resolve(s);
    clean_dir = s.pick<std::string>("--clean-dir", clean_dir, "");
    out = s.pick<std::string>("--out", out, "");
    pairs = s.pick<int>("--pairs", pairs, 100);
    crop = s.pick<int>("--crop", crop, 32);
    lo = s.pick<double>("--d-r0-lo", lo, kDr0Lo);
    hi = s.pick<double>("--d-r0-hi", hi, kDr0Hi);
    synth = s.pick<int>("--synthesize-clean", synth, 0);
    image_size = s.pick<int>("--image-size", image_size, 64);
    s.finish("simulate");

    require(!clean_dir.empty(), "simulate: --clean-dir is required");
    require(!out.empty(), "simulate: --out is required");
    if (synth > 0) {
        write_toy_clean_images(clean_dir, synth, image_size, common.seed);
        log_info("synthesized ", synth, " clean images of size ", image_size, " in ", clean_dir);
    }
    auto records = build_dataset(clean_dir, out, pairs, lo, hi, crop, common.seed, common.workers);
    log_info("wrote ", records.size(), " pairs to ", out);
    return 0;
}

int cmd_train(const CLI::App* sub, CommonFlags& common, ModelFlags& model, std::string dataset,
              std::string ckpt_dir, std::string metrics, std::string resume,
              std::string ablation) {
    Settings s(sub, common.config);
    common.resolve(s);
    TrainConfig cfg = model.resolve(s, common.profile, common.seed);
    dataset = s.pick<std::string>("--dataset", dataset, "");
    ckpt_dir = s.pick<std::string>("--ckpt-dir", ckpt_dir, "ckpt");
    metrics = s.pick<std::string>("--metrics", metrics, "");
    resume = s.pick<std::string>("--resume", resume, "");
    ablation = s.pick<std::string>("--ablation", ablation, "none");
    s.finish("train");

    require(!dataset.empty(), "train: --dataset is required");
    require(ablation == "none" || ablation == "simple-ddpm",
            cat("train: unknown ablation '", ablation, "'"));
    cfg.ablation = ablation == "simple-ddpm";
    if (metrics.empty()) metrics = (fs::path(ckpt_dir) / "metrics.txt").string();

    TrainState<float> st = make_train_state<float>(cfg);
    if (!resume.empty()) {
        CheckpointData ck = load_checkpoint(resume);
        require(checkpoint_is_ablation(ck) == cfg.ablation,
                cat("train: checkpoint ", resume, " does not match ablation mode"));
        checkpoint_into_state(ck, st);
        log_info("resumed from ", resume, " at step ", st.step);
    }

    std::vector<LoadedRecord> data = load_dataset(dataset);
    log_info("training on ", data.size(), " pairs for ", cfg.total_steps(), " steps");
    train_loop(st, data, ckpt_dir, metrics, common.workers);
    log_info("training complete at step ", st.step);
    return 0;
}

// reconstructs model + schedule state around a checkpoint
TrainState<float> state_from_checkpoint(const std::string& path, TrainConfig cfg) {
    CheckpointData ck = load_checkpoint(path);
    cfg.ablation = checkpoint_is_ablation(ck);
    TrainState<float> st = make_train_state<float>(cfg);
    checkpoint_into_state(ck, st);
    return st;
}

int cmd_restore(const CLI::App* sub, CommonFlags& common, ModelFlags& model, std::string ckpt,
                std::string in_path, std::string out_path) {
    Settings s(sub, common.config);
    common.resolve(s);
    TrainConfig cfg = model.resolve(s, common.profile, common.seed);
    ckpt = s.pick<std::string>("--ckpt", ckpt, "");
    in_path = s.pick<std::string>("--in", in_path, "");
    out_path = s.pick<std::string>("--out", out_path, "");
    s.finish("restore");

    require(!ckpt.empty(), "restore: --ckpt is required");
    require(!in_path.empty(), "restore: --in is required");
    require(!out_path.empty(), "restore: --out is required");

    TrainState<float> st = state_from_checkpoint(ckpt, cfg);
    Image degraded = read_png(in_path);
    require(degraded.height % 2 == 0 && degraded.width % 2 == 0,
            cat("restore: image dimensions must be even, got ", degraded.height, "x",
                degraded.width));

    NoGradGuard ng;
    Tensor y = Tensor::zeros({1, 3, degraded.height, degraded.width});
    image_into_tensor(degraded, y, 0);
    Tensor c;
    if (st.cfg.ablation) {
        c = Tensor::zeros({1, st.mcfg.latent_channels, degraded.height / 2, degraded.width / 2});
    } else {
        c = st.enc.encode(y).first; // posterior mean
    }
    std::vector<Rng> rngs{Rng(Rng::derive(common.seed, {stream::sample, 0}))};
    auto eps_fn = [&](const Tensor& x, int t) {
        return st.unet.forward(x, std::vector<int>{t}, y, c);
    };
    Tensor x0 = ddpm_sample<float>(eps_fn, 1, 3, degraded.height, degraded.width, st.sched, rngs);
    write_png(out_path, image_from_tensor(x0, 0));
    log_info("restored ", in_path, " -> ", out_path);
    return 0;
}

int cmd_eval(const CLI::App* sub, CommonFlags& common, ModelFlags& model, std::string ckpt,
             std::string dataset, std::string out, int sample_batch, int patch, int n_patches) {
    Settings s(sub, common.config);
    common.resolve(s);
    TrainConfig cfg = model.resolve(s, common.profile, common.seed);
    ckpt = s.pick<std::string>("--ckpt", ckpt, "");
    dataset = s.pick<std::string>("--dataset", dataset, "");
    out = s.pick<std::string>("--out", out, "eval");
    sample_batch = s.pick<int>("--sample-batch", sample_batch, 25);
    patch = s.pick<int>("--patch", patch, 7);
    n_patches = s.pick<int>("--n-patches", n_patches, 10000);
    s.finish("eval");

    require(!ckpt.empty(), "eval: --ckpt is required");
    require(!dataset.empty(), "eval: --dataset is required");

    TrainState<float> st = state_from_checkpoint(ckpt, cfg);
    std::vector<LoadedRecord> test = load_dataset(dataset);

    EvalConfig ecfg;
    ecfg.sample_batch = sample_batch;
    ecfg.patch = patch;
    ecfg.n_patches = n_patches;
    ecfg.seed = common.seed;
    ecfg.workers = common.workers;
    EvalReport rep = evaluate(st, test, ecfg);
    write_report(rep, out);
    log_info("eval: mean_psnr_restored=", fmt_double(rep.mean_psnr_restored),
             " mean_psnr_degraded=", fmt_double(rep.mean_psnr_degraded),
             " mean_ssim=", fmt_double(rep.mean_ssim),
             " patch_frechet=", fmt_double(rep.patch_frechet_restored),
             " pearson_phi0=", fmt_double(rep.pearson_phi0));
    return 0;
}

int cmd_gradcheck(const CLI::App* sub, CommonFlags& common, double tol, bool inject_fault) {
    Settings s(sub, common.config);
    common.resolve(s);
    tol = s.pick<double>("--tol", tol, 1e-3);
    inject_fault = s.pick<bool>("--inject-fault", inject_fault, false);
    s.finish("gradcheck");

    GradCheckSuite suite = make_gradcheck_suite(inject_fault);
    std::vector<GradCheckResult> results = suite.run(tol, common.seed);
    std::string first_fail;
    std::printf("%-28s %12s  %s\n", "op", "max_rel_err", "status");
    for (const auto& r : results) {
        std::printf("%-28s %12.3e  %s\n", r.name.c_str(), r.max_err, r.pass ? "pass" : "FAIL");
        if (!r.pass && first_fail.empty()) first_fail = r.name;
    }
    std::printf("%zu ops checked, tol %.3g\n", results.size(), tol);
    if (!first_fail.empty()) {
        log_error("gradcheck: gradient mismatch in op '", first_fail, "'");
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional diffusion restoration of turbulence-degraded images"};
    app.require_subcommand(1);

    CommonFlags common[5];
    ModelFlags model[3];

    // simulate
    auto* sim = app.add_subcommand("simulate", "degrade clean images into a training dataset");
    common[0].attach(sim);
    std::string sim_clean, sim_out;
    int sim_pairs = 100, sim_crop = 32, sim_synth = 0, sim_size = 64;
    double sim_lo = kDr0Lo, sim_hi = kDr0Hi;
    sim->add_option("--clean-dir", sim_clean, "directory of clean source PNGs");
    sim->add_option("--out", sim_out, "output dataset directory");
    sim->add_option("--pairs", sim_pairs, "number of record pairs");
    sim->add_option("--crop", sim_crop, "crop size of stored records");
    sim->add_option("--d-r0-lo", sim_lo, "severity range low");
    sim->add_option("--d-r0-hi", sim_hi, "severity range high");
    sim->add_option("--synthesize-clean", sim_synth,
                    "first write this many procedural clean images into --clean-dir");
    sim->add_option("--image-size", sim_size, "size of synthesized clean images");
    sim->callback([&] {
        cmd_simulate(sim, common[0], sim_clean, sim_out, sim_pairs, sim_crop, sim_lo, sim_hi,
                     sim_synth, sim_size);
    });

    // train
    auto* trn = app.add_subcommand("train", "train the restoration model");
    common[1].attach(trn);
    model[0].attach(trn);
    std::string trn_dataset, trn_ckpt_dir = "ckpt", trn_metrics, trn_resume, trn_ablation = "none";
    trn->add_option("--dataset", trn_dataset, "dataset directory from simulate");
    trn->add_option("--ckpt-dir", trn_ckpt_dir, "checkpoint output directory");
    trn->add_option("--metrics", trn_metrics, "metric log path (default ckpt-dir/metrics.txt)");
    trn->add_option("--resume", trn_resume, "checkpoint to continue from");
    trn->add_option("--ablation", trn_ablation, "baseline variant")
        ->check(CLI::IsMember({"none", "simple-ddpm"}));
    trn->callback([&] {
        cmd_train(trn, common[1], model[0], trn_dataset, trn_ckpt_dir, trn_metrics, trn_resume,
                  trn_ablation);
    });

    // restore
    auto* rst = app.add_subcommand("restore", "restore one degraded image");
    common[2].attach(rst);
    model[1].attach(rst);
    std::string rst_ckpt, rst_in, rst_out;
    rst->add_option("--ckpt", rst_ckpt, "trained checkpoint");
    rst->add_option("--in", rst_in, "degraded input PNG");
    rst->add_option("--out", rst_out, "restored output PNG");
    rst->callback(
        [&] { cmd_restore(rst, common[2], model[1], rst_ckpt, rst_in, rst_out); });

    // eval
    auto* evl = app.add_subcommand("eval", "score a checkpoint against a dataset");
    common[3].attach(evl);
    model[2].attach(evl);
    std::string evl_ckpt, evl_dataset, evl_out = "eval";
    int evl_batch = 25, evl_patch = 7, evl_npatches = 10000;
    evl->add_option("--ckpt", evl_ckpt, "trained checkpoint");
    evl->add_option("--dataset", evl_dataset, "held-out dataset directory");
    evl->add_option("--out", evl_out, "report output directory");
    evl->add_option("--sample-batch", evl_batch, "images restored per sampler pass");
    evl->add_option("--patch", evl_patch, "patch size for the Frechet statistic");
    evl->add_option("--n-patches", evl_npatches, "patches sampled per set");
    evl->callback([&] {
        cmd_eval(evl, common[3], model[2], evl_ckpt, evl_dataset, evl_out, evl_batch, evl_patch,
                 evl_npatches);
    });

    // gradcheck
    auto* gck = app.add_subcommand("gradcheck", "verify every op against finite differences");
    common[4].attach(gck);
    double gck_tol = 1e-3;
    bool gck_fault = false;
    gck->add_option("--tol", gck_tol, "max allowed relative error");
    gck->add_flag("--inject-fault", gck_fault, "register a deliberately broken op");
    gck->callback([&] {
        if (cmd_gradcheck(gck, common[4], gck_tol, gck_fault) != 0)
            throw std::runtime_error("gradcheck failed");
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        log_error(e.what());
        return 1;
    }
    return 0;
}
