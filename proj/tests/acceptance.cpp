// Release gate: runs the eight acceptance criteria in order and prints one
// verdict line per criterion, then exits nonzero if any failed. Criterion 7
// trains a full model and a simple-DDPM baseline at the desk profile, so a
// complete run takes on the order of twenty minutes on one core.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "atvd/checkpoint.hpp"
#include "atvd/diffusion.hpp"
#include "atvd/evaluate.hpp"
#include "atvd/gradcheck.hpp"
#include "atvd/objectives.hpp"
#include "atvd/training.hpp"
#include "atvd/turbulence.hpp"

namespace fs = std::filesystem;

using atvd::Batch;
using atvd::DegradationParams;
using atvd::DTensor;
using atvd::Image;
using atvd::LoadedRecord;
using atvd::Rng;
using atvd::StepMetrics;
using atvd::TrainConfig;
using atvd::TrainState;

namespace {

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

struct Verdict {
    bool pass = true;
    std::string note;
    std::string fails;

    void expect(bool ok, const std::string& why) {
        if (ok) return;
        pass = false;
        if (!fails.empty()) fails += "; ";
        fails += why;
    }
};

fs::path fresh_dir(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / ("atvd_accept_" + leaf);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> dir_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

std::vector<LoadedRecord> tiny_dataset(int count, int size, uint64_t seed) {
    std::vector<LoadedRecord> data;
    for (int i = 0; i < count; ++i) {
        LoadedRecord rec;
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(i)));
        rec.clean = atvd::make_toy_image(rng, size);
        DegradationParams p = atvd::sample_params(rng, 0.5, 2.0, size, size);
        rec.degraded = atvd::degrade(rec.clean, p, rng);
        rec.phi = atvd::phi_vector(p);
        rec.meta.index = i;
        data.push_back(std::move(rec));
    }
    return data;
}

// predictor stub that hands back the true noise
struct EpsStub {
    const DTensor* eps;
    DTensor forward(const DTensor&, const std::vector<int>&, const DTensor&,
                    const DTensor&) const {
        return *eps;
    }
};

// ---------------------------------------------------------------------------
// criterion 1: every differentiable op and loss passes 64-bit finite
// difference checks within 1e-3 in under five minutes
// ---------------------------------------------------------------------------
void c1_gradients(Verdict& v) {
    auto t0 = std::chrono::steady_clock::now();
    atvd::GradCheckSuite suite = atvd::make_gradcheck_suite();
    std::vector<atvd::GradCheckResult> results = suite.run(1e-3, 0);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    double worst = 0.0;
    std::string first_fail;
    for (const auto& r : results) {
        worst = std::max(worst, r.max_err);
        if (!r.pass && first_fail.empty()) first_fail = r.name;
    }
    v.expect(first_fail.empty(), fmt("op '%s' exceeded 1e-3", first_fail.c_str()));
    v.expect(secs < 300.0, fmt("runtime %.0f s over the five minute budget", secs));
    v.note = fmt("%zu ops, max rel err %.2e, %.1f s", results.size(), worst, secs);
}

// ---------------------------------------------------------------------------
// criterion 2: losses hit their closed-form values
// ---------------------------------------------------------------------------
void c2_loss_oracles(Verdict& v) {
    double kl0 = atvd::kl_loss(DTensor::zeros({4}), DTensor::zeros({4})).item();
    v.expect(kl0 == 0.0, fmt("kl(0,0) = %g, want 0", kl0));

    double kl1 = atvd::kl_loss(DTensor::ones({1}), DTensor::zeros({1})).item();
    v.expect(std::abs(kl1 - 0.5) <= 1e-12, fmt("kl(mu=1) = %.17g, want 0.5", kl1));

    double dl = atvd::disc_loss(DTensor::full({4}, 0.5), DTensor::full({4}, 0.5)).item();
    v.expect(std::abs(dl - 2.0 * std::log(2.0)) <= 1e-10, fmt("disc(0.5,0.5) = %.17g", dl));

    double ag = atvd::adv_gen_loss(DTensor::full({4}, 0.5)).item();
    v.expect(std::abs(ag - std::log(2.0)) <= 1e-10, fmt("adv_gen(0.5) = %.17g", ag));

    atvd::NoiseSchedule s = atvd::make_schedule(10, 1e-3, 0.2);
    Rng rng(5);
    DTensor x0 = DTensor::randn({2, 3, 8, 8}, rng);
    DTensor y = DTensor::randn({2, 3, 8, 8}, rng);
    DTensor c = DTensor::zeros({2, 1, 4, 4});
    DTensor eps = DTensor::randn(x0.shape(), rng);
    EpsStub stub{&eps};
    double ld = atvd::diffusion_loss(stub, x0, y, c, {3, 7}, eps, s).item();
    v.expect(std::abs(ld) <= 1e-10, fmt("diffusion loss with exact stub = %.3e", ld));

    DTensor one = DTensor::ones({1});
    double tot = atvd::total_loss(one, one, one, one, atvd::Lambdas{0.1, 0.1, 0.5}).item();
    v.expect(std::abs(tot - 1.7) <= 1e-12, fmt("total(1,1,1,1) = %.17g, want 1.7", tot));

    v.note = "kl, adversarial, diffusion and total losses at their analytic values";
}

// ---------------------------------------------------------------------------
// criterion 3: schedule endpoints and forward process moments
// ---------------------------------------------------------------------------
void c3_schedule(Verdict& v) {
    atvd::NoiseSchedule s = atvd::make_schedule(1000, 1e-4, 0.02);
    v.expect(s.alpha_bar[1] == 1.0 - 1e-4,
             fmt("alpha_bar[1] = %.17g, want exactly 0.9999", s.alpha_bar[1]));

    long double prod = 1.0L;
    for (int t = 1; t <= 1000; ++t)
        prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L);
    double oracle = static_cast<double>(prod);
    v.expect(std::abs(s.alpha_bar[1000] - 4.04e-5) / 4.04e-5 <= 1e-2,
             fmt("alpha_bar[1000] = %.4e, want 4.04e-5 within 1%%", s.alpha_bar[1000]));
    v.expect(std::abs(s.alpha_bar[1000] - oracle) / oracle <= 1e-9,
             fmt("alpha_bar[1000] off the long double product by %.2e",
                 std::abs(s.alpha_bar[1000] - oracle) / oracle));

    bool decreasing = true;
    for (int t = 2; t <= 1000; ++t) decreasing &= s.alpha_bar[t] < s.alpha_bar[t - 1];
    v.expect(decreasing, "alpha_bar is not strictly decreasing");

    const int t = 600, n = 20000;
    double ab = s.alpha_bar[t], sum = 0.0, sum2 = 0.0;
    Rng rng(77);
    DTensor x0 = DTensor::full({1, 1, 1, 1}, 0.7);
    for (int i = 0; i < n; ++i) {
        DTensor e = DTensor::randn({1, 1, 1, 1}, rng);
        double xt = atvd::q_sample(x0, t, e, s).item();
        sum += xt;
        sum2 += xt * xt;
    }
    double mean = sum / n;
    double var = (sum2 - n * mean * mean) / (n - 1);
    double want_mean = std::sqrt(ab) * 0.7, want_var = 1.0 - ab;
    v.expect(std::abs(mean - want_mean) <= 4.0 * std::sqrt(want_var / n),
             fmt("forward mean %.5f, want %.5f", mean, want_mean));
    v.expect(std::abs(var - want_var) / want_var <= 0.10,
             fmt("forward variance %.5f, want %.5f", var, want_var));

    v.note = fmt("alpha_bar(1000) = %.3e, forward moments inside Monte Carlo bands",
                 s.alpha_bar[1000]);
}

// ---------------------------------------------------------------------------
// criterion 4: sampler determinism, exact two step recursion, output range
// ---------------------------------------------------------------------------
void c4_sampler(Verdict& v) {
    atvd::NoiseSchedule s = atvd::make_schedule(100, 1e-3, 0.2);
    auto shrink = [](const DTensor& x, int) { return atvd::scale(x, 0.05); };
    auto draw = [&](uint64_t seed) {
        std::vector<Rng> rngs;
        for (uint64_t i = 0; i < 2; ++i)
            rngs.emplace_back(Rng::derive(seed, {atvd::stream::sample, i}));
        return atvd::ddpm_sample<double>(shrink, 2, 3, 8, 8, s, rngs);
    };
    DTensor a = draw(5), b = draw(5), c = draw(6);
    double same = 0.0, other = 0.0;
    bool in_range = true;
    for (size_t i = 0; i < a.numel(); ++i) {
        same = std::max(same, std::abs(a.vec()[i] - b.vec()[i]));
        other = std::max(other, std::abs(a.vec()[i] - c.vec()[i]));
        in_range &= a.vec()[i] >= -1.0 && a.vec()[i] <= 1.0;
    }
    v.expect(same == 0.0, fmt("same seed diverged by %.3e", same));
    v.expect(other > 0.0, "different seeds produced identical samples");
    v.expect(in_range, "sample left [-1, 1]");

    // two step chain against the hand unrolled recursion
    atvd::NoiseSchedule s2 = atvd::make_schedule(2, 0.1, 0.3);
    double worst = 0.0;
    for (double eps_hat : {0.0, 0.2}) {
        auto eps_fn = [&](const DTensor& x, int) { return DTensor::full(x.shape(), eps_hat); };
        std::vector<Rng> rngs{Rng(Rng::derive(29, {atvd::stream::sample, 0}))};
        double got = atvd::ddpm_sample<double>(eps_fn, 1, 1, 1, 1, s2, rngs).item();

        Rng replay(Rng::derive(29, {atvd::stream::sample, 0}));
        double x2 = replay.normal();
        double z = replay.normal();
        double x1 = (x2 - s2.beta[2] / std::sqrt(1.0 - s2.alpha_bar[2]) * eps_hat) /
                        std::sqrt(s2.alpha[2]) +
                    std::sqrt(s2.beta[2]) * z;
        double want = (x1 - s2.beta[1] / std::sqrt(1.0 - s2.alpha_bar[1]) * eps_hat) /
                      std::sqrt(s2.alpha[1]);
        want = std::min(1.0, std::max(-1.0, want));
        worst = std::max(worst, std::abs(got - want));
    }
    v.expect(worst <= 1e-12, fmt("two step recursion off by %.3e", worst));

    v.note = fmt("bitwise deterministic, two step recursion gap %.1e, outputs clipped", worst);
}

// ---------------------------------------------------------------------------
// criterion 5: simulator identities, severity monotonicity, flux, rebuild
// ---------------------------------------------------------------------------
void c5_simulator(Verdict& v) {
    Rng ir(1);
    Image x = atvd::make_toy_image(ir, 20);
    DegradationParams zero;
    zero.d_r0 = 0.0;
    zero.height = 20;
    zero.width = 20;
    zero.tilt_x.assign(400, 0.0f);
    zero.tilt_y.assign(400, 0.0f);
    zero.blur_map.assign(400, 0.0f);
    zero.noise_std = 0.0;
    Rng nr(2);
    Image y = atvd::degrade(x, zero, nr);
    bool identity = x.data == y.data;
    v.expect(identity, "zero severity is not the exact identity");

    Image flat = atvd::make_image(3, 18, 18, 0.35f);
    Rng pr(3);
    DegradationParams p = atvd::sample_params(pr, 1.5, 1.5, 18, 18);
    p.noise_std = 0.0;
    Rng nr2(4);
    Image fy = atvd::degrade(flat, p, nr2);
    bool fixed = true;
    for (float px : fy.data) fixed &= px == 0.35f;
    v.expect(fixed, "constant image is not a fixed point without noise");

    // paired severity sweep: each image reuses one parameter stream per level
    // so only the severity scale changes
    const double levels[4] = {0.5, 1.0, 1.5, 2.0};
    double means[4] = {};
    std::vector<Image> clean;
    for (int i = 0; i < 100; ++i) {
        Rng rng(Rng::mix(500, static_cast<uint64_t>(i)));
        clean.push_back(atvd::make_toy_image(rng, 32));
    }
    for (int li = 0; li < 4; ++li) {
        for (int i = 0; i < 100; ++i) {
            Rng prng(Rng::mix(600, static_cast<uint64_t>(i)));
            DegradationParams sp = atvd::sample_params(prng, levels[li], levels[li], 32, 32);
            Rng noise(Rng::mix(700, static_cast<uint64_t>(i)));
            means[li] += atvd::psnr(clean[static_cast<size_t>(i)],
                                    atvd::degrade(clean[static_cast<size_t>(i)], sp, noise));
        }
        means[li] /= 100.0;
    }
    bool monotone = means[0] >= means[1] && means[1] >= means[2] && means[2] >= means[3];
    v.expect(monotone, fmt("psnr means %.2f %.2f %.2f %.2f not non-increasing", means[0],
                           means[1], means[2], means[3]));
    v.expect(means[0] - means[3] > 1.0,
             fmt("psnr drop %.2f dB across the severity grid, want > 1", means[0] - means[3]));

    double flux_err = 0.0;
    for (double sigma : {0.0, 0.3, 0.7, 1.3, 2.2, 3.0}) {
        int radius = 0;
        std::vector<double> taps = atvd::gaussian_taps(sigma, radius);
        double sum = 0.0;
        for (double t : taps) sum += t;
        flux_err = std::max(flux_err, std::abs(sum - 1.0));
    }
    v.expect(flux_err <= 1e-6, fmt("kernel flux error %.2e", flux_err));

    fs::path croot = fresh_dir("c5");
    atvd::write_toy_clean_images((croot / "clean").string(), 6, 48, 5);
    atvd::build_dataset((croot / "clean").string(), (croot / "a").string(), 16, atvd::kDr0Lo,
                        atvd::kDr0Hi, 16, 9, 1);
    atvd::build_dataset((croot / "clean").string(), (croot / "b").string(), 16, atvd::kDr0Lo,
                        atvd::kDr0Hi, 16, 9, 1);
    v.expect(dir_bytes(croot / "a") == dir_bytes(croot / "b"),
             "dataset regeneration is not byte identical");
    fs::remove_all(croot);

    v.note = fmt("identities exact, psnr drop %.2f dB, flux error %.1e", means[0] - means[3],
                 flux_err);
}

// ---------------------------------------------------------------------------
// criterion 6: with zero auxiliary weights and a zero latent, one generator
// update matches a standalone noise-prediction DDPM step
// ---------------------------------------------------------------------------
void c6_ablation_equivalence(Verdict& v) {
    auto data = tiny_dataset(4, 24, 97);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.iters_per_epoch = 10;
    cfg.batch_size = 2;
    cfg.crop = 16;
    cfg.T = 10;
    cfg.seed = 43;
    cfg.ablation = true;
    cfg.lambdas = atvd::Lambdas{0.0, 0.0, 0.0};

    auto st = atvd::make_train_state<double>(cfg);
    auto ref = atvd::make_train_state<double>(cfg);
    Batch<double> batch = atvd::build_batch(st, data, 1);
    atvd::train_step(st, batch);

    // standalone reference: q_sample, U-Net, MSE on the noise, one Adam step
    Rng rt(Rng::derive(cfg.seed, {atvd::stream::diff_t, 0}));
    std::vector<int> tsteps(2);
    for (auto& ti : tsteps) ti = rt.uniform_int(1, ref.sched.T);
    Rng re(Rng::derive(cfg.seed, {atvd::stream::diff_eps, 0}));
    DTensor eps = DTensor::randn(batch.x0.shape(), re);
    DTensor c = DTensor::zeros({2, ref.mcfg.latent_channels, cfg.crop / 2, cfg.crop / 2});

    DTensor x_t = atvd::q_sample(batch.x0, tsteps, eps, ref.sched);
    DTensor eps_hat = ref.unet.forward(x_t, tsteps, batch.y, c);
    DTensor d = atvd::sub(eps, eps_hat);
    DTensor loss = atvd::mean(atvd::mul(d, d));
    for (auto& [name, pr] : ref.params) pr.zero_grad();
    atvd::backward(loss);
    double lr = atvd::cosine_lr(0, cfg.total_steps() - 1, cfg.lr_start, cfg.lr_end);
    for (size_t i = 0; i < ref.params.size(); ++i) {
        if (ref.params[i].first.rfind("unet.", 0) != 0) continue;
        atvd::adam_step(ref.params[i].second, ref.params[i].second.grad(), ref.adam_m[i],
                        ref.adam_v[i], lr, 0.9, 0.999, 1e-8, 1);
    }

    double grad_gap = 0.0, param_gap = 0.0;
    for (size_t i = 0; i < st.params.size(); ++i) {
        if (st.params[i].first.rfind("unet.", 0) != 0) continue;
        const auto& ga = st.params[i].second.grad();
        const auto& gb = ref.params[i].second.grad();
        for (size_t j = 0; j < ga.size(); ++j)
            grad_gap = std::max(grad_gap, std::abs(ga[j] - gb[j]));
        const auto& pa = st.params[i].second.vec();
        const auto& pb = ref.params[i].second.vec();
        for (size_t j = 0; j < pa.size(); ++j)
            param_gap = std::max(param_gap, std::abs(pa[j] - pb[j]));
    }
    v.expect(grad_gap <= 1e-10, fmt("generator gradient gap %.2e over 1e-10", grad_gap));
    v.expect(param_gap <= 1e-12, fmt("updated parameter gap %.2e over 1e-12", param_gap));
    v.note = fmt("max gradient gap %.1e, max parameter gap %.1e", grad_gap, param_gap);
}

// ---------------------------------------------------------------------------
// criterion 7: desk-profile end to end run; restored quality, baseline
// comparison and severity correlation on held-out pairs
// ---------------------------------------------------------------------------
void c7_end_to_end(Verdict& v) {
    fs::path root = fresh_dir("e2e");
    atvd::write_toy_clean_images((root / "clean_train").string(), 60, 64, 101);
    atvd::write_toy_clean_images((root / "clean_test").string(), 20, 64, 202);
    atvd::build_dataset((root / "clean_train").string(), (root / "train").string(), 2000,
                        atvd::kDr0Lo, atvd::kDr0Hi, 32, 11, 1);
    atvd::build_dataset((root / "clean_test").string(), (root / "test").string(), 200,
                        atvd::kDr0Lo, atvd::kDr0Hi, 32, 12, 1);
    std::vector<LoadedRecord> train_data = atvd::load_dataset((root / "train").string());
    std::vector<LoadedRecord> test_data = atvd::load_dataset((root / "test").string());

    TrainConfig cfg = TrainConfig::desk();
    cfg.seed = 33;
    auto full = atvd::make_train_state<float>(cfg);
    atvd::train_loop(full, train_data, (root / "ck_full").string(),
                     (root / "ck_full" / "metrics.txt").string(), 1);

    TrainConfig acfg = cfg;
    acfg.ablation = true;
    auto abl = atvd::make_train_state<float>(acfg);
    atvd::train_loop(abl, train_data, (root / "ck_abl").string(),
                     (root / "ck_abl" / "metrics.txt").string(), 1);

    atvd::EvalConfig ecfg;
    ecfg.seed = 44;
    atvd::EvalReport ra = atvd::evaluate(full, test_data, ecfg);
    atvd::EvalReport rb = atvd::evaluate(abl, test_data, ecfg);

    double gain = ra.mean_psnr_restored - ra.mean_psnr_degraded;
    v.expect(gain >= 1.0, fmt("restored psnr gain %.2f dB, want >= 1", gain));
    v.expect(ra.patch_frechet_restored <= rb.patch_frechet_restored,
             fmt("patch frechet %.4f above the baseline's %.4f", ra.patch_frechet_restored,
                 rb.patch_frechet_restored));
    v.expect(ra.pearson_phi0 > 0.5,
             fmt("severity correlation %.3f, want > 0.5", ra.pearson_phi0));
    v.note = fmt("gain %+.2f dB (restored %.2f / degraded %.2f), frechet %.4f vs baseline %.4f"
                 ", pearson %.3f",
                 gain, ra.mean_psnr_restored, ra.mean_psnr_degraded, ra.patch_frechet_restored,
                 rb.patch_frechet_restored, ra.pearson_phi0);
    fs::remove_all(root);
}

// ---------------------------------------------------------------------------
// criterion 8: checkpoint bytes, resume trace, worker invariance, lr endpoints
// ---------------------------------------------------------------------------
void c8_infrastructure(Verdict& v) {
    auto data = tiny_dataset(6, 24, 55);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.iters_per_epoch = 5;
    cfg.batch_size = 2;
    cfg.crop = 16;
    cfg.T = 10;
    cfg.seed = 21;

    // save -> load -> save byte identity
    fs::path dir = fresh_dir("c8");
    auto st = atvd::make_train_state<float>(cfg);
    for (int i = 0; i < 2; ++i) atvd::train_step(st, atvd::build_batch(st, data, 1));
    fs::path f1 = dir / "a.ckpt", f2 = dir / "b.ckpt";
    atvd::save_checkpoint(f1.string(), atvd::state_to_checkpoint(st));
    atvd::save_checkpoint(f2.string(), atvd::load_checkpoint(f1.string()));
    v.expect(slurp(f1) == slurp(f2), "save/load/save changed checkpoint bytes");

    // uninterrupted ten step trace vs five steps, checkpoint, resume, five more
    auto base = atvd::make_train_state<float>(cfg);
    std::vector<StepMetrics> trace_a;
    for (int i = 0; i < 10; ++i)
        trace_a.push_back(atvd::train_step(base, atvd::build_batch(base, data, 1)));

    auto part = atvd::make_train_state<float>(cfg);
    std::vector<StepMetrics> trace_b;
    for (int i = 0; i < 5; ++i)
        trace_b.push_back(atvd::train_step(part, atvd::build_batch(part, data, 1)));
    atvd::CheckpointData ck = atvd::state_to_checkpoint(part);
    auto resumed = atvd::make_train_state<float>(cfg);
    atvd::checkpoint_into_state(ck, resumed);
    for (int i = 0; i < 5; ++i)
        trace_b.push_back(atvd::train_step(resumed, atvd::build_batch(resumed, data, 1)));

    bool trace_equal = true;
    for (int i = 0; i < 10; ++i) {
        const StepMetrics &a = trace_a[static_cast<size_t>(i)],
                          &b = trace_b[static_cast<size_t>(i)];
        trace_equal &= a.lr == b.lr && a.l_diff == b.l_diff && a.l_vae == b.l_vae &&
                       a.l_adv == b.l_adv && a.l_degrad == b.l_degrad && a.l_disc == b.l_disc;
    }
    v.expect(trace_equal, "resumed metric trace diverged from the uninterrupted run");

    // worker count must not change batch contents or dataset bytes
    auto probe = atvd::make_train_state<float>(cfg);
    Batch<float> b1 = atvd::build_batch(probe, data, 1);
    Batch<float> b3 = atvd::build_batch(probe, data, 3);
    v.expect(b1.x0.vec() == b3.x0.vec() && b1.y.vec() == b3.y.vec() &&
                 b1.phi.vec() == b3.phi.vec(),
             "worker count changed batch contents");
    atvd::write_toy_clean_images((dir / "clean").string(), 4, 32, 3);
    atvd::build_dataset((dir / "clean").string(), (dir / "w1").string(), 12, atvd::kDr0Lo,
                        atvd::kDr0Hi, 16, 31, 1);
    atvd::build_dataset((dir / "clean").string(), (dir / "w3").string(), 12, atvd::kDr0Lo,
                        atvd::kDr0Hi, 16, 31, 3);
    v.expect(dir_bytes(dir / "w1") == dir_bytes(dir / "w3"),
             "worker count changed dataset bytes");

    v.expect(trace_a.front().lr == 1e-4,
             fmt("first lr %.17g, want exactly 1e-4", trace_a.front().lr));
    v.expect(trace_a.back().lr == 5e-6,
             fmt("last lr %.17g, want exactly 5e-6", trace_a.back().lr));
    fs::remove_all(dir);

    v.note = "checkpoint bytes, resume trace, worker bytes and lr endpoints all exact";
}

} // namespace

int main() {
    struct Entry {
        int idx;
        const char* name;
        void (*fn)(Verdict&);
    };
    const Entry entries[] = {
        {1, "gradient suite", c1_gradients},
        {2, "loss closed forms", c2_loss_oracles},
        {3, "noise schedule and forward process", c3_schedule},
        {4, "ancestral sampler", c4_sampler},
        {5, "turbulence simulator", c5_simulator},
        {6, "ablation gradient equivalence", c6_ablation_equivalence},
        {7, "end to end desk run", c7_end_to_end},
        {8, "training infrastructure", c8_infrastructure},
    };

    int failures = 0;
    for (const Entry& e : entries) {
        Verdict v;
        try {
            e.fn(v);
        } catch (const std::exception& ex) {
            v.pass = false;
            v.expect(false, fmt("exception: %s", ex.what()));
        }
        std::printf("criterion %d/8 %-36s %s  %s\n", e.idx, e.name, v.pass ? "PASS" : "FAIL",
                    (v.pass ? v.note : v.fails).c_str());
        std::fflush(stdout);
        if (!v.pass) ++failures;
    }
    if (failures > 0) std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
