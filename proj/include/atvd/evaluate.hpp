#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "atvd/diffusion.hpp"
#include "atvd/metrics.hpp"
#include "atvd/training.hpp"

namespace atvd {

struct EvalConfig {
    int sample_batch = 25; // images restored per sampler pass
    int patch = 7;
    int n_patches = 10000;
    uint64_t seed = 0;
    int workers = 1;
};

struct EvalReport {
    struct Row {
        int index = 0;
        double psnr_restored = 0, ssim_restored = 0, psnr_degraded = 0;
    };
    std::vector<Row> rows;
    double mean_psnr_restored = 0, mean_psnr_degraded = 0, mean_ssim = 0;
    double patch_frechet_restored = 0;
    double pearson_phi0 = 0; // NaN for the simple-DDPM ablation (no latent head)
    std::vector<Image> restored;
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size() && a.size() >= 2,
            cat("pearson: need two equal series of length >= 2, got ", a.size(), "/", b.size()));
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(a.size());
    double va = 0, vb = 0, cov = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        cov += (a[i] - ma) * (b[i] - mb);
    }
    double denom = std::sqrt(va * vb);
    if (denom < 1e-12) return 0.0;
    return cov / denom;
}

// Restores every test record by ancestral sampling conditioned on the
// degraded image and the encoder's posterior mean, then scores against the
// clean ground truth. Per-image RNG streams keep results independent of the
// sampling batch size.
template <typename T>
EvalReport evaluate(TrainState<T>& st, const std::vector<LoadedRecord>& test,
                    const EvalConfig& ecfg) {
    require(!test.empty(), "evaluate: empty test set");
    NoGradGuard ng;
    EvalReport rep;
    rep.rows.resize(test.size());
    rep.restored.resize(test.size());

    int h = test[0].clean.height, w = test[0].clean.width;
    std::vector<double> phi_true(test.size()), phi_pred(test.size());

    size_t n = test.size();
    for (size_t start = 0; start < n; start += static_cast<size_t>(ecfg.sample_batch)) {
        int b = static_cast<int>(std::min(n - start, static_cast<size_t>(ecfg.sample_batch)));
        TensorT<T> y = TensorT<T>::zeros({b, 3, h, w});
        for (int j = 0; j < b; ++j) image_into_tensor(test[start + j].degraded, y, j);

        TensorT<T> c;
        if (st.cfg.ablation) {
            c = TensorT<T>::zeros({b, st.mcfg.latent_channels, h / 2, w / 2});
        } else {
            auto [mu, logvar] = st.enc.encode(y);
            c = mu; // test-time latent: posterior mean, no extra sampling noise
            TensorT<T> phi_hat = st.head.forward(c);
            for (int j = 0; j < b; ++j)
                phi_pred[start + j] = static_cast<double>(phi_hat[static_cast<size_t>(j) *
                                                                  st.mcfg.phi_dim]);
        }

        std::vector<Rng> rngs;
        rngs.reserve(static_cast<size_t>(b));
        for (int j = 0; j < b; ++j)
            rngs.emplace_back(
                Rng::derive(ecfg.seed, {stream::sample, static_cast<uint64_t>(start + j)}));
        auto eps_fn = [&](const TensorT<T>& x, int t) {
            return st.unet.forward(x, std::vector<int>(static_cast<size_t>(b), t), y, c);
        };
        TensorT<T> x0_hat = ddpm_sample<T>(eps_fn, b, 3, h, w, st.sched, rngs);

        for (int j = 0; j < b; ++j) {
            size_t gi = start + j;
            rep.restored[gi] = image_from_tensor(x0_hat, j);
            EvalReport::Row& row = rep.rows[gi];
            row.index = test[gi].meta.index;
            row.psnr_restored = psnr(rep.restored[gi], test[gi].clean);
            row.ssim_restored = ssim(rep.restored[gi], test[gi].clean);
            row.psnr_degraded = psnr(test[gi].degraded, test[gi].clean);
            phi_true[gi] = test[gi].phi[0];
        }
        log_debug("evaluate: restored ", start + static_cast<size_t>(b), "/", n);
    }

    for (const auto& row : rep.rows) {
        rep.mean_psnr_restored += row.psnr_restored;
        rep.mean_psnr_degraded += row.psnr_degraded;
        rep.mean_ssim += row.ssim_restored;
    }
    rep.mean_psnr_restored /= static_cast<double>(n);
    rep.mean_psnr_degraded /= static_cast<double>(n);
    rep.mean_ssim /= static_cast<double>(n);

    std::vector<Image> clean_set;
    clean_set.reserve(n);
    for (const auto& rec : test) clean_set.push_back(rec.clean);
    rep.patch_frechet_restored =
        patch_frechet(rep.restored, clean_set, ecfg.patch, ecfg.n_patches, ecfg.seed);

    rep.pearson_phi0 = st.cfg.ablation ? std::nan("") : pearson(phi_pred, phi_true);
    return rep;
}

inline void write_report(const EvalReport& rep, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream f(fs::path(out_dir) / "report.txt");
        if (!f) throw std::runtime_error(cat("write_report: cannot write in ", out_dir));
        char line[160];
        for (const auto& r : rep.rows) {
            std::snprintf(line, sizeof(line), "%d %.6f %.6f\n", r.index, r.psnr_restored,
                          r.ssim_restored);
            f << line;
        }
        std::snprintf(line, sizeof(line),
                      "# mean_psnr %.6f mean_ssim %.6f patch_frechet %.6f count %zu\n",
                      rep.mean_psnr_restored, rep.mean_ssim, rep.patch_frechet_restored,
                      rep.rows.size());
        f << line;
    }
    {
        std::ofstream f(fs::path(out_dir) / "summary.txt");
        char line[96];
        auto kv = [&](const char* k, double v) {
            std::snprintf(line, sizeof(line), "%s = %.10g\n", k, v);
            f << line;
        };
        kv("count", static_cast<double>(rep.rows.size()));
        kv("mean_psnr_restored", rep.mean_psnr_restored);
        kv("mean_psnr_degraded", rep.mean_psnr_degraded);
        kv("mean_ssim", rep.mean_ssim);
        kv("patch_frechet", rep.patch_frechet_restored);
        kv("pearson_phi0", rep.pearson_phi0);
    }
}

} // namespace atvd
