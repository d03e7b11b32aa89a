#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "atvd/checkpoint.hpp"
#include "atvd/diffusion.hpp"
#include "atvd/models.hpp"
#include "atvd/objectives.hpp"
#include "atvd/rng.hpp"
#include "atvd/threadpool.hpp"
#include "atvd/turbulence.hpp"

namespace atvd {

struct TrainConfig {
    int epochs = 20;
    int iters_per_epoch = 100;
    int batch_size = 8;
    int crop = 32;
    int T = 100;
    double beta_start = 1e-3;
    double beta_end = 0.2;
    double lr_start = 1e-4;
    double lr_end = 5e-6;
    Lambdas lambdas;
    uint64_t seed = 0;
    bool ablation = false; // simple-DDPM baseline: c zeroed, only the U-Net trains
    int log_every = 10;

    int64_t total_steps() const { return static_cast<int64_t>(epochs) * iters_per_epoch; }

    static TrainConfig desk() { return TrainConfig{}; }

    static TrainConfig paper() {
        TrainConfig c;
        c.epochs = 200;
        c.iters_per_epoch = 1500;
        c.batch_size = 16;
        c.crop = 160;
        c.T = 1000;
        c.beta_start = 1e-4;
        c.beta_end = 0.02;
        return c;
    }
};

inline double cosine_lr(int64_t step, int64_t total_steps, double lr_start, double lr_end) {
    require(total_steps >= 1, cat("cosine_lr: total_steps must be >= 1, got ", total_steps));
    require(step >= 0 && step <= total_steps,
            cat("cosine_lr: step ", step, " outside [0, ", total_steps, "]"));
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(M_PI * frac));
}

// bias-corrected Adam without weight decay; t is the 1-based update count
template <typename T>
void adam_step(TensorT<T>& param, const std::vector<T>& grad, std::vector<T>& m,
               std::vector<T>& v, double lr, double beta1, double beta2, double eps, int64_t t) {
    require(grad.size() == param.numel(),
            cat("adam_step: grad size ", grad.size(), " vs param ", shape_str(param.shape())));
    require(t >= 1, cat("adam_step: update count must be >= 1, got ", t));
    if (m.size() != param.numel()) m.assign(param.numel(), T(0));
    if (v.size() != param.numel()) v.assign(param.numel(), T(0));
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    T* p = param.data();
    for (size_t i = 0; i < param.numel(); ++i) {
        double g = static_cast<double>(grad[i]);
        double mi = beta1 * m[i] + (1.0 - beta1) * g;
        double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

struct AugmentDescriptor {
    int oy = 0, ox = 0;
    bool flip_h = false, flip_v = false, transpose = false;
};

// draw order: crop offsets, horizontal flip, vertical flip, transpose
inline AugmentDescriptor draw_augment(Rng& rng, int h, int w, int crop) {
    require(h >= crop && w >= crop,
            cat("augment: image ", h, "x", w, " smaller than crop ", crop));
    AugmentDescriptor d;
    d.oy = rng.uniform_int(0, h - crop);
    d.ox = rng.uniform_int(0, w - crop);
    d.flip_h = rng.uniform() < 0.5;
    d.flip_v = rng.uniform() < 0.5;
    d.transpose = rng.uniform() < 0.5;
    return d;
}

inline Image apply_augment(const Image& img, const AugmentDescriptor& d, int crop) {
    require(img.height >= d.oy + crop && img.width >= d.ox + crop,
            cat("augment: window ", d.oy, "+", crop, "x", d.ox, "+", crop, " outside image ",
                img.height, "x", img.width));
    Image out = make_image(img.channels, crop, crop);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x) {
                int sy = d.flip_v ? crop - 1 - y : y;
                int sx = d.flip_h ? crop - 1 - x : x;
                if (d.transpose) std::swap(sy, sx);
                out.at(c, y, x) = img.at(c, d.oy + sy, d.ox + sx);
            }
    return out;
}

// ---------------------------------------------------------------------------
// training state
// ---------------------------------------------------------------------------

template <typename T>
struct TrainState {
    TrainConfig cfg;
    ModelConfig mcfg;
    NoiseSchedule sched;
    UNetModel<T> unet;
    EncoderModel<T> enc;
    DecoderModel<T> dec;
    ParamHeadModel<T> head;
    DiscriminatorModel<T> disc;

    // ordered trainable tensors: generator side first, then discriminator
    std::vector<std::pair<std::string, TensorT<T>>> params;
    size_t gen_count = 0; // params[0..gen_count) belong to the generator side
    std::vector<std::vector<T>> adam_m, adam_v;
    uint64_t step = 0;

    bool trains_param(size_t i) const {
        if (cfg.ablation) return params[i].first.rfind("unet.", 0) == 0;
        return true;
    }
};

template <typename T>
TrainState<T> make_train_state(const TrainConfig& cfg) {
    TrainState<T> st;
    st.cfg = cfg;
    st.mcfg.max_t = cfg.T;
    st.sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    Rng init_rng(Rng::derive(cfg.seed, {stream::init}));
    st.unet = UNetModel<T>(st.mcfg, init_rng);
    st.enc = EncoderModel<T>(st.mcfg, init_rng);
    st.dec = DecoderModel<T>(st.mcfg, init_rng);
    st.head = ParamHeadModel<T>(st.mcfg, init_rng);
    st.disc = DiscriminatorModel<T>(st.mcfg, init_rng);

    for (auto* store : {&st.unet.params(), &st.enc.params(), &st.dec.params(), &st.head.params()})
        for (const auto& item : store->items()) st.params.push_back(item);
    st.gen_count = st.params.size();
    for (const auto& item : st.disc.params().items()) st.params.push_back(item);
    st.adam_m.resize(st.params.size());
    st.adam_v.resize(st.params.size());
    return st;
}

// ---------------------------------------------------------------------------
// batches
// ---------------------------------------------------------------------------

template <typename T>
struct Batch {
    TensorT<T> x0, y, phi;
};

// Record picks come from one per-step stream; each slot's augmentation comes
// from its own (seed, step, slot) stream, so worker count cannot matter.
template <typename T>
Batch<T> build_batch(const TrainState<T>& st, const std::vector<LoadedRecord>& data, int workers) {
    const TrainConfig& cfg = st.cfg;
    require(!data.empty(), "build_batch: empty dataset");
    int b = cfg.batch_size, crop = cfg.crop;

    Rng pick(Rng::derive(cfg.seed, {stream::batch_index, st.step}));
    std::vector<int> idx(static_cast<size_t>(b));
    for (auto& i : idx) i = pick.uniform_int(0, static_cast<int>(data.size()) - 1);

    Batch<T> batch;
    batch.x0 = TensorT<T>::zeros({b, 3, crop, crop});
    batch.y = TensorT<T>::zeros({b, 3, crop, crop});
    batch.phi = TensorT<T>::zeros({b, st.mcfg.phi_dim});
    parallel_for(0, b, workers, [&](int64_t j) {
        const LoadedRecord& rec = data[static_cast<size_t>(idx[static_cast<size_t>(j)])];
        Rng ar(Rng::derive(cfg.seed, {stream::augment, st.step, static_cast<uint64_t>(j)}));
        AugmentDescriptor d = draw_augment(ar, rec.clean.height, rec.clean.width, crop);
        Image xc = apply_augment(rec.clean, d, crop);
        Image yc = apply_augment(rec.degraded, d, crop);
        image_into_tensor(xc, batch.x0, static_cast<int>(j));
        image_into_tensor(yc, batch.y, static_cast<int>(j));
        for (int k = 0; k < st.mcfg.phi_dim; ++k)
            batch.phi[static_cast<size_t>(j) * st.mcfg.phi_dim + k] =
                static_cast<T>(rec.phi[static_cast<size_t>(k)]);
    });
    return batch;
}

// ---------------------------------------------------------------------------
// one optimization step
// ---------------------------------------------------------------------------

struct StepMetrics {
    double l_diff = 0, l_vae = 0, l_adv = 0, l_degrad = 0, l_disc = 0;
    double lr = 0;
};

namespace detail_train {

constexpr double kAdamBeta1 = 0.9, kAdamBeta2 = 0.999, kAdamEps = 1e-8;

template <typename T>
void apply_updates(TrainState<T>& st, bool generator_side, double lr, int64_t t) {
    size_t lo = generator_side ? 0 : st.gen_count;
    size_t hi = generator_side ? st.gen_count : st.params.size();
    for (size_t i = lo; i < hi; ++i) {
        if (!st.trains_param(i)) continue;
        adam_step(st.params[i].second, st.params[i].second.grad(), st.adam_m[i], st.adam_v[i], lr,
                  kAdamBeta1, kAdamBeta2, kAdamEps, t);
    }
}

template <typename T>
void zero_all_grads(TrainState<T>& st) {
    for (auto& [name, p] : st.params) p.zero_grad();
}

template <typename T>
void set_disc_grad_mode(TrainState<T>& st, bool on) {
    for (size_t i = st.gen_count; i < st.params.size(); ++i)
        st.params[i].second.set_requires_grad(on);
}

} // namespace detail_train

// Alternating update: phase A trains the discriminator on real y vs decoded
// y_hat (generator frozen, y_hat built without a graph); phase B recomputes
// the generator path and trains U-Net, encoder, decoder, and head on the
// weighted objective with the discriminator frozen.
template <typename T>
StepMetrics train_step(TrainState<T>& st, const Batch<T>& batch) {
    using namespace detail_train;
    const TrainConfig& cfg = st.cfg;
    int64_t t_update = static_cast<int64_t>(st.step) + 1;
    // anneal over the inclusive lattice 0..total-1 so the first update runs
    // at exactly lr_start and the last at exactly lr_end
    int64_t lattice = std::max<int64_t>(1, cfg.total_steps() - 1);
    double lr = cosine_lr(static_cast<int64_t>(st.step), lattice, cfg.lr_start, cfg.lr_end);
    StepMetrics out;
    out.lr = lr;

    int b = batch.x0.shape()[0];

    if (!cfg.ablation) {
        // phase A: discriminator
        TensorT<T> y_hat_frozen;
        {
            NoGradGuard ng;
            Rng rd(Rng::derive(cfg.seed, {stream::reparam_disc, st.step}));
            auto [mu, logvar] = st.enc.encode(batch.y);
            LatentCode<T> lat = reparameterize(mu, logvar, rd);
            y_hat_frozen = st.dec.decode(lat.c);
        }
        TensorT<T> p_real = st.disc.forward(batch.y, true);
        TensorT<T> p_fake = st.disc.forward(y_hat_frozen, true);
        TensorT<T> l_disc = disc_loss(p_real, p_fake);
        out.l_disc = static_cast<double>(l_disc.item());
        zero_all_grads(st);
        backward(l_disc);
        apply_updates(st, false, lr, t_update);
    }

    // phase B: generator side against the frozen, freshly updated discriminator
    TensorT<T> c;
    TensorT<T> l_vae, l_adv, l_degrad;
    if (!cfg.ablation) {
        Rng rg(Rng::derive(cfg.seed, {stream::reparam_gen, st.step}));
        auto [mu, logvar] = st.enc.encode(batch.y);
        LatentCode<T> lat = reparameterize(mu, logvar, rg);
        c = lat.c;
        TensorT<T> y_hat = st.dec.decode(c);
        l_vae = vae_loss(batch.y, y_hat, mu, logvar);
        // backward closures consult requires_grad when they run, so the
        // discriminator stays disabled until after the generator update
        detail_train::set_disc_grad_mode(st, false);
        TensorT<T> p_fake = st.disc.forward(y_hat, false);
        l_adv = adv_gen_loss(p_fake);
        l_degrad = degrad_loss(batch.phi, st.head.forward(c));
    } else {
        c = TensorT<T>::zeros({b, st.mcfg.latent_channels, cfg.crop / 2, cfg.crop / 2});
    }

    Rng rt(Rng::derive(cfg.seed, {stream::diff_t, st.step}));
    std::vector<int> tsteps(static_cast<size_t>(b));
    for (auto& ti : tsteps) ti = rt.uniform_int(1, st.sched.T);
    Rng re(Rng::derive(cfg.seed, {stream::diff_eps, st.step}));
    TensorT<T> eps = TensorT<T>::randn(batch.x0.shape(), re);
    TensorT<T> l_diff = diffusion_loss(st.unet, batch.x0, batch.y, c, tsteps, eps, st.sched);

    TensorT<T> total;
    if (!cfg.ablation) {
        total = total_loss(l_diff, l_vae, l_adv, l_degrad, cfg.lambdas);
        out.l_vae = static_cast<double>(l_vae.item());
        out.l_adv = static_cast<double>(l_adv.item());
        out.l_degrad = static_cast<double>(l_degrad.item());
    } else {
        total = l_diff;
    }
    out.l_diff = static_cast<double>(l_diff.item());

    bool finite = true;
    for (double v : {out.l_diff, out.l_vae, out.l_adv, out.l_degrad, out.l_disc})
        finite = finite && std::isfinite(v);
    if (!finite)
        throw std::runtime_error(cat("train_step ", st.step, ": non-finite loss, l_diff=",
                                     out.l_diff, " l_vae=", out.l_vae, " l_adv=", out.l_adv,
                                     " l_degrad=", out.l_degrad, " l_disc=", out.l_disc));

    zero_all_grads(st);
    backward(total);
    apply_updates(st, true, lr, t_update);
    if (!cfg.ablation) detail_train::set_disc_grad_mode(st, true);

    st.step += 1;
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint round-trip
// ---------------------------------------------------------------------------

template <typename T>
CheckpointData state_to_checkpoint(const TrainState<T>& st) {
    CheckpointData ckpt;
    auto push = [&ckpt](const std::string& name, const Shape& shape, const auto& values) {
        CheckpointTensor t;
        t.name = name;
        t.shape = shape;
        t.data.reserve(values.size());
        for (auto v : values) t.data.push_back(static_cast<float>(v));
        ckpt.tensors.push_back(std::move(t));
    };

    for (size_t i = 0; i < st.params.size(); ++i) {
        if (!st.trains_param(i) && st.cfg.ablation) continue;
        push(st.params[i].first, st.params[i].second.shape(), st.params[i].second.vec());
    }
    for (size_t i = 0; i < st.params.size(); ++i) {
        if (!st.trains_param(i) && st.cfg.ablation) continue;
        Shape s = st.params[i].second.shape();
        if (st.adam_m[i].empty()) {
            push("adam.m." + st.params[i].first, s, std::vector<T>(st.params[i].second.numel(), T(0)));
            push("adam.v." + st.params[i].first, s, std::vector<T>(st.params[i].second.numel(), T(0)));
        } else {
            push("adam.m." + st.params[i].first, s, st.adam_m[i]);
            push("adam.v." + st.params[i].first, s, st.adam_v[i]);
        }
    }
    if (!st.cfg.ablation) {
        for (int i = 0; i < DiscriminatorModel<T>::layer_count(); ++i) {
            const auto& layer = st.disc.layer(i);
            push(cat("sn.u.disc.c", i + 1), {static_cast<int>(layer.u.size())}, layer.u);
            push(cat("sn.v.disc.c", i + 1), {static_cast<int>(layer.v.size())}, layer.v);
        }
    }

    ckpt.step = st.step;
    ckpt.rng_state.resize(8);
    uint64_t seed = st.cfg.seed;
    std::memcpy(ckpt.rng_state.data(), &seed, 8);
    return ckpt;
}

template <typename T>
void checkpoint_into_state(const CheckpointData& ckpt, TrainState<T>& st) {
    auto load_into = [&](const std::string& name, auto& dst, const Shape& want) {
        const CheckpointTensor* t = ckpt.find(name);
        require(t != nullptr, cat("checkpoint: missing tensor '", name, "'"));
        require(t->shape == want, cat("checkpoint: tensor '", name, "' has shape ",
                                      shape_str(t->shape), ", expected ", shape_str(want)));
        dst.resize(t->data.size());
        for (size_t i = 0; i < t->data.size(); ++i) dst[i] = static_cast<T>(t->data[i]);
    };

    for (size_t i = 0; i < st.params.size(); ++i) {
        if (st.cfg.ablation && !st.trains_param(i)) continue;
        load_into(st.params[i].first, st.params[i].second.vec(), st.params[i].second.shape());
        load_into("adam.m." + st.params[i].first, st.adam_m[i], st.params[i].second.shape());
        load_into("adam.v." + st.params[i].first, st.adam_v[i], st.params[i].second.shape());
    }
    if (!st.cfg.ablation) {
        for (int i = 0; i < DiscriminatorModel<T>::layer_count(); ++i) {
            auto& layer = st.disc.layer(i);
            load_into(cat("sn.u.disc.c", i + 1), layer.u, {static_cast<int>(layer.u.size())});
            load_into(cat("sn.v.disc.c", i + 1), layer.v, {static_cast<int>(layer.v.size())});
        }
    }
    st.step = ckpt.step;
    if (ckpt.rng_state.size() == 8) {
        uint64_t seed = 0;
        std::memcpy(&seed, ckpt.rng_state.data(), 8);
        st.cfg.seed = seed;
    }
}

// checkpoints without encoder tensors are simple-DDPM ablation runs
inline bool checkpoint_is_ablation(const CheckpointData& ckpt) {
    return ckpt.find("enc.c1.w") == nullptr;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

template <typename T>
void train_loop(TrainState<T>& st, const std::vector<LoadedRecord>& data,
                const std::string& ckpt_dir, const std::string& metrics_path, int workers) {
    namespace fs = std::filesystem;
    fs::create_directories(ckpt_dir);
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error(cat("train: cannot open metric log ", metrics_path));

    int64_t total = st.cfg.total_steps();
    require(static_cast<int64_t>(st.step) <= total,
            cat("train: checkpoint step ", st.step, " beyond configured total ", total));
    int64_t per_epoch = st.cfg.iters_per_epoch;

    while (static_cast<int64_t>(st.step) < total) {
        Batch<T> batch = build_batch(st, data, workers);
        StepMetrics sm = train_step(st, batch);
        if (st.step % static_cast<uint64_t>(st.cfg.log_every) == 0) {
            char line[256];
            std::snprintf(line, sizeof(line), "%llu %.10g %.10g %.10g %.10g %.10g %.10g\n",
                          static_cast<unsigned long long>(st.step), sm.lr, sm.l_diff, sm.l_vae,
                          sm.l_adv, sm.l_degrad, sm.l_disc);
            metrics << line;
            metrics.flush();
        }
        if (st.step % static_cast<uint64_t>(per_epoch) == 0) {
            save_checkpoint((fs::path(ckpt_dir) / "last.ckpt").string(), state_to_checkpoint(st));
            log_info("epoch ", st.step / per_epoch, "/", st.cfg.epochs, " done, l_diff=", sm.l_diff);
        }
    }
    save_checkpoint((fs::path(ckpt_dir) / "final.ckpt").string(), state_to_checkpoint(st));
}

} // namespace atvd
