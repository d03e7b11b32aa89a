#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "atvd/rng.hpp"
#include "atvd/tensor.hpp"

namespace atvd {

// Linear variance schedule with precomputed cumulative products. Arrays are
// 1-based: beta[t] for t in [1, T]; index 0 is unused padding.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;      // size T+1
    std::vector<double> alpha;     // 1 - beta
    std::vector<double> alpha_bar; // prefix products of alpha

    void check_t(int t) const {
        require(t >= 1 && t <= T, cat("schedule: step ", t, " outside [1, ", T, "]"));
    }
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    require(T >= 1, cat("make_schedule: T must be >= 1, got ", T));
    require(beta_start > 0 && beta_start <= beta_end && beta_end < 1,
            cat("make_schedule: need 0 < beta_start <= beta_end < 1, got ", beta_start, ", ",
                beta_end));
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 0.0);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

// closed-form forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename T>
TensorT<T> q_sample(const TensorT<T>& x0, int t, const TensorT<T>& eps, const NoiseSchedule& s) {
    s.check_t(t);
    require(x0.shape() == eps.shape(),
            cat("q_sample: x0 ", shape_str(x0.shape()), " vs eps ", shape_str(eps.shape())));
    double ab = s.alpha_bar[static_cast<size_t>(t)];
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

// batched variant with one step index per sample
template <typename T>
TensorT<T> q_sample(const TensorT<T>& x0, const std::vector<int>& t, const TensorT<T>& eps,
                    const NoiseSchedule& s) {
    require(x0.shape() == eps.shape(),
            cat("q_sample: x0 ", shape_str(x0.shape()), " vs eps ", shape_str(eps.shape())));
    require(!x0.shape().empty() && static_cast<size_t>(x0.shape()[0]) == t.size(),
            cat("q_sample: batch ", shape_str(x0.shape()), " vs ", t.size(), " step indices"));
    std::vector<double> a(t.size()), b(t.size());
    for (size_t i = 0; i < t.size(); ++i) {
        s.check_t(t[i]);
        double ab = s.alpha_bar[static_cast<size_t>(t[i])];
        a[i] = std::sqrt(ab);
        b[i] = std::sqrt(1.0 - ab);
    }
    return add(scale_per_sample(x0, a), scale_per_sample(eps, b));
}

// noise-prediction MSE: mean((eps - model(x_t, t, y, c))^2) over batch and elements
template <typename T, typename Model>
TensorT<T> diffusion_loss(const Model& model, const TensorT<T>& x0, const TensorT<T>& y,
                          const TensorT<T>& c, const std::vector<int>& t, const TensorT<T>& eps,
                          const NoiseSchedule& s) {
    TensorT<T> x_t = q_sample(x0, t, eps, s);
    TensorT<T> eps_hat = model.forward(x_t, t, y, c);
    TensorT<T> d = sub(eps, eps_hat);
    return mean(mul(d, d));
}

// Ancestral sampler. Every image in the batch consumes its own RNG stream so
// grouping into batches never changes the result; draws per image are the
// initial x_T (CHW order) followed by one z per step down to t = 2.
template <typename T, typename EpsFn>
TensorT<T> ddpm_sample(EpsFn&& eps_fn, int n, int channels, int h, int w,
                       const NoiseSchedule& sched, std::vector<Rng>& rngs) {
    require(sched.T >= 1, "ddpm_sample: empty schedule");
    require(static_cast<size_t>(n) == rngs.size(),
            cat("ddpm_sample: ", rngs.size(), " rng streams for batch ", n));
    NoGradGuard ng;

    size_t per = static_cast<size_t>(channels) * h * w;
    TensorT<T> x = TensorT<T>::zeros({n, channels, h, w});
    for (int i = 0; i < n; ++i) {
        T* xi = x.data() + i * per;
        for (size_t j = 0; j < per; ++j) xi[j] = static_cast<T>(rngs[static_cast<size_t>(i)].normal());
    }

    for (int t = sched.T; t >= 1; --t) {
        TensorT<T> eps_hat = eps_fn(x, t);
        require(eps_hat.shape() == x.shape(),
                cat("ddpm_sample: model output ", shape_str(eps_hat.shape()), " vs state ",
                    shape_str(x.shape())));
        double beta = sched.beta[static_cast<size_t>(t)];
        double ab = sched.alpha_bar[static_cast<size_t>(t)];
        double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[static_cast<size_t>(t)]);
        double eps_coef = beta / std::sqrt(1.0 - ab);
        double sigma = std::sqrt(beta);

        T* xd = x.data();
        const T* ed = eps_hat.data();
        for (int i = 0; i < n; ++i) {
            T* xi = xd + i * per;
            const T* ei = ed + i * per;
            for (size_t j = 0; j < per; ++j) {
                double v = inv_sqrt_alpha * (static_cast<double>(xi[j]) - eps_coef * ei[j]);
                if (t > 1) v += sigma * rngs[static_cast<size_t>(i)].normal();
                if (!std::isfinite(v))
                    throw std::runtime_error(cat("ddpm_sample: non-finite value at step ", t));
                xi[j] = static_cast<T>(v);
            }
        }
    }

    T* xd = x.data();
    for (size_t j = 0; j < x.numel(); ++j)
        xd[j] = std::min(T(1), std::max(T(-1), xd[j]));
    return x;
}

} // namespace atvd
