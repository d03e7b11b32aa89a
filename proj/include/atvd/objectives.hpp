#pragma once

#include <cmath>

#include "atvd/rng.hpp"
#include "atvd/tensor.hpp"

namespace atvd {

// probability floor applied before logarithms
inline constexpr double kProbEps = 1e-7;

template <typename T>
struct LatentCode {
    TensorT<T> mu;
    TensorT<T> logvar;
    TensorT<T> c;   // mu + exp(logvar/2) .* eps
    TensorT<T> eps; // the recorded draw
};

// c = mu + exp(0.5 logvar) .* eps for a given draw; differentiable in mu, logvar
template <typename T>
LatentCode<T> reparameterize(const TensorT<T>& mu, const TensorT<T>& logvar,
                             const TensorT<T>& eps) {
    require(mu.shape() == logvar.shape(),
            cat("reparameterize: mu ", shape_str(mu.shape()), " vs logvar ",
                shape_str(logvar.shape())));
    require(mu.shape() == eps.shape(),
            cat("reparameterize: mu ", shape_str(mu.shape()), " vs eps ",
                shape_str(eps.shape())));
    LatentCode<T> lat;
    lat.mu = mu;
    lat.logvar = logvar;
    lat.eps = eps;
    lat.c = add(mu, mul(exp(scale(logvar, 0.5)), lat.eps));
    return lat;
}

template <typename T>
LatentCode<T> reparameterize(const TensorT<T>& mu, const TensorT<T>& logvar, Rng& rng) {
    return reparameterize(mu, logvar, TensorT<T>::randn(mu.shape(), rng));
}

// mean over elements of 0.5 (mu^2 + exp(logvar) - 1 - logvar)
template <typename T>
TensorT<T> kl_loss(const TensorT<T>& mu, const TensorT<T>& logvar) {
    require(mu.shape() == logvar.shape(),
            cat("kl_loss: mu ", shape_str(mu.shape()), " vs logvar ", shape_str(logvar.shape())));
    TensorT<T> term = sub(sub(add(mul(mu, mu), exp(logvar)), TensorT<T>::ones(mu.shape())), logvar);
    return scale(mean(term), 0.5);
}

// KL fidelity term plus pixel-wise reconstruction MSE
template <typename T>
TensorT<T> vae_loss(const TensorT<T>& y, const TensorT<T>& y_hat, const TensorT<T>& mu,
                    const TensorT<T>& logvar) {
    require(y.shape() == y_hat.shape(),
            cat("vae_loss: y ", shape_str(y.shape()), " vs y_hat ", shape_str(y_hat.shape())));
    TensorT<T> d = sub(y, y_hat);
    return add(kl_loss(mu, logvar), mean(mul(d, d)));
}

// -log D(y_hat), generator side; p_fake is the discriminator batch output {N,1}
template <typename T>
TensorT<T> adv_gen_loss(const TensorT<T>& p_fake) {
    return scale(mean(log(clamp(p_fake, kProbEps, 1.0 - kProbEps))), -1.0);
}

// -log D(y) - log(1 - D(y_hat))
template <typename T>
TensorT<T> disc_loss(const TensorT<T>& p_real, const TensorT<T>& p_fake) {
    require(p_real.shape() == p_fake.shape(),
            cat("disc_loss: p_real ", shape_str(p_real.shape()), " vs p_fake ",
                shape_str(p_fake.shape())));
    TensorT<T> real_term = mean(log(clamp(p_real, kProbEps, 1.0 - kProbEps)));
    TensorT<T> one_minus = add_scalar(scale(p_fake, -1.0), 1.0);
    TensorT<T> fake_term = mean(log(clamp(one_minus, kProbEps, 1.0 - kProbEps)));
    return scale(add(real_term, fake_term), -1.0);
}

// mean squared error between degradation-parameter vectors {N, P}
template <typename T>
TensorT<T> degrad_loss(const TensorT<T>& phi, const TensorT<T>& phi_hat) {
    require(phi.shape() == phi_hat.shape(),
            cat("degrad_loss: phi ", shape_str(phi.shape()), " vs phi_hat ",
                shape_str(phi_hat.shape())));
    TensorT<T> d = sub(phi, phi_hat);
    return mean(mul(d, d));
}

struct Lambdas {
    double l1 = 0.1; // vae
    double l2 = 0.1; // adversarial
    double l3 = 0.5; // degradation
};

// L = L_diff + l1 L_vae + l2 L_adv + l3 L_degrad
template <typename T>
TensorT<T> total_loss(const TensorT<T>& l_diff, const TensorT<T>& l_vae, const TensorT<T>& l_adv,
                      const TensorT<T>& l_degrad, const Lambdas& lam) {
    for (const TensorT<T>* t : {&l_diff, &l_vae, &l_adv, &l_degrad})
        require(std::isfinite(static_cast<double>(t->item())),
                "total_loss: non-finite loss term");
    return add(add(l_diff, scale(l_vae, lam.l1)),
               add(scale(l_adv, lam.l2), scale(l_degrad, lam.l3)));
}

} // namespace atvd
