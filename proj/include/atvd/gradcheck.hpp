#pragma once

#include <functional>
#include <string>
#include <vector>

#include "atvd/diffusion.hpp"
#include "atvd/models.hpp"
#include "atvd/objectives.hpp"
#include "atvd/tensor.hpp"

namespace atvd {

// Finite-difference verification suite over every differentiable op and every
// loss term, run at 64-bit precision on small random shapes.

struct GradCheckCase {
    std::string name;
    int instances = 20; // whole-network cases run a single instance
    std::function<double(uint64_t seed)> run; // one instance -> max rel. err
};

struct GradCheckResult {
    std::string name;
    double max_err = 0.0;
    bool pass = false;
};

class GradCheckSuite {
public:
    void add(const std::string& name, int instances, std::function<double(uint64_t)> fn) {
        cases_.push_back({name, instances, std::move(fn)});
    }

    const std::vector<GradCheckCase>& cases() const { return cases_; }

    std::vector<GradCheckResult> run(double tol, uint64_t seed) const {
        std::vector<GradCheckResult> results;
        for (const auto& c : cases_) {
            GradCheckResult r;
            r.name = c.name;
            for (int i = 0; i < c.instances; ++i) {
                uint64_t case_seed = Rng::mix(seed, Rng::mix(0x6C, static_cast<uint64_t>(i)));
                r.max_err = std::max(r.max_err, c.run(case_seed));
            }
            r.pass = r.max_err <= tol;
            results.push_back(r);
        }
        return results;
    }

private:
    std::vector<GradCheckCase> cases_;
};

// test fixture: identity forward with a deliberately wrong backward rule,
// used to prove the harness flags broken gradients
template <typename T>
TensorT<T> faulty_identity(const TensorT<T>& a) {
    auto pa = a.node();
    auto out = detail::make_op<T>(a.shape(), "faulty_identity", {a}, [pa](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += T(1.5) * self.grad[i];
    });
    std::copy(a.data(), a.data() + a.numel(), out.data());
    return out;
}

namespace detail_gc {

// random values bounded away from zero so kinked ops stay differentiable at
// every probe point
inline DTensor away_from_zero(Shape shape, Rng& rng, double lo = 0.2, double hi = 1.5) {
    DTensor t = DTensor::zeros(std::move(shape));
    for (auto& v : t.vec()) {
        double mag = rng.uniform(lo, hi);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// shrunk widths keep the central-difference sweeps over full parameter sets
// affordable
inline ModelConfig small_config() {
    ModelConfig mc;
    mc.base_width = 4;
    mc.time_dim = 4;
    mc.latent_channels = 2;
    mc.max_t = 10;
    return mc;
}

using Inputs = std::vector<DTensor>;
using Fn = std::function<DTensor(Inputs&)>;

inline double check(const Fn& f, Inputs inputs, double eps = 1e-6, double floor = 1e-8) {
    return gradient_check<double>(f, inputs, eps, floor);
}

// derivative coordinates below this magnitude are judged on an absolute scale
// during full-parameter sweeps: the pass condition degrades to
// |analytic - numeric| <= tol * kNetFloor, which absorbs the rounding noise a
// large forward graph leaves in the difference quotient while staying far
// below the eps-independent error a wrong backward produces
inline constexpr double kNetFloor = 1e-4;

// parameter handles share storage with the model, so perturbing the copies
// perturbs the live network
template <typename M>
Inputs param_handles(const M& model) {
    Inputs in;
    for (const auto& [name, t] : model.params().items()) in.push_back(t);
    return in;
}

} // namespace detail_gc

inline GradCheckSuite make_gradcheck_suite(bool inject_fault = false) {
    using namespace detail_gc;
    GradCheckSuite suite;

    auto sq_sum = [](const DTensor& t) { return sum(mul(t, t)); };

    suite.add("add", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 3, 4}, rng), DTensor::randn({2, 3, 4}, rng)};
        return check([&](Inputs& v) { return sum(mul(add(v[0], v[1]), add(v[0], v[1]))); }, in);
    });
    suite.add("sub", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({3, 5}, rng), DTensor::randn({3, 5}, rng)};
        return check([&](Inputs& v) { return sum(mul(sub(v[0], v[1]), v[0])); }, in);
    });
    suite.add("mul", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({4, 4}, rng), DTensor::randn({4, 4}, rng)};
        return check([&](Inputs& v) { return sum(mul(v[0], v[1])); }, in);
    });
    suite.add("scale", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({6}, rng)};
        return check([&](Inputs& v) { return sum(mul(scale(v[0], -1.7), scale(v[0], 0.3))); }, in);
    });
    suite.add("add_scalar", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 7}, rng)};
        return check([&](Inputs& v) { return sum(mul(add_scalar(v[0], 0.4), v[0])); }, in);
    });
    suite.add("scale_per_sample", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({3, 2, 2, 2}, rng)};
        std::vector<double> coef{0.5, -1.2, 2.0};
        return check(
            [&](Inputs& v) {
                auto y = scale_per_sample(v[0], coef);
                return sum(mul(y, y));
            },
            in);
    });
    suite.add("relu", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{away_from_zero({3, 4}, rng)};
        return check([&](Inputs& v) { return sum(mul(relu(v[0]), v[0])); }, in);
    });
    suite.add("leaky_relu", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{away_from_zero({3, 4}, rng)};
        return check([&](Inputs& v) { return sum(mul(leaky_relu(v[0], 0.2), v[0])); }, in);
    });
    suite.add("sigmoid", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({5}, rng)};
        return check([&](Inputs& v) { return sq_sum(sigmoid(v[0])); }, in);
    });
    suite.add("exp", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::uniform({4}, rng, -1.0, 1.0)};
        return check([&](Inputs& v) { return sum(exp(v[0])); }, in);
    });
    suite.add("log", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::uniform({4}, rng, 0.3, 2.0)};
        return check([&](Inputs& v) { return sum(mul(log(v[0]), v[0])); }, in);
    });
    suite.add("clamp", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        // keep probe points clear of the clamp boundaries at +-1
        Inputs in{away_from_zero({6}, rng, 0.1, 0.8)};
        return check([&](Inputs& v) { return sq_sum(clamp(v[0], -1.0, 1.0)); }, in);
    });
    suite.add("sum", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({3, 3}, rng)};
        return check([](Inputs& v) { return sum(v[0]); }, in);
    });
    suite.add("mean", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 6}, rng)};
        return check([&](Inputs& v) { return mean(mul(v[0], v[0])); }, in);
    });
    suite.add("concat_channels", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 2, 3, 3}, rng), DTensor::randn({2, 1, 3, 3}, rng)};
        return check([&](Inputs& v) { return sq_sum(concat_channels(v[0], v[1])); }, in);
    });
    suite.add("slice_channels", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 4, 3, 3}, rng)};
        return check([&](Inputs& v) { return sq_sum(slice_channels(v[0], 1, 3)); }, in);
    });
    suite.add("down2", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({1, 2, 4, 4}, rng)};
        return check([&](Inputs& v) { return sq_sum(down2(v[0])); }, in);
    });
    suite.add("up2_nearest", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({1, 2, 3, 3}, rng)};
        return check([&](Inputs& v) { return sq_sum(up2_nearest(v[0])); }, in);
    });
    suite.add("conv2d", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 2, 5, 5}, rng), DTensor::randn({3, 2, 3, 3}, rng),
                  DTensor::randn({3}, rng)};
        return check([&](Inputs& v) { return sq_sum(conv2d(v[0], v[1], v[2], 2, 1)); }, in);
    });
    suite.add("linear", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 3}, rng), DTensor::randn({4, 3}, rng),
                  DTensor::randn({4}, rng)};
        return check([&](Inputs& v) { return sq_sum(linear(v[0], v[1], v[2])); }, in);
    });
    suite.add("add_chan", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 3, 4, 4}, rng), DTensor::randn({2, 3}, rng)};
        return check([&](Inputs& v) { return sq_sum(add_chan(v[0], v[1])); }, in);
    });
    suite.add("global_avg_pool", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 3, 4, 4}, rng)};
        return check([&](Inputs& v) { return sq_sum(global_avg_pool(v[0])); }, in);
    });
    suite.add("spectral_scale", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({3, 8}, rng)};
        // u and v are held fixed: the analytic rule treats them as constants,
        // which is exact only while they do not track w
        Rng uv_rng(Rng::mix(s, 0xD1));
        std::vector<double> u(3), v(8);
        for (auto& x : u) x = uv_rng.normal();
        for (auto& x : v) x = uv_rng.normal();
        auto normalize = [](std::vector<double>& w) {
            double n = 0.0;
            for (double x : w) n += x * x;
            n = std::sqrt(std::max(n, 1e-24));
            for (double& x : w) x /= n;
        };
        normalize(u);
        normalize(v);
        return check([&](Inputs& t) { return sq_sum(spectral_scale(t[0], u, v)); }, in);
    });
    suite.add("q_sample", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        NoiseSchedule sched = make_schedule(10, 1e-3, 0.2);
        Inputs in{DTensor::randn({2, 1, 3, 3}, rng), DTensor::randn({2, 1, 3, 3}, rng)};
        std::vector<int> t{3, 7};
        return check([&](Inputs& v) { return sq_sum(q_sample(v[0], t, v[1], sched)); }, in);
    });
    suite.add("reparameterize", 20, [sq_sum](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 4, 2, 2}, rng),
                  DTensor::uniform({2, 4, 2, 2}, rng, -1.0, 1.0)};
        DTensor eps = DTensor::randn({2, 4, 2, 2}, rng);
        return check([&](Inputs& v) { return sq_sum(reparameterize(v[0], v[1], eps).c); }, in);
    });
    suite.add("kl_loss", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({2, 4, 2, 2}, rng),
                  DTensor::uniform({2, 4, 2, 2}, rng, -1.0, 1.0)};
        return check([&](Inputs& v) { return kl_loss(v[0], v[1]); }, in);
    });
    suite.add("vae_loss", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({1, 3, 4, 4}, rng), DTensor::randn({1, 3, 4, 4}, rng),
                  DTensor::randn({1, 2, 2, 2}, rng),
                  DTensor::uniform({1, 2, 2, 2}, rng, -1.0, 1.0)};
        return check([&](Inputs& v) { return vae_loss(v[0], v[1], v[2], v[3]); }, in);
    });
    suite.add("adv_gen_loss", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::uniform({3, 1}, rng, 0.1, 0.9)};
        return check([&](Inputs& v) { return adv_gen_loss(v[0]); }, in);
    });
    suite.add("disc_loss", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::uniform({3, 1}, rng, 0.1, 0.9),
                  DTensor::uniform({3, 1}, rng, 0.1, 0.9)};
        return check([&](Inputs& v) { return disc_loss(v[0], v[1]); }, in);
    });
    suite.add("degrad_loss", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::uniform({2, 3}, rng, 0.0, 1.0),
                  DTensor::uniform({2, 3}, rng, 0.0, 1.0)};
        return check([&](Inputs& v) { return degrad_loss(v[0], v[1]); }, in);
    });
    suite.add("total_loss", 20, [](uint64_t s) {
        Rng rng(s);
        Inputs in{DTensor::randn({1}, rng), DTensor::randn({1}, rng), DTensor::randn({1}, rng),
                  DTensor::randn({1}, rng)};
        Lambdas lam;
        return check([&](Inputs& v) { return total_loss(v[0], v[1], v[2], v[3], lam); }, in);
    });

    // whole-network cases: the composite objectives differentiated through the
    // actual models with respect to every parameter tensor
    suite.add("unet_forward_params", 1, [sq_sum](uint64_t s) {
        Rng rng(Rng::mix(s, 0xA1));
        ModelConfig mc = small_config();
        UNetModel<double> unet(mc, rng);
        Rng data(Rng::mix(s, 0xA2));
        DTensor x_t = DTensor::randn({1, 3, 8, 8}, data);
        DTensor y = DTensor::randn({1, 3, 8, 8}, data);
        DTensor c = DTensor::randn({1, mc.latent_channels, 4, 4}, data);
        std::vector<int> t{3};
        return check([&](Inputs&) { return sq_sum(unet.forward(x_t, t, y, c)); },
                     param_handles(unet), 1e-5, kNetFloor);
    });
    suite.add("unet_input_grad", 1, [](uint64_t s) {
        Rng rng(Rng::mix(s, 0xA3));
        ModelConfig mc = small_config();
        UNetModel<double> unet(mc, rng);
        Rng data(Rng::mix(s, 0xA4));
        DTensor y = DTensor::randn({1, 3, 8, 8}, data);
        DTensor c = DTensor::randn({1, mc.latent_channels, 4, 4}, data);
        std::vector<int> t{5};
        Inputs in{DTensor::randn({1, 3, 8, 8}, data)};
        return check([&](Inputs& v) { return mean(unet.forward(v[0], t, y, c)); }, in, 1e-5,
                     kNetFloor);
    });
    suite.add("diffusion_loss_params", 1, [](uint64_t s) {
        Rng rng(Rng::mix(s, 0xB1));
        ModelConfig mc = small_config();
        UNetModel<double> unet(mc, rng);
        NoiseSchedule sched = make_schedule(10, 1e-3, 0.2);
        Rng data(Rng::mix(s, 0xB2));
        DTensor x0 = DTensor::randn({1, 3, 8, 8}, data);
        DTensor y = DTensor::randn({1, 3, 8, 8}, data);
        DTensor c = DTensor::randn({1, mc.latent_channels, 4, 4}, data);
        DTensor eps = DTensor::randn({1, 3, 8, 8}, data);
        std::vector<int> t{6};
        return check([&](Inputs&) { return diffusion_loss(unet, x0, y, c, t, eps, sched); },
                     param_handles(unet), 1e-5, kNetFloor);
    });
    suite.add("encoder_mu_params", 1, [](uint64_t s) {
        Rng rng(Rng::mix(s, 0xC3));
        ModelConfig mc = small_config();
        EncoderModel<double> enc(mc, rng);
        Rng data(Rng::mix(s, 0xC4));
        DTensor y = DTensor::randn({1, 3, 8, 8}, data);
        return check([&](Inputs&) { return sum(enc.encode(y).first); }, param_handles(enc), 1e-5,
                     kNetFloor);
    });
    suite.add("vae_loss_params", 1, [](uint64_t s) {
        Rng rng(Rng::mix(s, 0xC1));
        ModelConfig mc = small_config();
        EncoderModel<double> enc(mc, rng);
        DecoderModel<double> dec(mc, rng);
        Rng data(Rng::mix(s, 0xC2));
        DTensor y = DTensor::randn({1, 3, 8, 8}, data);
        DTensor eps = DTensor::randn({1, mc.latent_channels, 4, 4}, data);
        Inputs in = param_handles(enc);
        for (const auto& t : param_handles(dec)) in.push_back(t);
        return check(
            [&](Inputs&) {
                auto [mu, logvar] = enc.encode(y);
                DTensor c = reparameterize(mu, logvar, eps).c;
                return vae_loss(y, dec.decode(c), mu, logvar);
            },
            in, 1e-5, kNetFloor);
    });
    suite.add("disc_loss_params", 1, [](uint64_t s) {
        Rng rng(Rng::mix(s, 0xD2));
        ModelConfig mc = small_config();
        DiscriminatorModel<double> disc(mc, rng);
        // at the all-zero bias init the late preactivations collapse to ~1e-6
        // and sit on the LeakyReLU kinks, where central differences step
        // across; random biases move the check to a generic point
        for (int i = 0; i < DiscriminatorModel<double>::layer_count(); ++i)
            for (auto& x : disc.layer(i).conv.b.vec()) x = 0.05 * rng.normal();
        Rng data(Rng::mix(s, 0xD3));
        DTensor real = DTensor::randn({1, 3, 8, 8}, data);
        DTensor fake = DTensor::randn({1, 3, 8, 8}, data);
        return check(
            [&](Inputs&) {
                // frozen power-iteration state keeps sigma a pure function of w
                return disc_loss(disc.forward(real, false), disc.forward(fake, false));
            },
            param_handles(disc), 1e-5, kNetFloor);
    });
    suite.add("degrad_loss_params", 1, [](uint64_t s) {
        Rng rng(Rng::mix(s, 0xE1));
        ModelConfig mc = small_config();
        ParamHeadModel<double> head(mc, rng);
        Rng data(Rng::mix(s, 0xE2));
        DTensor c = DTensor::randn({1, mc.latent_channels, 4, 4}, data);
        DTensor phi = DTensor::uniform({1, 3}, data, 0.0, 1.0);
        return check([&](Inputs&) { return degrad_loss(phi, head.forward(c)); },
                     param_handles(head), 1e-5, kNetFloor);
    });

    if (inject_fault) {
        suite.add("fault_injection_probe", 1, [](uint64_t s) {
            Rng rng(s);
            Inputs in{DTensor::randn({3, 3}, rng)};
            return check([](Inputs& v) { return sum(mul(faulty_identity(v[0]), v[0])); }, in);
        });
    }

    return suite;
}

} // namespace atvd
