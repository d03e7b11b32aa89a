#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "atvd/common.hpp"
#include "atvd/diffusion.hpp"
#include "atvd/rng.hpp"
#include "atvd/tensor.hpp"

using atvd::contract_error;
using atvd::DTensor;
using atvd::make_schedule;
using atvd::NoiseSchedule;
using atvd::Rng;

namespace {

double max_abs_diff(const DTensor& a, const DTensor& b) {
    REQUIRE(a.numel() == b.numel());
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// stub predictor for diffusion_loss: echoes the injected noise plus a constant
struct OffsetPredictor {
    const DTensor* eps = nullptr;
    double offset = 0.0;

    DTensor forward(const DTensor&, const std::vector<int>&, const DTensor&,
                    const DTensor&) const {
        return atvd::add(*eps, DTensor::full(eps->shape(), offset));
    }
};

} // namespace

TEST_CASE("linear schedule interpolates beta between its endpoints") {
    NoiseSchedule s = make_schedule(100, 1e-3, 0.2);
    CHECK(s.T == 100);
    CHECK(s.beta.size() == 101);
    CHECK(s.alpha.size() == 101);
    CHECK(s.alpha_bar.size() == 101);
    CHECK(s.beta[1] == 1e-3);
    CHECK(s.beta[100] == doctest::Approx(0.2).epsilon(1e-14));
    // halfway through the lattice sits halfway between the endpoints
    double mid = 1e-3 + (0.2 - 1e-3) * 49.0 / 99.0;
    CHECK(s.beta[50] == doctest::Approx(mid).epsilon(1e-14));
    for (int t = 1; t <= 100; ++t) CHECK(s.alpha[t] == 1.0 - s.beta[t]);
}

TEST_CASE("schedule invariants hold across the valid parameter domain") {
    struct Pick {
        int T;
        double bs, be;
    };
    const Pick picks[] = {{1, 0.5, 0.5},     {2, 1e-4, 0.02}, {5, 1e-3, 0.2},
                          {100, 1e-3, 0.2},  {1000, 1e-4, 0.02}, {7, 0.3, 0.3}};
    for (const Pick& p : picks) {
        CAPTURE(p.T);
        NoiseSchedule s = make_schedule(p.T, p.bs, p.be);
        long double prod = 1.0L;
        for (int t = 1; t <= p.T; ++t) {
            CHECK(s.beta[t] > 0.0);
            CHECK(s.beta[t] < 1.0);
            if (t > 1 && p.bs < p.be) CHECK(s.beta[t] > s.beta[t - 1]);
            if (t > 1) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            prod *= static_cast<long double>(s.alpha[t]);
            double recomputed = static_cast<double>(prod);
            CHECK(std::abs(s.alpha_bar[t] - recomputed) <= 1e-12 * recomputed);
        }
        CHECK(s.alpha_bar[1] < 1.0);
        if (p.T > 1) CHECK(s.alpha_bar[p.T] < s.alpha_bar[1]);
    }
}

TEST_CASE("thousand step schedule reaches the expected cumulative products") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    CHECK(s.alpha_bar[1] == 1.0 - 1e-4);
    CHECK(s.alpha_bar[1000] == doctest::Approx(4.04e-5).epsilon(1e-2));
}

TEST_CASE("single step schedule degenerates to its start value") {
    NoiseSchedule s = make_schedule(1, 0.5, 0.5);
    CHECK(s.T == 1);
    CHECK(s.beta[1] == 0.5);
    CHECK(s.alpha[1] == 0.5);
    CHECK(s.alpha_bar[1] == 0.5);
}

TEST_CASE("schedule construction rejects invalid arguments") {
    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), contract_error);
    CHECK_THROWS_AS(make_schedule(-3, 1e-4, 0.02), contract_error);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), contract_error);
    CHECK_THROWS_AS(make_schedule(10, -1e-4, 0.02), contract_error);
    CHECK_THROWS_AS(make_schedule(10, 0.02, 1e-4), contract_error);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), contract_error);
}

TEST_CASE("q_sample closed forms at exactly representable products") {
    // beta 0.75 makes alpha_bar exactly 0.25, so the clean coefficient is 0.5
    NoiseSchedule s = make_schedule(1, 0.75, 0.75);
    DTensor x0 = DTensor::ones({1, 1, 2, 2});
    DTensor eps = DTensor::zeros({1, 1, 2, 2});
    DTensor xt = atvd::q_sample(x0, 1, eps, s);
    for (size_t i = 0; i < xt.numel(); ++i) CHECK(xt.data()[i] == 0.5);

    // vanishing beta keeps the sample on the clean image
    NoiseSchedule tiny = make_schedule(5, 1e-6, 1e-6);
    Rng rng(41);
    DTensor x1 = DTensor::randn({1, 2, 3, 3}, rng);
    DTensor z = DTensor::zeros({1, 2, 3, 3});
    DTensor near = atvd::q_sample(x1, 5, z, tiny);
    for (size_t i = 0; i < near.numel(); ++i)
        CHECK(near.data()[i] == doctest::Approx(x1.data()[i]).epsilon(1e-4));

    // zero clean image leaves only the scaled noise term
    DTensor zeros = DTensor::zeros({1, 1, 2, 2});
    DTensor n = DTensor::randn({1, 1, 2, 2}, rng);
    DTensor noise_only = atvd::q_sample(zeros, 1, n, s);
    double coef = std::sqrt(1.0 - s.alpha_bar[1]);
    for (size_t i = 0; i < n.numel(); ++i) CHECK(noise_only.data()[i] == coef * n.data()[i]);
}

TEST_CASE("q_sample validates step index and shapes") {
    NoiseSchedule s = make_schedule(10, 1e-3, 0.2);
    DTensor x0 = DTensor::zeros({1, 1, 2, 2});
    DTensor eps = DTensor::zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(atvd::q_sample(x0, 0, eps, s), contract_error);
    CHECK_THROWS_AS(atvd::q_sample(x0, 11, eps, s), contract_error);
    DTensor bad = DTensor::zeros({1, 1, 2, 3});
    CHECK_THROWS_AS(atvd::q_sample(x0, 1, bad, s), contract_error);
    CHECK_THROWS_AS(atvd::q_sample(x0, std::vector<int>{1, 1}, eps, s), contract_error);
    CHECK_THROWS_AS(atvd::q_sample(x0, std::vector<int>{0}, eps, s), contract_error);
}

TEST_CASE("batched q_sample matches the scalar form per sample") {
    NoiseSchedule s = make_schedule(10, 1e-3, 0.2);
    Rng rng(7);
    DTensor x0 = DTensor::randn({3, 2, 4, 4}, rng);
    DTensor eps = DTensor::randn({3, 2, 4, 4}, rng);
    std::vector<int> t = {1, 7, 10};
    DTensor batched = atvd::q_sample(x0, t, eps, s);
    size_t per = x0.numel() / 3;
    for (int i = 0; i < 3; ++i) {
        DTensor whole = atvd::q_sample(x0, t[static_cast<size_t>(i)], eps, s);
        for (size_t j = 0; j < per; ++j) {
            size_t k = static_cast<size_t>(i) * per + j;
            CHECK(batched.data()[k] == whole.data()[k]);
        }
    }
}

TEST_CASE("forward marginal matches its analytic moments over many draws") {
    NoiseSchedule s = make_schedule(100, 1e-3, 0.2);
    const int t = 60;
    const double x0 = 0.7;
    const double ab = s.alpha_bar[t];
    const int draws = 10000;

    Rng rng(11);
    DTensor clean = DTensor::full({1, 1, 1, 1}, x0);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < draws; ++i) {
        DTensor eps = DTensor::randn({1, 1, 1, 1}, rng);
        double v = atvd::q_sample(clean, t, eps, s).item();
        sum += v;
        sum_sq += v * v;
    }
    double mean = sum / draws;
    double var = sum_sq / draws - mean * mean;
    CHECK(std::abs(mean - std::sqrt(ab) * x0) <= 3.0 * std::sqrt((1.0 - ab) / draws));
    CHECK(var == doctest::Approx(1.0 - ab).epsilon(0.05));
}

TEST_CASE("expected distance from the clean image grows with t") {
    NoiseSchedule s = make_schedule(100, 1e-3, 0.2);
    Rng rng(13);
    DTensor x0 = DTensor::randn({1, 3, 8, 8}, rng);
    const int steps[] = {1, 25, 60, 100};
    double prev = -1.0;
    for (int t : steps) {
        double acc = 0.0;
        for (int i = 0; i < 1000; ++i) {
            DTensor eps = DTensor::randn({1, 3, 8, 8}, rng);
            DTensor d = atvd::sub(atvd::q_sample(x0, t, eps, s), x0);
            acc += std::sqrt(atvd::sum(atvd::mul(d, d)).item());
        }
        double mean_dist = acc / 1000.0;
        CHECK(mean_dist > prev);
        prev = mean_dist;
    }
}

TEST_CASE("diffusion loss closed forms with stub predictors") {
    NoiseSchedule s = make_schedule(10, 1e-3, 0.2);
    Rng rng(17);
    DTensor x0 = DTensor::randn({2, 3, 4, 4}, rng);
    DTensor eps = DTensor::randn({2, 3, 4, 4}, rng);
    DTensor y = DTensor::zeros({2, 3, 4, 4});
    DTensor c = DTensor::zeros({2, 2, 2, 2});
    std::vector<int> t = {2, 9};

    OffsetPredictor exact{&eps, 0.0};
    CHECK(atvd::diffusion_loss(exact, x0, y, c, t, eps, s).item() == 0.0);

    OffsetPredictor off_by_one{&eps, 1.0};
    CHECK(atvd::diffusion_loss(off_by_one, x0, y, c, t, eps, s).item() ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two step sampler matches the hand unrolled recursion") {
    NoiseSchedule s = make_schedule(2, 0.1, 0.3);
    const uint64_t seed = 29;

    for (double eps_hat : {0.0, 0.2}) {
        CAPTURE(eps_hat);
        auto eps_fn = [&](const DTensor& x, int) { return DTensor::full(x.shape(), eps_hat); };
        std::vector<Rng> rngs{Rng::derive(seed, {atvd::stream::sample, 0})};
        DTensor out = atvd::ddpm_sample<double>(eps_fn, 1, 1, 1, 1, s, rngs);

        Rng replay = Rng::derive(seed, {atvd::stream::sample, 0});
        double x2 = replay.normal();
        double z = replay.normal();
        double x1 = (x2 - s.beta[2] / std::sqrt(1.0 - s.alpha_bar[2]) * eps_hat) /
                        std::sqrt(s.alpha[2]) +
                    std::sqrt(s.beta[2]) * z;
        double expect = (x1 - s.beta[1] / std::sqrt(1.0 - s.alpha_bar[1]) * eps_hat) /
                        std::sqrt(s.alpha[1]);
        expect = std::min(1.0, std::max(-1.0, expect));
        CHECK(out.item() == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("sampler is seed deterministic and seed sensitive") {
    NoiseSchedule s = make_schedule(20, 1e-3, 0.2);
    auto eps_fn = [](const DTensor& x, int) { return atvd::scale(x, 0.1); };
    auto run = [&](uint64_t seed) {
        std::vector<Rng> rngs{Rng::derive(seed, {atvd::stream::sample, 0}),
                              Rng::derive(seed, {atvd::stream::sample, 1})};
        return atvd::ddpm_sample<double>(eps_fn, 2, 3, 6, 6, s, rngs);
    };
    DTensor a = run(5);
    DTensor b = run(5);
    CHECK(max_abs_diff(a, b) == 0.0);
    DTensor other = run(6);
    CHECK(max_abs_diff(a, other) > 0.0);
}

TEST_CASE("batching never changes a sample because streams are per image") {
    NoiseSchedule s = make_schedule(15, 1e-3, 0.2);
    auto eps_fn = [](const DTensor& x, int) { return atvd::scale(x, 0.05); };
    std::vector<Rng> pair{Rng::derive(3, {atvd::stream::sample, 0}),
                          Rng::derive(3, {atvd::stream::sample, 1})};
    DTensor both = atvd::ddpm_sample<double>(eps_fn, 2, 2, 4, 4, s, pair);

    size_t per = both.numel() / 2;
    for (int i = 0; i < 2; ++i) {
        std::vector<Rng> solo{Rng::derive(3, {atvd::stream::sample, static_cast<uint64_t>(i)})};
        DTensor one = atvd::ddpm_sample<double>(eps_fn, 1, 2, 4, 4, s, solo);
        for (size_t j = 0; j < per; ++j)
            CHECK(one.data()[j] == both.data()[static_cast<size_t>(i) * per + j]);
    }
}

TEST_CASE("sampler output respects the clipping contract") {
    // with a zero predictor the reverse recursion amplifies the state far past
    // the image range, so the final clip has to engage
    NoiseSchedule s = make_schedule(100, 1e-3, 0.2);
    auto eps_fn = [](const DTensor& x, int) { return DTensor::zeros(x.shape()); };
    std::vector<Rng> rngs{Rng::derive(23, {atvd::stream::sample, 0})};
    DTensor out = atvd::ddpm_sample<double>(eps_fn, 1, 3, 8, 8, s, rngs);
    bool saw_low = false, saw_high = false;
    for (size_t i = 0; i < out.numel(); ++i) {
        CHECK(out.data()[i] >= -1.0);
        CHECK(out.data()[i] <= 1.0);
        saw_low = saw_low || out.data()[i] == -1.0;
        saw_high = saw_high || out.data()[i] == 1.0;
    }
    CHECK(saw_low);
    CHECK(saw_high);
}

TEST_CASE("sampler rejects bad stream counts and bad predictor shapes") {
    NoiseSchedule s = make_schedule(5, 1e-3, 0.2);
    auto ok = [](const DTensor& x, int) { return DTensor::zeros(x.shape()); };
    std::vector<Rng> one{Rng(1)};
    CHECK_THROWS_AS(atvd::ddpm_sample<double>(ok, 2, 1, 2, 2, s, one), contract_error);

    auto wrong_shape = [](const DTensor& x, int) {
        atvd::Shape sh = x.shape();
        sh.back() += 1;
        return DTensor::zeros(sh);
    };
    std::vector<Rng> rngs{Rng(1)};
    CHECK_THROWS_AS(atvd::ddpm_sample<double>(wrong_shape, 1, 1, 2, 2, s, rngs), contract_error);
}

TEST_CASE("sampler aborts on non finite values and names the step") {
    NoiseSchedule s = make_schedule(4, 1e-3, 0.2);
    auto blow_up = [](const DTensor& x, int) {
        return DTensor::full(x.shape(), std::numeric_limits<double>::infinity());
    };
    std::vector<Rng> rngs{Rng(9)};
    try {
        atvd::ddpm_sample<double>(blow_up, 1, 1, 2, 2, s, rngs);
        FAIL("expected a runtime_error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("step 4") != std::string::npos);
    }
}

TEST_CASE("oracle predictor reproduces the analytic chain mean") {
    // the oracle recovers the exact noise that separates the state from a
    // known clean value, so the sampler mean must follow the affine recursion
    // E[x_{t-1}] = a_t E[x_t] + b_t x0 computed from the schedule alone
    NoiseSchedule s = make_schedule(3, 1e-3, 0.2);
    const double x0 = 0.4;

    double mean_state = 0.0; // E[x_T] for a standard normal start
    for (int t = 3; t >= 1; --t) {
        double ab = s.alpha_bar[t];
        double a = (1.0 - s.beta[t] / (1.0 - ab)) / std::sqrt(s.alpha[t]);
        double b = std::sqrt(ab) * s.beta[t] / (std::sqrt(s.alpha[t]) * (1.0 - ab));
        mean_state = a * mean_state + b * x0;
    }
    double analytic = std::min(1.0, std::max(-1.0, mean_state));

    auto oracle = [&](const DTensor& x, int t) {
        double ab = s.alpha_bar[t];
        DTensor shifted = atvd::sub(x, DTensor::full(x.shape(), std::sqrt(ab) * x0));
        return atvd::scale(shifted, 1.0 / std::sqrt(1.0 - ab));
    };

    const int runs = 400;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < runs; ++i) {
        std::vector<Rng> rngs{Rng::derive(31, {atvd::stream::sample, static_cast<uint64_t>(i)})};
        double v = atvd::ddpm_sample<double>(oracle, 1, 1, 1, 1, s, rngs).item();
        sum += v;
        sum_sq += v * v;
    }
    double mc_mean = sum / runs;
    double mc_var = std::max(0.0, sum_sq / runs - mc_mean * mc_mean);
    double tol = std::max(3.0 * std::sqrt(mc_var / runs), 1e-9);
    CHECK(std::abs(mc_mean - analytic) <= tol);
}
