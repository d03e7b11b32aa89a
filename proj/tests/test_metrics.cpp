#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "atvd/common.hpp"
#include "atvd/image.hpp"
#include "atvd/metrics.hpp"
#include "atvd/rng.hpp"

using atvd::contract_error;
using atvd::Image;
using atvd::Rng;

namespace {

Image random_image(int channels, int h, int w, uint64_t seed, double scale = 1.0,
                   double shift = 0.0) {
    Image img = atvd::make_image(channels, h, w);
    Rng rng(seed);
    for (auto& v : img.data) v = static_cast<float>(scale * rng.normal() + shift);
    return img;
}

Image offset_image(const Image& src, float delta) {
    Image out = src;
    for (auto& v : out.data) v += delta;
    return out;
}

// window statistics via raw power sums instead of the two-pass centered form
double ssim_reference(const Image& a, const Image& b) {
    const int h = a.height, w = a.width, win = 8;
    const double c1 = (0.01 * 2.0) * (0.01 * 2.0);
    const double c2 = (0.03 * 2.0) * (0.03 * 2.0);
    std::vector<float> la(static_cast<size_t>(h) * w), lb(la.size());
    for (size_t i = 0; i < la.size(); ++i) {
        la[i] = 0.299f * a.data[i] + 0.587f * a.data[la.size() + i] +
                0.114f * a.data[2 * la.size() + i];
        lb[i] = 0.299f * b.data[i] + 0.587f * b.data[la.size() + i] +
                0.114f * b.data[2 * la.size() + i];
    }
    double total = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + win <= h; ++y0)
        for (int x0 = 0; x0 + win <= w; ++x0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int y = y0; y < y0 + win; ++y)
                for (int x = x0; x < x0 + win; ++x) {
                    double va = la[static_cast<size_t>(y) * w + x];
                    double vb = lb[static_cast<size_t>(y) * w + x];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double n = win * win;
            double ma = sa / n, mb = sb / n;
            double var_a = (saa - n * ma * ma) / (n - 1);
            double var_b = (sbb - n * mb * mb) / (n - 1);
            double cov = (sab - n * ma * mb) / (n - 1);
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            ++count;
        }
    return total / count;
}

} // namespace

TEST_CASE("psnr closed forms at fixed offsets") {
    Image a = random_image(3, 10, 12, 5);
    CHECK(atvd::psnr(a, a) == 100.0);

    CHECK(atvd::psnr(a, offset_image(a, 0.1f), 1.0) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(atvd::psnr(a, offset_image(a, 0.01f), 1.0) == doctest::Approx(40.0).epsilon(1e-6));

    // model images span [-1, 1], so the default range doubles the numerator
    double expect = 10.0 * std::log10(4.0 / 0.01);
    CHECK(atvd::psnr(a, offset_image(a, 0.1f)) == doctest::Approx(expect).epsilon(1e-6));

    Image small = atvd::make_image(3, 9, 12);
    CHECK_THROWS_AS(atvd::psnr(a, small), contract_error);
    CHECK_THROWS_AS(atvd::psnr(a, a, 0.0), contract_error);
    CHECK_THROWS_AS(atvd::psnr(a, a, -2.0), contract_error);
}

TEST_CASE("psnr cap engages only below the mse floor") {
    Image a = random_image(3, 8, 8, 7);
    CHECK(atvd::psnr(a, offset_image(a, 1e-6f)) == 100.0);
    double near = atvd::psnr(a, offset_image(a, 1e-4f));
    CHECK(near < 100.0);
    CHECK(near == doctest::Approx(10.0 * std::log10(4.0 / 1e-8)).epsilon(1e-3));
}

TEST_CASE("psnr decreases as noise grows") {
    Image a = random_image(3, 16, 16, 9, 0.4);
    double prev = 1e9;
    for (float amp : {0.05f, 0.1f, 0.2f}) {
        Image noisy = a;
        Rng rng(31);
        for (auto& v : noisy.data) v += amp * static_cast<float>(rng.normal());
        double p = atvd::psnr(a, noisy);
        CHECK(p < prev);
        CHECK(p >= 0.0);
        prev = p;
    }
}

TEST_CASE("luma conversion uses the standard weights") {
    Image img = atvd::make_image(3, 1, 2);
    img.at(0, 0, 0) = 1.0f;
    img.at(1, 0, 0) = 0.5f;
    img.at(2, 0, 0) = -0.25f;
    img.at(0, 0, 1) = 0.0f;
    img.at(1, 0, 1) = 1.0f;
    img.at(2, 0, 1) = 0.0f;
    std::vector<float> y = atvd::to_luma(img);
    CHECK(y[0] == 0.299f * 1.0f + 0.587f * 0.5f + 0.114f * -0.25f);
    CHECK(y[1] == 0.587f);

    Image gray = atvd::make_image(1, 1, 2);
    gray.at(0, 0, 1) = 0.75f;
    std::vector<float> pass = atvd::to_luma(gray);
    CHECK(pass[0] == 0.0f);
    CHECK(pass[1] == 0.75f);

    Image two = atvd::make_image(2, 4, 4);
    CHECK_THROWS_AS(atvd::to_luma(two), contract_error);
}

TEST_CASE("ssim identity, anticorrelation, and range") {
    Image a = random_image(3, 12, 10, 11, 0.5);
    CHECK(atvd::ssim(a, a) == 1.0);

    // zero-mean windows keep the luminance term at one, so the flipped
    // covariance drives the score negative
    Image board = atvd::make_image(3, 12, 10);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 10; ++x) board.at(c, y, x) = ((x + y) % 2 == 0) ? 0.5f : -0.5f;
    Image neg = board;
    for (auto& v : neg.data) v = -v;
    CHECK(atvd::ssim(board, neg) < 0.0);

    for (uint64_t s = 0; s < 20; ++s) {
        Image x = random_image(3, 9, 9, 100 + s, 0.5);
        Image y = random_image(3, 9, 9, 200 + s, 0.5);
        double v = atvd::ssim(x, y);
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }

    Image tiny = atvd::make_image(3, 7, 9);
    CHECK_THROWS_AS(atvd::ssim(tiny, tiny), contract_error);
    Image other = atvd::make_image(3, 12, 11);
    CHECK_THROWS_AS(atvd::ssim(a, other), contract_error);
}

TEST_CASE("ssim matches a brute force window evaluation") {
    for (uint64_t s = 0; s < 5; ++s) {
        Image a = random_image(3, 12, 10, 300 + s, 0.5);
        Image b = a;
        Rng rng(400 + s);
        for (auto& v : b.data) v += 0.1f * static_cast<float>(rng.normal());
        CHECK(atvd::ssim(a, b) == doctest::Approx(ssim_reference(a, b)).epsilon(1e-10));
    }
}

TEST_CASE("patch frechet vanishes on identical sets and is symmetric") {
    std::vector<Image> set_a, set_b;
    for (int i = 0; i < 4; ++i) {
        set_a.push_back(random_image(3, 16, 16, 500 + static_cast<uint64_t>(i), 0.4));
        set_b.push_back(random_image(3, 16, 16, 600 + static_cast<uint64_t>(i), 0.4));
    }
    CHECK(atvd::patch_frechet(set_a, set_a, 5, 500, 3) <= 1e-8);
    double ab = atvd::patch_frechet(set_a, set_b, 5, 500, 3);
    double ba = atvd::patch_frechet(set_b, set_a, 5, 500, 3);
    CHECK(std::abs(ab - ba) <= 1e-8);
    CHECK(ab >= 0.0);
}

TEST_CASE("patch frechet on constant corpora reduces to the mean gap") {
    // zero covariance leaves only |mu_a - mu_b|^2 = dim * offset^2
    std::vector<Image> set_a(3, atvd::make_image(3, 12, 12, 0.25f));
    std::vector<Image> set_b(3, atvd::make_image(3, 12, 12, 0.5f));
    double d = atvd::patch_frechet(set_a, set_b, 3, 50, 7);
    CHECK(d == doctest::Approx(27 * 0.0625).epsilon(1e-9));
}

TEST_CASE("patch frechet recovers the analytic gaussian separation") {
    const double mu = 0.4, sigma = 0.3;
    std::vector<Image> set_a, set_b;
    for (int i = 0; i < 8; ++i) {
        set_a.push_back(random_image(3, 16, 16, 700 + static_cast<uint64_t>(i), sigma, 0.0));
        set_b.push_back(random_image(3, 16, 16, 800 + static_cast<uint64_t>(i), sigma, mu));
    }
    double d = atvd::patch_frechet(set_a, set_b, 3, 4000, 11);
    double expect = 27 * mu * mu;
    CHECK(d == doctest::Approx(expect).epsilon(0.10));
}

TEST_CASE("patch frechet grows with the distribution gap") {
    std::vector<Image> base;
    for (int i = 0; i < 6; ++i)
        base.push_back(random_image(3, 16, 16, 900 + static_cast<uint64_t>(i), 0.3));
    double prev = -1.0;
    for (double shift : {0.0, 0.2, 0.4}) {
        std::vector<Image> moved;
        for (int i = 0; i < 6; ++i)
            moved.push_back(
                random_image(3, 16, 16, 950 + static_cast<uint64_t>(i), 0.3, shift));
        double d = atvd::patch_frechet(base, moved, 3, 2000, 13);
        CHECK(d > prev);
        prev = d;
    }
}

TEST_CASE("patch frechet validates its inputs") {
    std::vector<Image> ok(2, atvd::make_image(3, 8, 8, 0.1f));
    std::vector<Image> empty;
    CHECK_THROWS_AS(atvd::patch_frechet(empty, ok, 3, 100, 1), contract_error);
    CHECK_THROWS_AS(atvd::patch_frechet(ok, empty, 3, 100, 1), contract_error);
    CHECK_THROWS_AS(atvd::patch_frechet(ok, ok, 0, 100, 1), contract_error);
    CHECK_THROWS_AS(atvd::patch_frechet(ok, ok, 3, 1, 1), contract_error);
    CHECK_THROWS_AS(atvd::patch_frechet(ok, ok, 9, 100, 1), contract_error);
}
