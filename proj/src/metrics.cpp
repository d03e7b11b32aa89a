#include "atvd/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "atvd/rng.hpp"

namespace atvd {

namespace {

void check_same_size(const char* op, const Image& a, const Image& b) {
    require(a.channels == b.channels && a.height == b.height && a.width == b.width,
            cat(op, ": image sizes ", a.channels, "x", a.height, "x", a.width, " vs ", b.channels,
                "x", b.height, "x", b.width));
}

} // namespace

double psnr(const Image& a, const Image& b, double data_range) {
    check_same_size("psnr", a, b);
    require(data_range > 0, cat("psnr: data_range must be positive, got ", data_range));
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(data_range * data_range / mse);
}

std::vector<float> to_luma(const Image& img) {
    size_t hw = static_cast<size_t>(img.height) * img.width;
    std::vector<float> y(hw);
    if (img.channels == 1) {
        std::copy(img.data.begin(), img.data.end(), y.begin());
        return y;
    }
    require(img.channels == 3, cat("to_luma: want 1 or 3 channels, got ", img.channels));
    for (size_t i = 0; i < hw; ++i)
        y[i] = 0.299f * img.data[i] + 0.587f * img.data[hw + i] + 0.114f * img.data[2 * hw + i];
    return y;
}

double ssim(const Image& a, const Image& b) {
    check_same_size("ssim", a, b);
    constexpr int kWin = 8;
    require(a.height >= kWin && a.width >= kWin,
            cat("ssim: image ", a.height, "x", a.width, " smaller than ", kWin, "x", kWin,
                " window"));
    constexpr double kRange = 2.0;
    constexpr double c1 = (0.01 * kRange) * (0.01 * kRange);
    constexpr double c2 = (0.03 * kRange) * (0.03 * kRange);

    std::vector<float> la = to_luma(a), lb = to_luma(b);
    int h = a.height, w = a.width;
    double total = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + kWin <= h; ++y0)
        for (int x0 = 0; x0 + kWin <= w; ++x0) {
            double ma = 0.0, mb = 0.0;
            for (int y = 0; y < kWin; ++y)
                for (int x = 0; x < kWin; ++x) {
                    ma += la[static_cast<size_t>(y0 + y) * w + x0 + x];
                    mb += lb[static_cast<size_t>(y0 + y) * w + x0 + x];
                }
            constexpr double n = kWin * kWin;
            ma /= n;
            mb /= n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int y = 0; y < kWin; ++y)
                for (int x = 0; x < kWin; ++x) {
                    double da = la[static_cast<size_t>(y0 + y) * w + x0 + x] - ma;
                    double db = lb[static_cast<size_t>(y0 + y) * w + x0 + x] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n - 1;
            vb /= n - 1;
            cov /= n - 1;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// tr((Sa Sb)^{1/2}) via the symmetric form tr((Sa^{1/2} Sb Sa^{1/2})^{1/2});
// throws on eigensolver failure so the caller can ridge and retry
double trace_sqrt_product(const Mat& sa, const Mat& sb) {
    Eigen::SelfAdjointEigenSolver<Mat> es_a(sa);
    if (es_a.info() != Eigen::Success)
        throw std::runtime_error("patch_frechet: eigendecomposition failed");
    Vec ev = es_a.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev[i] = std::sqrt(std::max(0.0, ev[i]));
    Mat root_a = es_a.eigenvectors() * ev.asDiagonal() * es_a.eigenvectors().transpose();

    Mat inner = root_a * sb * root_a;
    inner = 0.5 * (inner + inner.transpose()); // symmetrize against round-off
    Eigen::SelfAdjointEigenSolver<Mat> es_i(inner);
    if (es_i.info() != Eigen::Success)
        throw std::runtime_error("patch_frechet: eigendecomposition failed");
    double tr = 0.0;
    for (int i = 0; i < es_i.eigenvalues().size(); ++i)
        tr += std::sqrt(std::max(0.0, es_i.eigenvalues()[i]));
    return tr;
}

void sample_patch_stats(const std::vector<Image>& set, int patch, int n_patches, Rng& rng,
                        Vec& mu, Mat& cov) {
    int dim = 3 * patch * patch;
    Mat feats(n_patches, dim);
    for (int k = 0; k < n_patches; ++k) {
        const Image& img = set[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(set.size()) - 1))];
        require(img.height >= patch && img.width >= patch,
                cat("patch_frechet: image ", img.height, "x", img.width, " smaller than patch ",
                    patch));
        int y0 = rng.uniform_int(0, img.height - patch);
        int x0 = rng.uniform_int(0, img.width - patch);
        int col = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) feats(k, col++) = img.at(c, y0 + y, x0 + x);
    }
    mu = feats.colwise().mean();
    Mat centered = feats.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n_patches - 1);
}

} // namespace

double patch_frechet(const std::vector<Image>& set_a, const std::vector<Image>& set_b, int patch,
                     int n_patches, uint64_t seed) {
    require(!set_a.empty() && !set_b.empty(), "patch_frechet: empty image set");
    require(patch >= 1 && n_patches >= 2,
            cat("patch_frechet: bad patch/n_patches ", patch, "/", n_patches));

    // both sets consume identical draw sequences, which makes the distance
    // exactly symmetric and exactly zero on identical sets
    Rng rng_a(Rng::derive(seed, {0xF1}));
    Rng rng_b(Rng::derive(seed, {0xF1}));
    Vec mu_a, mu_b;
    Mat cov_a, cov_b;
    sample_patch_stats(set_a, patch, n_patches, rng_a, mu_a, cov_a);
    sample_patch_stats(set_b, patch, n_patches, rng_b, mu_b, cov_b);

    double mean_term = (mu_a - mu_b).squaredNorm();
    double tr_term;
    try {
        tr_term = trace_sqrt_product(cov_a, cov_b);
    } catch (const std::runtime_error&) {
        log_info("patch_frechet: adding 1e-6 ridge and retrying");
        Mat ridge = 1e-6 * Mat::Identity(cov_a.rows(), cov_a.cols());
        tr_term = trace_sqrt_product(cov_a + ridge, cov_b + ridge);
        cov_a += ridge;
        cov_b += ridge;
    }
    double d = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_term;
    return std::max(0.0, d);
}

} // namespace atvd
