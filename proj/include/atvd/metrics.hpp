#pragma once

#include <cstdint>
#include <vector>

#include "atvd/image.hpp"

namespace atvd {

// 10 log10(data_range^2 / MSE), capped at 100 dB when MSE < 1e-10.
// Model-path images span [-1, 1], hence the default range of 2.
double psnr(const Image& a, const Image& b, double data_range = 2.0);

// Mean local SSIM over sliding 8x8 uniform windows on the luma channel,
// K1 = 0.01, K2 = 0.03 at the [-1, 1] dynamic range.
double ssim(const Image& a, const Image& b);

std::vector<float> to_luma(const Image& img);

// Frechet distance between Gaussian fits of random raw-patch features:
// |mu_a - mu_b|^2 + tr(Sigma_a + Sigma_b - 2 (Sigma_a Sigma_b)^{1/2}).
double patch_frechet(const std::vector<Image>& set_a, const std::vector<Image>& set_b, int patch,
                     int n_patches, uint64_t seed);

} // namespace atvd
