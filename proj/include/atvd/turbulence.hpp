#pragma once

#include <array>
#include <string>
#include <vector>

#include "atvd/image.hpp"
#include "atvd/rng.hpp"

namespace atvd {

// simulator constants
inline constexpr double kSigmaMax = 3.0;      // blur std ceiling, px
inline constexpr double kCorrLength = 8.0;    // field correlation length, px
inline constexpr double kUnitTiltRms = 1.0;   // tilt RMS at unit severity, px
inline constexpr double kUnitMeanBlur = 0.75; // mean blur std at unit severity, px
inline constexpr double kNoiseStd = 0.01;     // additive noise std, intensity units

// phi normalization ranges: d_r0 0.5..2.0, tilt RMS 0..2.5 px, mean blur 0..2.0 px
inline constexpr double kDr0Lo = 0.5, kDr0Hi = 2.0;
inline constexpr double kTiltRmsHi = 2.5;
inline constexpr double kMeanBlurHi = 2.0;

struct DegradationParams {
    double d_r0 = 0.0;
    int height = 0, width = 0;
    std::vector<float> tilt_x, tilt_y; // per-pixel displacement, px
    std::vector<float> blur_map;       // per-pixel Gaussian std, px
    double noise_std = 0.0;
    uint64_t seed = 0;

    double tilt_rms() const;  // sqrt(mean(dx^2 + dy^2))
    double mean_blur() const; // mean of blur_map
};

// unit-RMS correlated Gaussian random field (white noise smoothed at kCorrLength)
std::vector<float> correlated_field(Rng& rng, int h, int w, double corr_len);

DegradationParams sample_params(Rng& rng, double d_r0_lo, double d_r0_hi, int h, int w);

// degradation stages, exposed for targeted tests
Image warp_bilinear(const Image& x, const std::vector<float>& tilt_x,
                    const std::vector<float>& tilt_y);
Image spatially_variant_blur(const Image& x, const std::vector<float>& blur_map);

// normalized truncated Gaussian taps for one blur std; (2r+1)^2 weights, r = ceil(3 sigma)
std::vector<double> gaussian_taps(double sigma, int& radius);

// y = clip(noise(blur(warp(x))), [-1, 1]); noise drawn from rng
Image degrade(const Image& x, const DegradationParams& p, Rng& rng);

std::array<double, 3> phi_vector(const DegradationParams& p);
std::array<double, 3> denormalize_phi(const std::array<double, 3>& phi);

// procedural clean toy images (smooth gradients, shapes, fine texture)
Image make_toy_image(Rng& rng, int size);
void write_toy_clean_images(const std::string& dir, int count, int size, uint64_t seed);

struct DatasetRecord {
    int index = 0;
    double d_r0 = 0.0;
    double tilt_rms = 0.0;
    double mean_sigma = 0.0;
    double noise_std = 0.0;
    uint64_t seed = 0;
};

// Writes n_pairs of (clean crop, degraded, phi) records plus manifest.txt.
// Per-record RNG streams derive from (seed, index) so results are identical
// for any worker count.
std::vector<DatasetRecord> build_dataset(const std::string& clean_dir, const std::string& out_dir,
                                         int n_pairs, double d_r0_lo, double d_r0_hi, int crop,
                                         uint64_t seed, int workers);

std::vector<DatasetRecord> read_manifest(const std::string& dataset_dir);

struct LoadedRecord {
    Image clean;
    Image degraded;
    std::array<double, 3> phi{};
    DatasetRecord meta;
};

std::vector<LoadedRecord> load_dataset(const std::string& dataset_dir);

} // namespace atvd
