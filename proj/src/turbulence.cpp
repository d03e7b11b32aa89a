#include "atvd/turbulence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "atvd/threadpool.hpp"

namespace fs = std::filesystem;

namespace atvd {

double DegradationParams::tilt_rms() const {
    double acc = 0.0;
    for (size_t i = 0; i < tilt_x.size(); ++i)
        acc += static_cast<double>(tilt_x[i]) * tilt_x[i] + static_cast<double>(tilt_y[i]) * tilt_y[i];
    return std::sqrt(acc / static_cast<double>(tilt_x.size()));
}

double DegradationParams::mean_blur() const {
    double acc = 0.0;
    for (float v : blur_map) acc += v;
    return acc / static_cast<double>(blur_map.size());
}

namespace {

// separable Gaussian smoothing with per-position renormalization over
// in-bounds taps (keeps the field stationary near edges)
void smooth_1d(std::vector<float>& f, int h, int w, double sigma, bool rows) {
    int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    for (int i = -r; i <= r; ++i) k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    std::vector<float> out(f.size());
    int outer = rows ? h : w;
    int inner = rows ? w : h;
    for (int a = 0; a < outer; ++a)
        for (int b = 0; b < inner; ++b) {
            double acc = 0.0, wsum = 0.0;
            for (int d = -r; d <= r; ++d) {
                int bb = b + d;
                if (bb < 0 || bb >= inner) continue;
                double kv = k[static_cast<size_t>(d + r)];
                size_t idx = rows ? static_cast<size_t>(a) * w + bb : static_cast<size_t>(bb) * w + a;
                acc += kv * f[idx];
                wsum += kv;
            }
            size_t idx = rows ? static_cast<size_t>(a) * w + b : static_cast<size_t>(b) * w + a;
            out[idx] = static_cast<float>(acc / wsum);
        }
    f = std::move(out);
}

} // namespace

std::vector<float> correlated_field(Rng& rng, int h, int w, double corr_len) {
    require(h > 0 && w > 0, cat("correlated_field: bad extents ", h, "x", w));
    std::vector<float> f(static_cast<size_t>(h) * w);
    for (auto& v : f) v = static_cast<float>(rng.normal());
    smooth_1d(f, h, w, corr_len, true);
    smooth_1d(f, h, w, corr_len, false);
    double rms = 0.0;
    for (float v : f) rms += static_cast<double>(v) * v;
    rms = std::sqrt(rms / static_cast<double>(f.size()));
    if (rms < 1e-12) rms = 1e-12;
    for (auto& v : f) v = static_cast<float>(v / rms);
    return f;
}

DegradationParams sample_params(Rng& rng, double d_r0_lo, double d_r0_hi, int h, int w) {
    require(0.0 <= d_r0_lo && d_r0_lo <= d_r0_hi,
            cat("sample_params: bad d_r0 range [", d_r0_lo, ", ", d_r0_hi, "]"));
    DegradationParams p;
    p.d_r0 = rng.uniform(d_r0_lo, d_r0_hi);
    p.height = h;
    p.width = w;
    p.noise_std = kNoiseStd;

    // unit-severity tilt: two correlated components jointly normalized to RMS 1 px
    p.tilt_x = correlated_field(rng, h, w, kCorrLength);
    p.tilt_y = correlated_field(rng, h, w, kCorrLength);
    double joint = 0.0;
    for (size_t i = 0; i < p.tilt_x.size(); ++i)
        joint += static_cast<double>(p.tilt_x[i]) * p.tilt_x[i] +
                 static_cast<double>(p.tilt_y[i]) * p.tilt_y[i];
    joint = std::sqrt(joint / static_cast<double>(p.tilt_x.size()));
    if (joint < 1e-12) joint = 1e-12;
    double tilt_scale = kUnitTiltRms * p.d_r0 / joint;
    for (auto& v : p.tilt_x) v = static_cast<float>(v * tilt_scale);
    for (auto& v : p.tilt_y) v = static_cast<float>(v * tilt_scale);

    // unit-severity blur: nonnegative correlated field with mean exactly kUnitMeanBlur
    std::vector<float> g = correlated_field(rng, h, w, kCorrLength);
    std::vector<double> pos(g.size());
    double msum = 0.0;
    for (size_t i = 0; i < g.size(); ++i) {
        pos[i] = std::max(0.0, 1.0 + 0.5 * g[i]);
        msum += pos[i];
    }
    msum /= static_cast<double>(pos.size());
    if (msum < 1e-12) msum = 1e-12;
    p.blur_map.resize(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
        double b = kUnitMeanBlur * pos[i] / msum * p.d_r0;
        p.blur_map[i] = static_cast<float>(std::min(b, kSigmaMax));
    }
    return p;
}

Image warp_bilinear(const Image& x, const std::vector<float>& tilt_x,
                    const std::vector<float>& tilt_y) {
    size_t hw = static_cast<size_t>(x.height) * x.width;
    require(tilt_x.size() == hw && tilt_y.size() == hw,
            cat("warp: field size ", tilt_x.size(), "/", tilt_y.size(), " vs image ", x.height,
                "x", x.width));
    Image out = make_image(x.channels, x.height, x.width);
    for (int yy = 0; yy < x.height; ++yy)
        for (int xx = 0; xx < x.width; ++xx) {
            size_t i = static_cast<size_t>(yy) * x.width + xx;
            double sx = std::clamp(static_cast<double>(xx) + tilt_x[i], 0.0,
                                   static_cast<double>(x.width - 1));
            double sy = std::clamp(static_cast<double>(yy) + tilt_y[i], 0.0,
                                   static_cast<double>(x.height - 1));
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            int x1 = std::min(x0 + 1, x.width - 1);
            int y1 = std::min(y0 + 1, x.height - 1);
            double fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < x.channels; ++c) {
                double v = (1 - fy) * ((1 - fx) * x.at(c, y0, x0) + fx * x.at(c, y0, x1)) +
                           fy * ((1 - fx) * x.at(c, y1, x0) + fx * x.at(c, y1, x1));
                out.at(c, yy, xx) = static_cast<float>(v);
            }
        }
    return out;
}

std::vector<double> gaussian_taps(double sigma, int& radius) {
    require(sigma >= 0.0, cat("gaussian_taps: negative sigma ", sigma));
    radius = sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma)) : 0;
    int side = 2 * radius + 1;
    std::vector<double> k(static_cast<size_t>(side) * side, 0.0);
    if (radius == 0) {
        k[0] = 1.0;
        return k;
    }
    double sum = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            double v = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
            k[static_cast<size_t>(dy + radius) * side + (dx + radius)] = v;
            sum += v;
        }
    for (auto& v : k) v /= sum;
    return k;
}

Image spatially_variant_blur(const Image& x, const std::vector<float>& blur_map) {
    size_t hw = static_cast<size_t>(x.height) * x.width;
    require(blur_map.size() == hw,
            cat("blur: map size ", blur_map.size(), " vs image ", x.height, "x", x.width));
    Image out = make_image(x.channels, x.height, x.width);
    for (int yy = 0; yy < x.height; ++yy)
        for (int xx = 0; xx < x.width; ++xx) {
            double sigma = blur_map[static_cast<size_t>(yy) * x.width + xx];
            if (sigma <= 0.0) {
                for (int c = 0; c < x.channels; ++c) out.at(c, yy, xx) = x.at(c, yy, xx);
                continue;
            }
            int r = static_cast<int>(std::ceil(3.0 * sigma));
            double inv2s2 = 0.5 / (sigma * sigma);
            for (int c = 0; c < x.channels; ++c) {
                double acc = 0.0, wsum = 0.0;
                for (int dy = -r; dy <= r; ++dy) {
                    int sy = yy + dy;
                    if (sy < 0 || sy >= x.height) continue;
                    for (int dx = -r; dx <= r; ++dx) {
                        int sx = xx + dx;
                        if (sx < 0 || sx >= x.width) continue;
                        double kv = std::exp(-(dx * dx + dy * dy) * inv2s2);
                        acc += kv * x.at(c, sy, sx);
                        wsum += kv;
                    }
                }
                out.at(c, yy, xx) = static_cast<float>(acc / wsum);
            }
        }
    return out;
}

Image degrade(const Image& x, const DegradationParams& p, Rng& rng) {
    require(p.height == x.height && p.width == x.width,
            cat("degrade: fields ", p.height, "x", p.width, " vs image ", x.height, "x", x.width));
    Image y = warp_bilinear(x, p.tilt_x, p.tilt_y);
    y = spatially_variant_blur(y, p.blur_map);
    if (p.noise_std > 0.0)
        for (auto& v : y.data) v = static_cast<float>(v + p.noise_std * rng.normal());
    for (auto& v : y.data) v = std::clamp(v, -1.0f, 1.0f);
    return y;
}

std::array<double, 3> phi_vector(const DegradationParams& p) {
    auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
    return {unit((p.d_r0 - kDr0Lo) / (kDr0Hi - kDr0Lo)), unit(p.tilt_rms() / kTiltRmsHi),
            unit(p.mean_blur() / kMeanBlurHi)};
}

std::array<double, 3> denormalize_phi(const std::array<double, 3>& phi) {
    return {kDr0Lo + phi[0] * (kDr0Hi - kDr0Lo), phi[1] * kTiltRmsHi, phi[2] * kMeanBlurHi};
}

Image make_toy_image(Rng& rng, int size) {
    Image img = make_image(3, size, size);
    // smooth background gradient per channel
    for (int c = 0; c < 3; ++c) {
        double a = rng.uniform(-0.5, 0.5);
        double gx = rng.uniform(-0.8, 0.8);
        double gy = rng.uniform(-0.8, 0.8);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                img.at(c, y, x) = static_cast<float>(a + gx * (2.0 * x / size - 1.0) +
                                                     gy * (2.0 * y / size - 1.0));
    }
    // hard-edged shapes supply the high-frequency content turbulence destroys
    int n_shapes = rng.uniform_int(3, 6);
    for (int s = 0; s < n_shapes; ++s) {
        bool disc = rng.uniform() < 0.5;
        int cx = rng.uniform_int(0, size - 1);
        int cy = rng.uniform_int(0, size - 1);
        int half = rng.uniform_int(size / 10 + 1, size / 3);
        float col[3];
        for (auto& cc : col) cc = static_cast<float>(rng.uniform(-0.9, 0.9));
        for (int y = std::max(0, cy - half); y <= std::min(size - 1, cy + half); ++y)
            for (int x = std::max(0, cx - half); x <= std::min(size - 1, cx + half); ++x) {
                if (disc && (x - cx) * (x - cx) + (y - cy) * (y - cy) > half * half) continue;
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
            }
    }
    // fine texture
    std::vector<float> tex(static_cast<size_t>(size) * size);
    for (auto& v : tex) v = static_cast<float>(rng.normal());
    smooth_1d(tex, size, size, 0.8, true);
    smooth_1d(tex, size, size, 0.8, false);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                img.at(c, y, x) += 0.12f * tex[static_cast<size_t>(y) * size + x];
    for (auto& v : img.data) v = std::clamp(v, -1.0f, 1.0f);
    return img;
}

void write_toy_clean_images(const std::string& dir, int count, int size, uint64_t seed) {
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
        Rng rng(Rng::derive(seed, {stream::clean_image, static_cast<uint64_t>(i)}));
        Image img = make_toy_image(rng, size);
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", i);
        write_png((fs::path(dir) / name).string(), img);
    }
}

namespace {

std::vector<std::string> list_pngs(const std::string& dir) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) throw std::runtime_error(cat("dataset: no such directory ", dir));
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

std::string record_name(int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.%s", index, ext);
    return buf;
}

} // namespace

std::vector<DatasetRecord> build_dataset(const std::string& clean_dir, const std::string& out_dir,
                                         int n_pairs, double d_r0_lo, double d_r0_hi, int crop,
                                         uint64_t seed, int workers) {
    require(n_pairs > 0, cat("build_dataset: n_pairs must be positive, got ", n_pairs));
    std::vector<std::string> files = list_pngs(clean_dir);
    if (files.empty()) throw std::runtime_error(cat("build_dataset: no PNG files in ", clean_dir));

    std::vector<Image> sources;
    sources.reserve(files.size());
    for (const auto& f : files) {
        Image img = read_png(f);
        if (img.height < crop || img.width < crop)
            throw std::runtime_error(cat("build_dataset: source ", f, " is ", img.height, "x",
                                         img.width, ", smaller than crop ", crop));
        sources.push_back(std::move(img));
    }

    fs::create_directories(fs::path(out_dir) / "clean");
    fs::create_directories(fs::path(out_dir) / "degraded");
    fs::create_directories(fs::path(out_dir) / "phi");

    std::vector<DatasetRecord> records(static_cast<size_t>(n_pairs));
    parallel_for(0, n_pairs, workers, [&](int64_t i) {
        uint64_t rec_seed = Rng::mix(Rng::mix(seed, stream::dataset_record),
                                     static_cast<uint64_t>(i));
        Rng rng(rec_seed);
        const Image& src = sources[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(sources.size()) - 1))];
        int oy = rng.uniform_int(0, src.height - crop);
        int ox = rng.uniform_int(0, src.width - crop);
        Image clean = make_image(3, crop, crop);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < crop; ++y)
                for (int x = 0; x < crop; ++x) clean.at(c, y, x) = src.at(c, oy + y, ox + x);

        DegradationParams p = sample_params(rng, d_r0_lo, d_r0_hi, crop, crop);
        p.seed = rec_seed;
        Image degraded = degrade(clean, p, rng);
        std::array<double, 3> phi = phi_vector(p);

        int idx = static_cast<int>(i);
        write_png((fs::path(out_dir) / "clean" / record_name(idx, "png")).string(), clean);
        write_png((fs::path(out_dir) / "degraded" / record_name(idx, "png")).string(), degraded);
        std::ofstream pf(fs::path(out_dir) / "phi" / record_name(idx, "txt"));
        if (!pf) throw std::runtime_error(cat("build_dataset: cannot write phi record ", idx));
        char line[96];
        for (double v : phi) {
            std::snprintf(line, sizeof(line), "%.17g\n", v);
            pf << line;
        }

        DatasetRecord rec;
        rec.index = idx;
        rec.d_r0 = p.d_r0;
        rec.tilt_rms = p.tilt_rms();
        rec.mean_sigma = p.mean_blur();
        rec.noise_std = p.noise_std;
        rec.seed = rec_seed;
        records[static_cast<size_t>(i)] = rec;
    });

    std::ofstream mf(fs::path(out_dir) / "manifest.txt");
    if (!mf) throw std::runtime_error(cat("build_dataset: cannot write manifest in ", out_dir));
    for (const auto& r : records) {
        char line[256];
        std::snprintf(line, sizeof(line), "%d, %.17g, %.17g, %.17g, %.17g, %llu\n", r.index, r.d_r0,
                      r.tilt_rms, r.mean_sigma, r.noise_std,
                      static_cast<unsigned long long>(r.seed));
        mf << line;
    }
    return records;
}

std::vector<DatasetRecord> read_manifest(const std::string& dataset_dir) {
    std::ifstream mf(fs::path(dataset_dir) / "manifest.txt");
    if (!mf) throw std::runtime_error(cat("read_manifest: cannot open ", dataset_dir, "/manifest.txt"));
    std::vector<DatasetRecord> records;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        DatasetRecord r;
        unsigned long long seed = 0;
        int n = std::sscanf(line.c_str(), "%d , %lg , %lg , %lg , %lg , %llu", &r.index, &r.d_r0,
                            &r.tilt_rms, &r.mean_sigma, &r.noise_std, &seed);
        require(n == 6, cat("read_manifest: malformed line '", line, "'"));
        r.seed = seed;
        records.push_back(r);
    }
    return records;
}

std::vector<LoadedRecord> load_dataset(const std::string& dataset_dir) {
    std::vector<DatasetRecord> manifest = read_manifest(dataset_dir);
    std::vector<LoadedRecord> out(manifest.size());
    for (size_t i = 0; i < manifest.size(); ++i) {
        const DatasetRecord& m = manifest[i];
        LoadedRecord& rec = out[i];
        rec.meta = m;
        rec.clean = read_png((fs::path(dataset_dir) / "clean" / record_name(m.index, "png")).string());
        rec.degraded =
            read_png((fs::path(dataset_dir) / "degraded" / record_name(m.index, "png")).string());
        std::ifstream pf(fs::path(dataset_dir) / "phi" / record_name(m.index, "txt"));
        if (!pf) throw std::runtime_error(cat("load_dataset: missing phi record ", m.index));
        for (auto& v : rec.phi) pf >> v;
        require(static_cast<bool>(pf), cat("load_dataset: malformed phi record ", m.index));
    }
    return out;
}

} // namespace atvd
