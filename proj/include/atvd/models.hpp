#pragma once

#include <array>
#include <string>
#include <vector>

#include "atvd/nn.hpp"
#include "atvd/rng.hpp"
#include "atvd/tensor.hpp"

namespace atvd {

struct ModelConfig {
    int image_channels = 3;
    int latent_channels = 4; // C_c
    int base_width = 32;     // U-Net channel count at full resolution
    int time_dim = 64;
    int phi_dim = 3;
    int max_t = 100; // step-index validation bound (schedule T)
};

// parameter-count building blocks (weights + biases)
inline size_t conv_count(int ci, int co, int k) {
    return static_cast<size_t>(co) * ci * k * k + co;
}
inline size_t linear_count(int in, int out) { return static_cast<size_t>(out) * in + out; }
inline size_t resblock_count(int ci, int co, int time_dim) {
    size_t n = conv_count(ci, co, 3) + linear_count(time_dim, co) + conv_count(co, co, 3);
    if (ci != co) n += conv_count(ci, co, 1);
    return n;
}

// Residual block: two 3x3 convs with the projected time embedding added
// between them per channel; 1x1 projection on the skip when widths change.
template <typename T>
struct ResBlock {
    Conv2dLayer<T> conv1, conv2;
    LinearLayer<T> temb_proj;
    Conv2dLayer<T> skip;
    bool project_skip = false;

    ResBlock() = default;
    ResBlock(ParamStore<T>& ps, const std::string& name, int ci, int co, int time_dim, Rng& rng)
        : conv1(ps, name + ".conv1", ci, co, 3, 1, 1, rng),
          conv2(ps, name + ".conv2", co, co, 3, 1, 1, rng),
          temb_proj(ps, name + ".temb", time_dim, co, rng),
          project_skip(ci != co) {
        if (project_skip) skip = Conv2dLayer<T>(ps, name + ".skip", ci, co, 1, 1, 0, rng);
    }

    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& temb) const {
        TensorT<T> h = relu(conv1.forward(x));
        h = add_chan(h, temb_proj.forward(temb));
        h = conv2.forward(relu(h));
        return add(h, project_skip ? skip.forward(x) : x);
    }
};

// Conditional noise-prediction U-Net: two resolutions, two residual blocks per
// level, skip concatenation across the downsample. Conditioning enters by
// channel concatenation of y and the upsampled latent c with x_t.
template <typename T>
class UNetModel {
public:
    UNetModel() = default;
    UNetModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        int w = cfg.base_width;
        int in_ch = 2 * cfg.image_channels + cfg.latent_channels;
        stem_ = Conv2dLayer<T>(params_, "unet.stem", in_ch, w, 3, 1, 1, rng);
        enc0a_ = ResBlock<T>(params_, "unet.enc0a", w, w, cfg.time_dim, rng);
        enc0b_ = ResBlock<T>(params_, "unet.enc0b", w, w, cfg.time_dim, rng);
        enc1a_ = ResBlock<T>(params_, "unet.enc1a", w, 2 * w, cfg.time_dim, rng);
        enc1b_ = ResBlock<T>(params_, "unet.enc1b", 2 * w, 2 * w, cfg.time_dim, rng);
        dec0a_ = ResBlock<T>(params_, "unet.dec0a", 3 * w, w, cfg.time_dim, rng);
        dec0b_ = ResBlock<T>(params_, "unet.dec0b", w, w, cfg.time_dim, rng);
        out_ = Conv2dLayer<T>(params_, "unet.out", w, cfg.image_channels, 3, 1, 1, rng);
        // concat skips and embedding adds compound the activation scale; a
        // small output head starts the noise prediction near zero instead of
        // spending the first training steps shrinking it
        for (auto& x : out_.w.vec()) x *= T(0.01);
    }

    TensorT<T> forward(const TensorT<T>& x_t, const std::vector<int>& t, const TensorT<T>& y,
                       const TensorT<T>& c) const {
        require(x_t.shape() == y.shape(),
                cat("unet: x_t ", shape_str(x_t.shape()), " vs y ", shape_str(y.shape())));
        const Shape& xs = x_t.shape();
        const Shape& cs = c.shape();
        require(cs.size() == 4 && cs[0] == xs[0] && cs[1] == cfg_.latent_channels &&
                    cs[2] * 2 == xs[2] && cs[3] * 2 == xs[3],
                cat("unet: latent ", shape_str(cs), " incompatible with image ", shape_str(xs)));
        require(static_cast<int>(t.size()) == xs[0],
                cat("unet: ", t.size(), " step indices for batch ", xs[0]));
        for (int ti : t)
            require(ti >= 1 && ti <= cfg_.max_t,
                    cat("unet: step index ", ti, " outside [1, ", cfg_.max_t, "]"));

        TensorT<T> temb = time_embedding<T>(t, cfg_.time_dim);
        TensorT<T> h = stem_.forward(concat_channels<T>({x_t, y, up2_nearest(c)}));
        h = enc0a_.forward(h, temb);
        h = enc0b_.forward(h, temb);
        TensorT<T> skip = h;
        h = down2(h);
        h = enc1a_.forward(h, temb);
        h = enc1b_.forward(h, temb);
        h = concat_channels(up2_nearest(h), skip);
        h = dec0a_.forward(h, temb);
        h = dec0b_.forward(h, temb);
        return out_.forward(h);
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const ModelConfig& config() const { return cfg_; }

    static size_t param_count(const ModelConfig& cfg) {
        int w = cfg.base_width;
        int in_ch = 2 * cfg.image_channels + cfg.latent_channels;
        return conv_count(in_ch, w, 3) + 2 * resblock_count(w, w, cfg.time_dim) +
               resblock_count(w, 2 * w, cfg.time_dim) + resblock_count(2 * w, 2 * w, cfg.time_dim) +
               resblock_count(3 * w, w, cfg.time_dim) + resblock_count(w, w, cfg.time_dim) +
               conv_count(w, cfg.image_channels, 3);
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
    Conv2dLayer<T> stem_, out_;
    ResBlock<T> enc0a_, enc0b_, enc1a_, enc1b_, dec0a_, dec0b_;
};

// Variational encoder: five convs, ReLU after each hidden layer, one 2x
// downsample after the first; final layer emits 2*C_c channels split into
// (mu, logvar). logvar is clamped to [-10, 10] to keep exp finite.
template <typename T>
class EncoderModel {
public:
    EncoderModel() = default;
    EncoderModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        int ic = cfg.image_channels, w = cfg.base_width;
        c1_ = Conv2dLayer<T>(params_, "enc.c1", ic, w, 3, 1, 1, rng);
        c2_ = Conv2dLayer<T>(params_, "enc.c2", w, 2 * w, 3, 1, 1, rng);
        c3_ = Conv2dLayer<T>(params_, "enc.c3", 2 * w, 2 * w, 3, 1, 1, rng);
        c4_ = Conv2dLayer<T>(params_, "enc.c4", 2 * w, 2 * w, 3, 1, 1, rng);
        c5_ = Conv2dLayer<T>(params_, "enc.c5", 2 * w, 2 * cfg.latent_channels, 3, 1, 1, rng);
    }

    std::pair<TensorT<T>, TensorT<T>> encode(const TensorT<T>& y) const {
        const Shape& s = y.shape();
        require(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0,
                cat("encoder: even NCHW input required, got ", shape_str(s)));
        TensorT<T> h = down2(relu(c1_.forward(y)));
        h = relu(c2_.forward(h));
        h = relu(c3_.forward(h));
        h = relu(c4_.forward(h));
        h = c5_.forward(h);
        int cc = cfg_.latent_channels;
        return {slice_channels(h, 0, cc), clamp(slice_channels(h, cc, 2 * cc), -10.0, 10.0)};
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    static size_t param_count(const ModelConfig& cfg) {
        int ic = cfg.image_channels, w = cfg.base_width;
        return conv_count(ic, w, 3) + conv_count(w, 2 * w, 3) + conv_count(2 * w, 2 * w, 3) +
               conv_count(2 * w, 2 * w, 3) + conv_count(2 * w, 2 * cfg.latent_channels, 3);
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
    Conv2dLayer<T> c1_, c2_, c3_, c4_, c5_;
};

// Decoder: five convs, ReLU hidden activations, 2x nearest upsample after the
// first, linear output at image channels.
template <typename T>
class DecoderModel {
public:
    DecoderModel() = default;
    DecoderModel(const ModelConfig& cfg, Rng& rng) {
        int w = cfg.base_width, cc = cfg.latent_channels;
        c1_ = Conv2dLayer<T>(params_, "dec.c1", cc, 2 * w, 3, 1, 1, rng);
        c2_ = Conv2dLayer<T>(params_, "dec.c2", 2 * w, 2 * w, 3, 1, 1, rng);
        c3_ = Conv2dLayer<T>(params_, "dec.c3", 2 * w, w, 3, 1, 1, rng);
        c4_ = Conv2dLayer<T>(params_, "dec.c4", w, w, 3, 1, 1, rng);
        c5_ = Conv2dLayer<T>(params_, "dec.c5", w, cfg.image_channels, 3, 1, 1, rng);
    }

    TensorT<T> decode(const TensorT<T>& c) const {
        TensorT<T> h = up2_nearest(relu(c1_.forward(c)));
        h = relu(c2_.forward(h));
        h = relu(c3_.forward(h));
        h = relu(c4_.forward(h));
        return c5_.forward(h);
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    static size_t param_count(const ModelConfig& cfg) {
        int w = cfg.base_width, cc = cfg.latent_channels;
        return conv_count(cc, 2 * w, 3) + conv_count(2 * w, 2 * w, 3) + conv_count(2 * w, w, 3) +
               conv_count(w, w, 3) + conv_count(w, cfg.image_channels, 3);
    }

private:
    ParamStore<T> params_;
    Conv2dLayer<T> c1_, c2_, c3_, c4_, c5_;
};

// Degradation-parameter regression head: two LeakyReLU convs on the latent,
// then global average pooling down to the phi vector.
template <typename T>
class ParamHeadModel {
public:
    static constexpr double kSlope = 0.2;

    ParamHeadModel() = default;
    ParamHeadModel(const ModelConfig& cfg, Rng& rng) {
        int w = cfg.base_width, cc = cfg.latent_channels;
        c1_ = Conv2dLayer<T>(params_, "head.c1", cc, w, 3, 1, 1, rng);
        c2_ = Conv2dLayer<T>(params_, "head.c2", w, cfg.phi_dim, 3, 1, 1, rng);
    }

    TensorT<T> forward(const TensorT<T>& c) const {
        TensorT<T> h = leaky_relu(c1_.forward(c), kSlope);
        h = leaky_relu(c2_.forward(h), kSlope);
        return global_avg_pool(h); // {N, phi_dim}
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    static size_t param_count(const ModelConfig& cfg) {
        int w = cfg.base_width, cc = cfg.latent_channels;
        return conv_count(cc, w, 3) + conv_count(w, cfg.phi_dim, 3);
    }

private:
    ParamStore<T> params_;
    Conv2dLayer<T> c1_, c2_;
};

// Discriminator: eleven spectrally normalized convs with LeakyReLU, five
// stride-2 stages interleaved with stride-1 convs, global average pooling and
// a sigmoid scalar per image.
template <typename T>
class DiscriminatorModel {
public:
    static constexpr double kSlope = 0.2;

    DiscriminatorModel() = default;
    DiscriminatorModel(const ModelConfig& cfg, Rng& rng) {
        int ic = cfg.image_channels, w = cfg.base_width;
        const int ci[11] = {ic, w, w, w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w};
        const int co[11] = {w, w, w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 1};
        for (int i = 0; i < 11; ++i) {
            int stride = (i > 0 && i < 10 && i % 2 == 1) ? 2 : 1; // layers 2,4,6,8,10 downsample
            int k = (i == 10) ? 1 : 3;
            int pad = (i == 10) ? 0 : 1;
            layers_[i] = SNConv2dLayer<T>(params_, cat("disc.c", i + 1), ci[i], co[i], k, stride,
                                          pad, rng);
        }
    }

    // advance moves every layer's power iteration one step (training forwards
    // of phase A); frozen forwards (phase B, eval) leave the state untouched.
    TensorT<T> forward(const TensorT<T>& img, bool advance) {
        TensorT<T> h = img;
        for (int i = 0; i < 10; ++i) h = leaky_relu(layers_[i].forward(h, advance), kSlope);
        h = layers_[10].forward(h, advance);
        return sigmoid(global_avg_pool(h)); // {N, 1}
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    SNConv2dLayer<T>& layer(int i) { return layers_[static_cast<size_t>(i)]; }
    const SNConv2dLayer<T>& layer(int i) const { return layers_[static_cast<size_t>(i)]; }
    static constexpr int layer_count() { return 11; }

    static size_t param_count(const ModelConfig& cfg) {
        int ic = cfg.image_channels, w = cfg.base_width;
        const int ci[11] = {ic, w, w, w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w};
        const int co[11] = {w, w, w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 2 * w, 1};
        size_t n = 0;
        for (int i = 0; i < 11; ++i) n += conv_count(ci[i], co[i], i == 10 ? 1 : 3);
        return n;
    }

private:
    ParamStore<T> params_;
    std::array<SNConv2dLayer<T>, 11> layers_;
};

} // namespace atvd
