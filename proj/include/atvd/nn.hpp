#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "atvd/rng.hpp"
#include "atvd/tensor.hpp"

namespace atvd {

// Ordered named-parameter registry. Owns every trainable tensor of a model so
// the optimizer and checkpoint code can walk them uniformly.
template <typename T>
class ParamStore {
public:
    // Constant zero when std_dev == 0, otherwise normal with the given std.
    TensorT<T> create(const std::string& name, Shape shape, double std_dev, Rng& rng) {
        for (const auto& [n, t] : items_)
            require(n != name, cat("ParamStore: duplicate parameter '", name, "'"));
        TensorT<T> t;
        if (std_dev == 0.0) {
            t = TensorT<T>::zeros(std::move(shape));
        } else {
            t = TensorT<T>::randn(std::move(shape), rng);
            for (auto& v : t.vec()) v = static_cast<T>(v * std_dev);
        }
        t.set_requires_grad(true);
        items_.push_back({name, t});
        return t;
    }

    const std::vector<std::pair<std::string, TensorT<T>>>& items() const { return items_; }

    TensorT<T> find(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        throw contract_error(cat("ParamStore: no parameter '", name, "'"));
    }

    size_t total_count() const {
        size_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, TensorT<T>>> items_;
};

inline double he_std(int fan_in) { return std::sqrt(2.0 / fan_in); }

template <typename T>
struct Conv2dLayer {
    TensorT<T> w, b;
    int stride = 1;
    int pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore<T>& ps, const std::string& name, int ci, int co, int k, int stride_,
                int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        w = ps.create(name + ".w", {co, ci, k, k}, he_std(ci * k * k), rng);
        b = ps.create(name + ".b", {co}, 0.0, rng);
    }

    TensorT<T> forward(const TensorT<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct LinearLayer {
    TensorT<T> w, b;

    LinearLayer() = default;
    LinearLayer(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng) {
        w = ps.create(name + ".w", {out, in}, he_std(in), rng);
        b = ps.create(name + ".b", {out}, 0.0, rng);
    }

    TensorT<T> forward(const TensorT<T>& x) const { return linear(x, w, b); }
};

// Power-iteration estimate of the top singular value of the matricized weight
// (out-channels x rest). One call refines (u, v) in place by one iteration.
template <typename T>
void power_iterate(const TensorT<T>& w, std::vector<T>& u, std::vector<T>& v) {
    size_t rows = static_cast<size_t>(w.shape()[0]);
    size_t cols = w.numel() / rows;
    require(u.size() == rows && v.size() == cols,
            cat("power_iterate: state sizes ", u.size(), "/", v.size(), " vs ", rows, "x", cols));
    const T* wd = w.data();

    auto normalize = [](std::vector<T>& x) {
        double n = 0.0;
        for (T t : x) n += static_cast<double>(t) * t;
        n = std::sqrt(n);
        if (n < 1e-12) n = 1e-12;
        for (T& t : x) t = static_cast<T>(t / n);
    };

    // v <- normalize(W^T u)
    for (size_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (size_t r = 0; r < rows; ++r) acc += static_cast<double>(wd[r * cols + c]) * u[r];
        v[c] = static_cast<T>(acc);
    }
    normalize(v);
    // u <- normalize(W v)
    for (size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (size_t c = 0; c < cols; ++c) acc += static_cast<double>(wd[r * cols + c]) * v[c];
        u[r] = static_cast<T>(acc);
    }
    normalize(u);
}

template <typename T>
double sigma_estimate(const TensorT<T>& w, const std::vector<T>& u, const std::vector<T>& v) {
    size_t rows = static_cast<size_t>(w.shape()[0]);
    size_t cols = w.numel() / rows;
    const T* wd = w.data();
    double sigma = 0.0;
    for (size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (size_t c = 0; c < cols; ++c) acc += static_cast<double>(wd[r * cols + c]) * v[c];
        sigma += static_cast<double>(u[r]) * acc;
    }
    return sigma;
}

// Spectrally normalized convolution. The (u, v) buffers persist across steps
// and advance by one iteration per training forward; frozen forwards reuse
// the current estimate without touching state.
template <typename T>
struct SNConv2dLayer {
    Conv2dLayer<T> conv;
    std::vector<T> u, v;

    SNConv2dLayer() = default;
    SNConv2dLayer(ParamStore<T>& ps, const std::string& name, int ci, int co, int k, int stride_,
                  int pad_, Rng& rng)
        : conv(ps, name, ci, co, k, stride_, pad_, rng) {
        u.resize(static_cast<size_t>(co));
        v.resize(static_cast<size_t>(ci) * k * k);
        for (auto& x : u) x = static_cast<T>(rng.normal());
        for (auto& x : v) x = static_cast<T>(rng.normal());
        // settle the state so sigma is meaningful from the first forward
        power_iterate(conv.w, u, v);
    }

    TensorT<T> forward(const TensorT<T>& x, bool advance) {
        if (advance) power_iterate(conv.w, u, v);
        TensorT<T> wn = spectral_scale(conv.w, u, v);
        return conv2d(x, wn, conv.b, conv.stride, conv.pad);
    }
};

// DDPM-style sinusoidal embedding of integer steps; {N, dim} constant tensor.
template <typename T>
TensorT<T> time_embedding(const std::vector<int>& t, int dim) {
    require(dim >= 2 && dim % 2 == 0, cat("time_embedding: dim must be even >= 2, got ", dim));
    int n = static_cast<int>(t.size());
    int half = dim / 2;
    TensorT<T> out = TensorT<T>::zeros({n, dim});
    T* o = out.data();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(10000.0) * j / (half - 1));
            double arg = t[static_cast<size_t>(i)] * freq;
            o[i * dim + j] = static_cast<T>(std::sin(arg));
            o[i * dim + half + j] = static_cast<T>(std::cos(arg));
        }
    }
    return out;
}

} // namespace atvd
