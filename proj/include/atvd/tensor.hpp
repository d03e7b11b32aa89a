#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "atvd/common.hpp"
#include "atvd/rng.hpp"

namespace atvd {

template <typename T>
class TensorT;

namespace detail {

// One node of the recorded computation. Nodes form a DAG through `parents`;
// `backward` reads this node's grad and accumulates into the parents' grads.
// A leaf has no backward rule. Backward traversal runs in reverse topological
// order, visiting each node exactly once.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // sized like data only when this node tracks gradients
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    size_t numel() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

} // namespace detail

// Thread-local switch: with grad disabled, ops produce plain values and record
// no graph (used by samplers and finite-difference re-evaluation).
struct GradMode {
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Shared-handle n-dimensional array with optional gradient tracking.
// Row-major storage; no broadcasting except the channel-bias cases the ops
// below implement explicitly.
template <typename T>
class TensorT {
public:
    using Node = detail::Node<T>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static TensorT zeros(Shape shape) { return full(std::move(shape), 0.0); }
    static TensorT ones(Shape shape) { return full(std::move(shape), 1.0); }

    static TensorT full(Shape shape, double v) {
        auto n = std::make_shared<Node>();
        n->data.assign(shape_numel(shape), static_cast<T>(v));
        n->shape = std::move(shape);
        return TensorT(std::move(n));
    }

    static TensorT from(Shape shape, std::vector<T> values) {
        require(shape_numel(shape) == values.size(),
                cat("tensor init: shape ", shape_str(shape), " needs ", shape_numel(shape),
                    " values, got ", values.size()));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return TensorT(std::move(n));
    }

    static TensorT randn(Shape shape, Rng& rng) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.node_->data) v = static_cast<T>(rng.normal());
        return t;
    }

    static TensorT uniform(Shape shape, Rng& rng, double lo, double hi) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.node_->data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->data.size(); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }

    T* data() { return node_->data.data(); }
    const T* data() const { return node_->data.data(); }
    std::vector<T>& vec() { return node_->data; }
    const std::vector<T>& vec() const { return node_->data; }

    T item() const {
        require(numel() == 1, cat("item() on non-scalar tensor ", shape_str(shape())));
        return node_->data[0];
    }

    T operator[](size_t i) const { return node_->data[i]; }
    T& operator[](size_t i) { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }

    TensorT& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        if (on) node_->ensure_grad();
        return *this;
    }

    const std::vector<T>& grad() const { return node_->grad; }

    void zero_grad() {
        if (node_->requires_grad) {
            node_->ensure_grad();
            std::fill(node_->grad.begin(), node_->grad.end(), T(0));
        }
    }

    // value copy with no graph attachment
    TensorT detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->data = node_->data;
        return TensorT(std::move(n));
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;   // training profile
using DTensor = TensorT<double>; // gradient-check / test profile

namespace detail {

template <typename T>
TensorT<T> make_op(Shape shape, const char* op,
                   std::initializer_list<TensorT<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->data.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    n->op = op;
    if (GradMode::enabled()) {
        bool track = false;
        for (const auto& in : inputs) track = track || in.node()->requires_grad;
        if (track) {
            n->requires_grad = true;
            for (const auto& in : inputs) n->parents.push_back(in.node());
            n->backward = std::move(backward);
        }
    }
    return TensorT<T>(std::move(n));
}

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    require(a.shape() == b.shape(),
            cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("add", a, b);
    auto pa = a.node(), pb = b.node();
    auto out = detail::make_op<T>(a.shape(), "add", {a, b}, [pa, pb](detail::Node<T>& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        }
    });
    const T* x = a.data();
    const T* y = b.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = x[i] + y[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("sub", a, b);
    auto pa = a.node(), pb = b.node();
    auto out = detail::make_op<T>(a.shape(), "sub", {a, b}, [pa, pb](detail::Node<T>& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
    const T* x = a.data();
    const T* y = b.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = x[i] - y[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("mul", a, b);
    auto pa = a.node(), pb = b.node();
    auto out = detail::make_op<T>(a.shape(), "mul", {a, b}, [pa, pb](detail::Node<T>& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
        }
    });
    const T* x = a.data();
    const T* y = b.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = x[i] * y[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, double s) {
    auto pa = a.node();
    T sv = static_cast<T>(s);
    auto out = detail::make_op<T>(a.shape(), "scale", {a}, [pa, sv](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += sv * self.grad[i];
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = sv * x[i];
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, double s) {
    auto pa = a.node();
    auto out = detail::make_op<T>(a.shape(), "add_scalar", {a}, [pa](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    });
    const T* x = a.data();
    T* o = out.data();
    T sv = static_cast<T>(s);
    for (size_t i = 0; i < out.numel(); ++i) o[i] = x[i] + sv;
    return out;
}

// per-sample scalar multiply along axis 0 (used by the diffusion closed form
// where every batch element carries its own schedule coefficient)
template <typename T>
TensorT<T> scale_per_sample(const TensorT<T>& a, const std::vector<double>& s) {
    require(!a.shape().empty() && static_cast<size_t>(a.shape()[0]) == s.size(),
            cat("scale_per_sample: tensor ", shape_str(a.shape()), " vs ", s.size(), " coefficients"));
    size_t per = a.numel() / s.size();
    auto pa = a.node();
    std::vector<T> sv(s.size());
    for (size_t i = 0; i < s.size(); ++i) sv[i] = static_cast<T>(s[i]);
    auto out = detail::make_op<T>(a.shape(), "scale_per_sample", {a},
                                  [pa, sv, per](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t n = 0; n < sv.size(); ++n)
            for (size_t i = 0; i < per; ++i)
                pa->grad[n * per + i] += sv[n] * self.grad[n * per + i];
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t n = 0; n < sv.size(); ++n)
        for (size_t i = 0; i < per; ++i) o[n * per + i] = sv[n] * x[n * per + i];
    return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    auto pa = a.node();
    auto out = detail::make_op<T>(a.shape(), "relu", {a}, [pa](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (pa->data[i] > T(0)) pa->grad[i] += self.grad[i];
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& a, double slope) {
    auto pa = a.node();
    T sv = static_cast<T>(slope);
    auto out = detail::make_op<T>(a.shape(), "leaky_relu", {a}, [pa, sv](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] * (pa->data[i] > T(0) ? T(1) : sv);
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = x[i] > T(0) ? x[i] : sv * x[i];
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    auto pa = a.node();
    auto out = detail::make_op<T>(a.shape(), "sigmoid", {a}, [pa](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            T y = self.data[i];
            pa->grad[i] += self.grad[i] * y * (T(1) - y);
        }
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = T(1) / (T(1) + std::exp(-x[i]));
    return out;
}

template <typename T>
TensorT<T> exp(const TensorT<T>& a) {
    auto pa = a.node();
    auto out = detail::make_op<T>(a.shape(), "exp", {a}, [pa](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * self.data[i];
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = std::exp(x[i]);
    return out;
}

template <typename T>
TensorT<T> log(const TensorT<T>& a) {
    auto pa = a.node();
    auto out = detail::make_op<T>(a.shape(), "log", {a}, [pa](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] / pa->data[i];
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = std::log(x[i]);
    return out;
}

// gradient passes through the unclamped interior, zero outside
template <typename T>
TensorT<T> clamp(const TensorT<T>& a, double lo, double hi) {
    auto pa = a.node();
    T lv = static_cast<T>(lo), hv = static_cast<T>(hi);
    auto out = detail::make_op<T>(a.shape(), "clamp", {a}, [pa, lv, hv](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (pa->data[i] >= lv && pa->data[i] <= hv) pa->grad[i] += self.grad[i];
    });
    const T* x = a.data();
    T* o = out.data();
    for (size_t i = 0; i < out.numel(); ++i) o[i] = std::min(hv, std::max(lv, x[i]));
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    auto pa = a.node();
    auto out = detail::make_op<T>({1}, "sum", {a}, [pa](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        T g = self.grad[0];
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    });
    T acc = T(0);
    const T* x = a.data();
    for (size_t i = 0; i < a.numel(); ++i) acc += x[i];
    out.data()[0] = acc;
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    size_t n = a.numel();
    auto pa = a.node();
    auto out = detail::make_op<T>({1}, "mean", {a}, [pa, n](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        T g = self.grad[0] / static_cast<T>(n);
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    });
    T acc = T(0);
    const T* x = a.data();
    for (size_t i = 0; i < n; ++i) acc += x[i];
    out.data()[0] = acc / static_cast<T>(n);
    return out;
}

// ---------------------------------------------------------------------------
// channel-axis shape ops (NCHW)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    const Shape& s0 = xs[0].shape();
    require(s0.size() == 4, cat("concat_channels: want NCHW, got ", shape_str(s0)));
    int total_c = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
                cat("concat_channels: incompatible ", shape_str(s), " vs ", shape_str(s0)));
        total_c += s[1];
    }
    int n = s0[0], h = s0[2], w = s0[3];
    size_t hw = static_cast<size_t>(h) * w;

    std::vector<std::shared_ptr<detail::Node<T>>> ps;
    for (const auto& x : xs) ps.push_back(x.node());

    auto out_node = std::make_shared<detail::Node<T>>();
    out_node->shape = {n, total_c, h, w};
    out_node->data.assign(shape_numel(out_node->shape), T(0));
    out_node->op = "concat_channels";
    if (GradMode::enabled()) {
        bool track = false;
        for (auto& p : ps) track = track || p->requires_grad;
        if (track) {
            out_node->requires_grad = true;
            out_node->parents = ps;
            out_node->backward = [ps, n, total_c, hw](detail::Node<T>& self) {
                for (int b = 0; b < n; ++b) {
                    size_t co = 0;
                    for (auto& p : ps) {
                        size_t pc = static_cast<size_t>(p->shape[1]);
                        if (p->requires_grad) {
                            p->ensure_grad();
                            const T* g = self.grad.data() + (static_cast<size_t>(b) * total_c + co) * hw;
                            T* pg = p->grad.data() + static_cast<size_t>(b) * pc * hw;
                            for (size_t i = 0; i < pc * hw; ++i) pg[i] += g[i];
                        }
                        co += pc;
                    }
                }
            };
        }
    }
    TensorT<T> out(out_node);
    for (int b = 0; b < n; ++b) {
        size_t co = 0;
        for (const auto& x : xs) {
            size_t pc = static_cast<size_t>(x.shape()[1]);
            const T* src = x.data() + static_cast<size_t>(b) * pc * hw;
            T* dst = out.data() + (static_cast<size_t>(b) * total_c + co) * hw;
            std::memcpy(dst, src, pc * hw * sizeof(T));
            co += pc;
        }
    }
    return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    return concat_channels(std::vector<TensorT<T>>{a, b});
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& a, int c0, int c1) {
    const Shape& s = a.shape();
    require(s.size() == 4, cat("slice_channels: want NCHW, got ", shape_str(s)));
    require(0 <= c0 && c0 < c1 && c1 <= s[1],
            cat("slice_channels: range [", c0, ",", c1, ") out of ", s[1], " channels"));
    int n = s[0], c = s[1], h = s[2], w = s[3];
    size_t hw = static_cast<size_t>(h) * w;
    int cs = c1 - c0;
    auto pa = a.node();
    auto out = detail::make_op<T>({n, cs, h, w}, "slice_channels", {a},
                                  [pa, n, c, c0, cs, hw](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int b = 0; b < n; ++b) {
            const T* g = self.grad.data() + static_cast<size_t>(b) * cs * hw;
            T* pg = pa->grad.data() + (static_cast<size_t>(b) * c + c0) * hw;
            for (size_t i = 0; i < static_cast<size_t>(cs) * hw; ++i) pg[i] += g[i];
        }
    });
    for (int b = 0; b < n; ++b) {
        const T* src = a.data() + (static_cast<size_t>(b) * c + c0) * hw;
        T* dst = out.data() + static_cast<size_t>(b) * cs * hw;
        std::memcpy(dst, src, static_cast<size_t>(cs) * hw * sizeof(T));
    }
    return out;
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

// 2x2 average pooling, stride 2; spatial extents must be even
template <typename T>
TensorT<T> down2(const TensorT<T>& a) {
    const Shape& s = a.shape();
    require(s.size() == 4, cat("down2: want NCHW, got ", shape_str(s)));
    require(s[2] % 2 == 0 && s[3] % 2 == 0,
            cat("down2: spatial extents must be even, got ", shape_str(s)));
    int n = s[0], c = s[1], h = s[2], w = s[3];
    int oh = h / 2, ow = w / 2;
    auto pa = a.node();
    auto out = detail::make_op<T>({n, c, oh, ow}, "down2", {a},
                                  [pa, n, c, h, w, oh, ow](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int b = 0; b < n * c; ++b) {
            const T* g = self.grad.data() + static_cast<size_t>(b) * oh * ow;
            T* pg = pa->grad.data() + static_cast<size_t>(b) * h * w;
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    T q = g[y * ow + x] * T(0.25);
                    pg[(2 * y) * w + 2 * x] += q;
                    pg[(2 * y) * w + 2 * x + 1] += q;
                    pg[(2 * y + 1) * w + 2 * x] += q;
                    pg[(2 * y + 1) * w + 2 * x + 1] += q;
                }
        }
    });
    for (int b = 0; b < n * c; ++b) {
        const T* src = a.data() + static_cast<size_t>(b) * h * w;
        T* dst = out.data() + static_cast<size_t>(b) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                dst[y * ow + x] = (src[(2 * y) * w + 2 * x] + src[(2 * y) * w + 2 * x + 1] +
                                   src[(2 * y + 1) * w + 2 * x] + src[(2 * y + 1) * w + 2 * x + 1]) *
                                  T(0.25);
    }
    return out;
}

// nearest-neighbour 2x upsampling
template <typename T>
TensorT<T> up2_nearest(const TensorT<T>& a) {
    const Shape& s = a.shape();
    require(s.size() == 4, cat("up2_nearest: want NCHW, got ", shape_str(s)));
    int n = s[0], c = s[1], h = s[2], w = s[3];
    int oh = h * 2, ow = w * 2;
    auto pa = a.node();
    auto out = detail::make_op<T>({n, c, oh, ow}, "up2_nearest", {a},
                                  [pa, n, c, h, w, ow](detail::Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int b = 0; b < n * c; ++b) {
            const T* g = self.grad.data() + static_cast<size_t>(b) * (2 * h) * ow;
            T* pg = pa->grad.data() + static_cast<size_t>(b) * h * w;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    pg[y * w + x] += g[(2 * y) * ow + 2 * x] + g[(2 * y) * ow + 2 * x + 1] +
                                     g[(2 * y + 1) * ow + 2 * x] + g[(2 * y + 1) * ow + 2 * x + 1];
        }
    });
    for (int b = 0; b < n * c; ++b) {
        const T* src = a.data() + static_cast<size_t>(b) * h * w;
        T* dst = out.data() + static_cast<size_t>(b) * oh * ow;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T v = src[y * w + x];
                dst[(2 * y) * ow + 2 * x] = v;
                dst[(2 * y) * ow + 2 * x + 1] = v;
                dst[(2 * y + 1) * ow + 2 * x] = v;
                dst[(2 * y + 1) * ow + 2 * x + 1] = v;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution and dense kernels
// ---------------------------------------------------------------------------

namespace detail {

// '/' truncates toward zero; tap upper bounds need a true floor when the
// numerator goes negative (tiny inputs with pad reaching past the far edge)
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Unfold one image into the {ci*k*k, ho*wo} patch matrix so convolution
// becomes a single matrix product. Out-of-bounds taps stay zero.
template <typename T>
void im2col(const T* x, int ci, int hi, int wi, int k, int stride, int pad, int ho, int wo,
            T* col) {
    size_t cols = static_cast<size_t>(ho) * wo;
    std::fill(col, col + static_cast<size_t>(ci) * k * k * cols, T(0));
    for (int ic = 0; ic < ci; ++ic) {
        const T* xm = x + static_cast<size_t>(ic) * hi * wi;
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                T* crow = col + ((static_cast<size_t>(ic) * k + kh) * k + kw) * cols;
                int oh0 = std::max(0, (pad - kh + stride - 1) / stride);
                int oh1 = std::min(ho - 1, floor_div(hi - 1 - kh + pad, stride));
                int ow0 = std::max(0, (pad - kw + stride - 1) / stride);
                int ow1 = std::min(wo - 1, floor_div(wi - 1 - kw + pad, stride));
                for (int oh = oh0; oh <= oh1; ++oh) {
                    const T* xrow = xm + (oh * stride + kh - pad) * wi - pad + kw;
                    T* dst = crow + static_cast<size_t>(oh) * wo;
                    if (stride == 1)
                        std::copy(xrow + ow0, xrow + ow1 + 1, dst + ow0);
                    else
                        for (int ow = ow0; ow <= ow1; ++ow) dst[ow] = xrow[ow * stride];
                }
            }
    }
}

// scatter-add the inverse of im2col, used for the input gradient
template <typename T>
void col2im_add(const T* col, int ci, int hi, int wi, int k, int stride, int pad, int ho, int wo,
                T* x) {
    size_t cols = static_cast<size_t>(ho) * wo;
    for (int ic = 0; ic < ci; ++ic) {
        T* xm = x + static_cast<size_t>(ic) * hi * wi;
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                const T* crow = col + ((static_cast<size_t>(ic) * k + kh) * k + kw) * cols;
                int oh0 = std::max(0, (pad - kh + stride - 1) / stride);
                int oh1 = std::min(ho - 1, floor_div(hi - 1 - kh + pad, stride));
                int ow0 = std::max(0, (pad - kw + stride - 1) / stride);
                int ow1 = std::min(wo - 1, floor_div(wi - 1 - kw + pad, stride));
                for (int oh = oh0; oh <= oh1; ++oh) {
                    T* xrow = xm + (oh * stride + kh - pad) * wi - pad + kw;
                    const T* src = crow + static_cast<size_t>(oh) * wo;
                    if (stride == 1)
                        for (int ow = ow0; ow <= ow1; ++ow) xrow[ow] += src[ow];
                    else
                        for (int ow = ow0; ow <= ow1; ++ow) xrow[ow * stride] += src[ow];
                }
            }
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* o, int n, int ci, int hi, int wi,
                    int co, int k, int stride, int pad, int ho, int wo) {
    size_t in_im = static_cast<size_t>(ci) * hi * wi;
    size_t out_im = static_cast<size_t>(co) * ho * wo;
    size_t rows = static_cast<size_t>(ci) * k * k;
    size_t cols = static_cast<size_t>(ho) * wo;
    std::vector<T> col(rows * cols);
    ConstMatMap<T> wm(w, co, static_cast<Eigen::Index>(rows));
    for (int bn = 0; bn < n; ++bn) {
        im2col(x + bn * in_im, ci, hi, wi, k, stride, pad, ho, wo, col.data());
        ConstMatMap<T> cm(col.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
        MatMap<T> om(o + bn * out_im, co, static_cast<Eigen::Index>(cols));
        om.noalias() = wm * cm;
        if (b) {
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b, co);
            om.colwise() += bv;
        }
    }
}

} // namespace detail

// 2-D convolution, zero padding, square kernel. input NCHW, weight OIKK,
// bias O (length-0 tensor means no bias). Differentiable in all tensor args.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride = 1, int padding = 0) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require(xs.size() == 4, cat("conv2d: input must be NCHW, got ", shape_str(xs)));
    require(ws.size() == 4 && ws[2] == ws[3], cat("conv2d: weight must be OIKK, got ", shape_str(ws)));
    require(xs[1] == ws[1],
            cat("conv2d: input channels ", shape_str(xs), " vs weight ", shape_str(ws)));
    require(stride >= 1 && padding >= 0, cat("conv2d: bad stride/padding ", stride, "/", padding));
    require(bias.shape() == Shape{ws[0]},
            cat("conv2d: bias ", shape_str(bias.shape()), " vs weight ", shape_str(ws)));

    int n = xs[0], ci = xs[1], hi = xs[2], wi = xs[3];
    int co = ws[0], k = ws[2];
    int ho = (hi + 2 * padding - k) / stride + 1;
    int wo = (wi + 2 * padding - k) / stride + 1;
    require(ho >= 1 && wo >= 1,
            cat("conv2d: kernel ", shape_str(ws), " larger than padded input ", shape_str(xs)));

    auto px = input.node();
    auto pw = weight.node();
    auto pb = bias.node();
    auto out = detail::make_op<T>({n, co, ho, wo}, "conv2d", {input, weight, bias},
                                  [px, pw, pb, n, ci, hi, wi, co, k, stride, padding, ho,
                                   wo](detail::Node<T>& self) {
        const T* g = self.grad.data();
        size_t in_im = static_cast<size_t>(ci) * hi * wi;
        size_t out_im = static_cast<size_t>(co) * ho * wo;
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int bn = 0; bn < n; ++bn)
                for (int oc = 0; oc < co; ++oc) {
                    const T* gm = g + bn * out_im + static_cast<size_t>(oc) * ho * wo;
                    T acc = T(0);
                    for (int i = 0; i < ho * wo; ++i) acc += gm[i];
                    pb->grad[oc] += acc;
                }
        }
        size_t rows = static_cast<size_t>(ci) * k * k;
        size_t cols = static_cast<size_t>(ho) * wo;
        if (pw->requires_grad) {
            pw->ensure_grad();
            std::vector<T> col(rows * cols);
            detail::MatMap<T> wg(pw->grad.data(), co, static_cast<Eigen::Index>(rows));
            for (int bn = 0; bn < n; ++bn) {
                detail::im2col(px->data.data() + bn * in_im, ci, hi, wi, k, stride, padding, ho,
                               wo, col.data());
                detail::ConstMatMap<T> cm(col.data(), static_cast<Eigen::Index>(rows),
                                          static_cast<Eigen::Index>(cols));
                detail::ConstMatMap<T> gm(g + bn * out_im, co, static_cast<Eigen::Index>(cols));
                wg.noalias() += gm * cm.transpose();
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            std::vector<T> colg(rows * cols);
            detail::ConstMatMap<T> wm(pw->data.data(), co, static_cast<Eigen::Index>(rows));
            detail::MatMap<T> cg(colg.data(), static_cast<Eigen::Index>(rows),
                                 static_cast<Eigen::Index>(cols));
            for (int bn = 0; bn < n; ++bn) {
                detail::ConstMatMap<T> gm(g + bn * out_im, co, static_cast<Eigen::Index>(cols));
                cg.noalias() = wm.transpose() * gm;
                detail::col2im_add(colg.data(), ci, hi, wi, k, stride, padding, ho, wo,
                                   px->grad.data() + bn * in_im);
            }
        }
    });
    detail::conv2d_forward(input.data(), weight.data(), bias.numel() ? bias.data() : nullptr,
                           out.data(), n, ci, hi, wi, co, k, stride, padding, ho, wo);
    return out;
}

// dense layer: x {N,D} * w {O,D}^T + b {O} -> {N,O}
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
            cat("linear: x ", shape_str(xs), " vs w ", shape_str(ws)));
    require(b.shape() == Shape{ws[0]}, cat("linear: bias ", shape_str(b.shape()), " vs w ", shape_str(ws)));
    int n = xs[0], d = xs[1], o = ws[0];
    auto px = x.node(), pw = w.node(), pb = b.node();
    auto out = detail::make_op<T>({n, o}, "linear", {x, w, b},
                                  [px, pw, pb, n, d, o](detail::Node<T>& self) {
        const T* g = self.grad.data();
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < o; ++j) pb->grad[j] += g[i * o + j];
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < o; ++j) {
                    T gv = g[i * o + j];
                    const T* xr = px->data.data() + static_cast<size_t>(i) * d;
                    T* wr = pw->grad.data() + static_cast<size_t>(j) * d;
                    for (int q = 0; q < d; ++q) wr[q] += gv * xr[q];
                }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < o; ++j) {
                    T gv = g[i * o + j];
                    const T* wr = pw->data.data() + static_cast<size_t>(j) * d;
                    T* xr = px->grad.data() + static_cast<size_t>(i) * d;
                    for (int q = 0; q < d; ++q) xr[q] += gv * wr[q];
                }
        }
    });
    const T* xd = x.data();
    const T* wd = w.data();
    const T* bd = b.data();
    T* od = out.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) {
            T acc = bd[j];
            const T* xr = xd + static_cast<size_t>(i) * d;
            const T* wr = wd + static_cast<size_t>(j) * d;
            for (int q = 0; q < d; ++q) acc += xr[q] * wr[q];
            od[i * o + j] = acc;
        }
    return out;
}

// x {N,C,H,W} + v {N,C} broadcast over spatial dims (time-embedding injection)
template <typename T>
TensorT<T> add_chan(const TensorT<T>& x, const TensorT<T>& v) {
    const Shape& xs = x.shape();
    const Shape& vs = v.shape();
    require(xs.size() == 4 && vs.size() == 2 && xs[0] == vs[0] && xs[1] == vs[1],
            cat("add_chan: x ", shape_str(xs), " vs v ", shape_str(vs)));
    int n = xs[0], c = xs[1];
    size_t hw = static_cast<size_t>(xs[2]) * xs[3];
    auto px = x.node(), pv = v.node();
    auto out = detail::make_op<T>(xs, "add_chan", {x, v}, [px, pv, n, c, hw](detail::Node<T>& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int b = 0; b < n * c; ++b) {
                const T* g = self.grad.data() + b * hw;
                T acc = T(0);
                for (size_t i = 0; i < hw; ++i) acc += g[i];
                pv->grad[b] += acc;
            }
        }
    });
    const T* xd = x.data();
    const T* vd = v.data();
    T* od = out.data();
    for (int b = 0; b < n * c; ++b) {
        T vv = vd[b];
        const T* xm = xd + b * hw;
        T* om = od + b * hw;
        for (size_t i = 0; i < hw; ++i) om[i] = xm[i] + vv;
    }
    return out;
}

// {N,C,H,W} -> {N,C} spatial mean
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    const Shape& xs = x.shape();
    require(xs.size() == 4, cat("global_avg_pool: want NCHW, got ", shape_str(xs)));
    int n = xs[0], c = xs[1];
    size_t hw = static_cast<size_t>(xs[2]) * xs[3];
    auto px = x.node();
    auto out = detail::make_op<T>({n, c}, "global_avg_pool", {x},
                                  [px, n, c, hw](detail::Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int b = 0; b < n * c; ++b) {
            T g = self.grad[b] / static_cast<T>(hw);
            T* pg = px->grad.data() + b * hw;
            for (size_t i = 0; i < hw; ++i) pg[i] += g;
        }
    });
    const T* xd = x.data();
    T* od = out.data();
    for (int b = 0; b < n * c; ++b) {
        const T* xm = xd + b * hw;
        T acc = T(0);
        for (size_t i = 0; i < hw; ++i) acc += xm[i];
        od[b] = acc / static_cast<T>(hw);
    }
    return out;
}

// weight / sigma_hat with sigma_hat = u^T W v on the (out x rest) matricized
// weight; u and v are power-iteration buffers held constant by backward.
// Gradient: G/sigma - (sum(G.W)/sigma^2) u v^T.
template <typename T>
TensorT<T> spectral_scale(const TensorT<T>& w, const std::vector<T>& u, const std::vector<T>& v) {
    const Shape& ws = w.shape();
    require(!ws.empty(), "spectral_scale: undefined weight");
    size_t rows = static_cast<size_t>(ws[0]);
    size_t cols = w.numel() / rows;
    require(u.size() == rows && v.size() == cols,
            cat("spectral_scale: u/v sizes ", u.size(), "/", v.size(), " vs matricized ", rows, "x", cols));

    const T* wd = w.data();
    double sigma = 0.0;
    for (size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (size_t cidx = 0; cidx < cols; ++cidx) acc += static_cast<double>(wd[r * cols + cidx]) * v[cidx];
        sigma += static_cast<double>(u[r]) * acc;
    }
    if (std::abs(sigma) < 1e-12) {
        log_info("spectral_scale: sigma_hat below 1e-12, skipping normalization");
        // pass-through with identity gradient
        auto pw = w.node();
        auto out = detail::make_op<T>(ws, "spectral_scale", {w}, [pw](detail::Node<T>& self) {
            if (!pw->requires_grad) return;
            pw->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pw->grad[i] += self.grad[i];
        });
        std::copy(wd, wd + w.numel(), out.data());
        return out;
    }

    T sig = static_cast<T>(sigma);
    auto pw = w.node();
    auto out = detail::make_op<T>(ws, "spectral_scale", {w},
                                  [pw, u, v, sig, rows, cols](detail::Node<T>& self) {
        if (!pw->requires_grad) return;
        pw->ensure_grad();
        double gw = 0.0; // sum of G .* W
        for (size_t i = 0; i < self.grad.size(); ++i)
            gw += static_cast<double>(self.grad[i]) * pw->data[i];
        T coef = static_cast<T>(gw / (static_cast<double>(sig) * sig));
        for (size_t r = 0; r < rows; ++r)
            for (size_t cidx = 0; cidx < cols; ++cidx) {
                size_t i = r * cols + cidx;
                pw->grad[i] += self.grad[i] / sig - coef * u[r] * v[cidx];
            }
    });
    T inv = T(1) / sig;
    T* od = out.data();
    for (size_t i = 0; i < w.numel(); ++i) od[i] = wd[i] * inv;
    return out;
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

struct BackwardStats {
    size_t nodes_visited = 0;
};

// Reverse-mode sweep from a scalar loss. Leaf grads accumulate across calls;
// interior grads are reset per call so repeated backward() stays linear.
template <typename T>
BackwardStats backward(const TensorT<T>& loss) {
    require(loss.defined(), "backward: undefined loss tensor");
    require(loss.numel() == 1, cat("backward: loss must be scalar, got ", shape_str(loss.shape())));

    using NodeT = detail::Node<T>;
    std::vector<NodeT*> topo;
    std::vector<std::pair<NodeT*, size_t>> stack; // (node, next parent index)
    std::vector<NodeT*> seen;

    auto visited = [&seen](NodeT* n) {
        return std::find(seen.begin(), seen.end(), n) != seen.end();
    };

    NodeT* root = loss.node().get();
    if (!root->requires_grad) return {};
    stack.push_back({root, 0});
    seen.push_back(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT* p = node->parents[idx++].get();
            if (p->requires_grad && !visited(p)) {
                seen.push_back(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (NodeT* n : topo) {
        n->ensure_grad();
        if (n->backward) std::fill(n->grad.begin(), n->grad.end(), T(0)); // interior node
    }
    root->grad[0] += T(1);

    BackwardStats stats;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        ++stats.nodes_visited;
        if ((*it)->backward) (*it)->backward(**it);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// finite-difference verification
// ---------------------------------------------------------------------------

// Max relative error between analytic gradients and central differences over
// every coordinate of every input: |analytic - numeric| / max(floor, |numeric|).
// f must be a pure function of `inputs`. Whole-network sweeps raise the
// denominator floor so coordinates with near-zero derivatives are judged on
// an absolute scale instead of amplified rounding noise.
template <typename T, typename F>
double gradient_check(F&& f, std::vector<TensorT<T>>& inputs, double eps,
                      double denom_floor = 1e-8) {
    require(eps > 0, "gradient_check: eps must be positive");
    for (auto& in : inputs) in.set_requires_grad(true);
    for (auto& in : inputs) in.zero_grad();

    TensorT<T> loss = f(inputs);
    require(loss.numel() == 1, "gradient_check: f must be scalar-valued");
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw std::runtime_error("gradient_check: non-finite loss");
    backward(loss);

    std::vector<std::vector<T>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) analytic.push_back(in.grad());

    double max_rel = 0.0;
    NoGradGuard ng;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto& in = inputs[i];
        for (size_t j = 0; j < in.numel(); ++j) {
            T orig = in[j];
            in[j] = orig + static_cast<T>(eps);
            double fp = static_cast<double>(f(inputs).item());
            in[j] = orig - static_cast<T>(eps);
            double fm = static_cast<double>(f(inputs).item());
            in[j] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("gradient_check: non-finite intermediate");
            double numeric = (fp - fm) / (2.0 * eps);
            double rel = std::abs(static_cast<double>(analytic[i][j]) - numeric) /
                         std::max(denom_floor, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace atvd
