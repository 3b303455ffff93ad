#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "biometry/errors.hpp"

namespace biometry::nn {

/// Channel-major (c, y, x) dense tensor.
template <typename T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {}

    T& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    const T& at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
    void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

enum class LayerKind { conv, relu, upsample2x, add };

/// One node of a feed-forward graph. Activation ids: 0 is the network input,
/// layer i writes activation i+1. in0/in1 must reference earlier activations.
struct LayerDef {
    LayerKind kind = LayerKind::conv;
    int in0 = -1;
    int in1 = -1; // add only
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1; // conv only
};

struct NetDef {
    int in_channels = 1;
    std::vector<LayerDef> layers;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers)
            if (l.kind == LayerKind::conv)
                n += static_cast<std::size_t>(l.out_c) * l.in_c * l.k * l.k + l.out_c;
        return n;
    }
};

inline void validate(const NetDef& def) {
    if (def.in_channels < 1) throw DomainError("NetDef: in_channels must be >= 1");
    for (std::size_t i = 0; i < def.layers.size(); ++i) {
        const auto& l = def.layers[i];
        if (l.in0 < 0 || l.in0 > static_cast<int>(i))
            throw DomainError("NetDef: layer input out of range");
        if (l.kind == LayerKind::add && (l.in1 < 0 || l.in1 > static_cast<int>(i)))
            throw DomainError("NetDef: add layer needs two valid inputs");
        if (l.kind == LayerKind::conv &&
            (l.in_c < 1 || l.out_c < 1 || l.k < 1 || l.stride < 1 || l.pad < 0))
            throw DomainError("NetDef: invalid conv geometry");
    }
    if (def.layers.empty()) throw DomainError("NetDef: empty network");
}

/// Per-layer weight/bias arrays; non-conv layers hold empty vectors.
template <typename T>
struct NetParams {
    std::vector<std::vector<T>> w; // conv: out_c x (in_c*k*k), row-major by out channel
    std::vector<std::vector<T>> b; // conv: out_c

    std::size_t total() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < w.size(); ++i) n += w[i].size() + b[i].size();
        return n;
    }
    void zero() {
        for (auto& a : w) std::fill(a.begin(), a.end(), T(0));
        for (auto& a : b) std::fill(a.begin(), a.end(), T(0));
    }
};

/// He-normal weights, zero biases. Draws are made in double then cast, so the
/// stream layout is identical for float and double instantiations.
template <typename T>
NetParams<T> init_params(const NetDef& def, std::mt19937_64& rng) {
    NetParams<T> p;
    p.w.resize(def.layers.size());
    p.b.resize(def.layers.size());
    for (std::size_t i = 0; i < def.layers.size(); ++i) {
        const auto& l = def.layers[i];
        if (l.kind != LayerKind::conv) continue;
        const std::size_t fan_in = static_cast<std::size_t>(l.in_c) * l.k * l.k;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        p.w[i].resize(static_cast<std::size_t>(l.out_c) * fan_in);
        for (auto& x : p.w[i]) x = static_cast<T>(dist(rng));
        p.b[i].assign(l.out_c, T(0));
    }
    return p;
}

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

/// col is (in_c*k*k) x (oh*ow), column-major: one column per output location.
template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, int oh, int ow, std::vector<T>& col) {
    const std::size_t rows = static_cast<std::size_t>(x.c) * k * k;
    col.assign(rows * oh * ow, T(0));
    std::size_t idx = 0;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int ci = 0; ci < x.c; ++ci) {
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        col[idx++] = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                                         ? x.at(ci, iy, ix)
                                         : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const std::vector<T>& col, int c, int h, int w, int k, int stride, int pad, int oh,
            int ow, Tensor<T>& gx) {
    gx = Tensor<T>(c, h, w);
    std::size_t idx = 0;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            for (int ci = 0; ci < c; ++ci) {
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w) gx.at(ci, iy, ix) += col[idx];
                        ++idx;
                    }
                }
            }
        }
    }
}

} // namespace detail

/// Activations (and conv im2col buffers) captured by forward for the backward
/// pass.
template <typename T>
struct ForwardCache {
    std::vector<Tensor<T>> acts;       // acts[0] = input
    std::vector<std::vector<T>> cols;  // per layer; empty unless conv
};

template <typename T>
Tensor<T> net_forward(const NetDef& def, const NetParams<T>& params, const Tensor<T>& input,
                      ForwardCache<T>* cache = nullptr) {
    if (input.c != def.in_channels) throw DomainError("net_forward: input channel mismatch");
    std::vector<Tensor<T>> local_acts;
    std::vector<Tensor<T>>& acts = cache ? cache->acts : local_acts;
    acts.clear();
    acts.reserve(def.layers.size() + 1);
    acts.push_back(input);
    if (cache) {
        cache->cols.clear();
        cache->cols.resize(def.layers.size());
    }
    std::vector<T> scratch_col;

    for (std::size_t i = 0; i < def.layers.size(); ++i) {
        const auto& l = def.layers[i];
        const Tensor<T>& x = acts[l.in0];
        switch (l.kind) {
        case LayerKind::conv: {
            if (x.c != l.in_c) throw DomainError("net_forward: conv channel mismatch");
            const int oh = detail::conv_out_dim(x.h, l.k, l.stride, l.pad);
            const int ow = detail::conv_out_dim(x.w, l.k, l.stride, l.pad);
            if (oh < 1 || ow < 1) throw DomainError("net_forward: conv output collapsed");
            std::vector<T>& col = cache ? cache->cols[i] : scratch_col;
            detail::im2col(x, l.k, l.stride, l.pad, oh, ow, col);
            const long rows = static_cast<long>(l.in_c) * l.k * l.k;
            const long cols_n = static_cast<long>(oh) * ow;
            Eigen::Map<const detail::MatRM<T>> wmat(params.w[i].data(), l.out_c, rows);
            Eigen::Map<const detail::MatCM<T>> cmat(col.data(), rows, cols_n);
            Tensor<T> y(l.out_c, oh, ow);
            Eigen::Map<detail::MatRM<T>> ymat(y.v.data(), l.out_c, cols_n);
            ymat.noalias() = wmat * cmat;
            for (int oc = 0; oc < l.out_c; ++oc) ymat.row(oc).array() += params.b[i][oc];
            acts.push_back(std::move(y));
            break;
        }
        case LayerKind::relu: {
            Tensor<T> y = x;
            for (auto& t : y.v)
                if (t < T(0)) t = T(0);
            acts.push_back(std::move(y));
            break;
        }
        case LayerKind::upsample2x: {
            Tensor<T> y(x.c, x.h * 2, x.w * 2);
            for (int ci = 0; ci < x.c; ++ci)
                for (int yy = 0; yy < y.h; ++yy)
                    for (int xx = 0; xx < y.w; ++xx) y.at(ci, yy, xx) = x.at(ci, yy / 2, xx / 2);
            acts.push_back(std::move(y));
            break;
        }
        case LayerKind::add: {
            const Tensor<T>& x2 = acts[l.in1];
            if (!x.same_shape(x2)) throw DomainError("net_forward: add shape mismatch");
            Tensor<T> y = x;
            for (std::size_t t = 0; t < y.v.size(); ++t) y.v[t] += x2.v[t];
            acts.push_back(std::move(y));
            break;
        }
        }
    }
    return acts.back();
}

/// Accumulates parameter gradients into grads (caller zeroes between steps).
/// Requires the cache from the matching net_forward call.
template <typename T>
void net_backward(const NetDef& def, const NetParams<T>& params, const ForwardCache<T>& cache,
                  const Tensor<T>& grad_output, NetParams<T>& grads) {
    if (cache.acts.size() != def.layers.size() + 1)
        throw DomainError("net_backward: cache does not match network");
    std::vector<Tensor<T>> grad_acts(cache.acts.size());
    grad_acts.back() = grad_output;

    for (int i = static_cast<int>(def.layers.size()) - 1; i >= 0; --i) {
        const auto& l = def.layers[i];
        Tensor<T>& gy = grad_acts[i + 1];
        if (gy.size() == 0) continue; // this activation feeds nothing that was reached
        const Tensor<T>& x = cache.acts[l.in0];
        Tensor<T>& gx = grad_acts[l.in0];
        auto ensure = [](Tensor<T>& g, const Tensor<T>& like) {
            if (g.size() == 0) g = Tensor<T>(like.c, like.h, like.w);
        };
        switch (l.kind) {
        case LayerKind::conv: {
            const int oh = gy.h, ow = gy.w;
            const long rows = static_cast<long>(l.in_c) * l.k * l.k;
            const long cols_n = static_cast<long>(oh) * ow;
            Eigen::Map<const detail::MatRM<T>> gymat(gy.v.data(), l.out_c, cols_n);
            Eigen::Map<const detail::MatCM<T>> cmat(cache.cols[i].data(), rows, cols_n);
            Eigen::Map<detail::MatRM<T>> gwmat(grads.w[i].data(), l.out_c, rows);
            gwmat.noalias() += gymat * cmat.transpose();
            // Sequential sum, not an Eigen redux: vectorized reductions peel to
            // the buffer's runtime alignment, which varies with heap layout and
            // would make gradients differ between identical runs.
            for (int oc = 0; oc < l.out_c; ++oc) {
                T s = 0;
                const T* row = gy.v.data() + static_cast<std::size_t>(oc) * cols_n;
                for (long j = 0; j < cols_n; ++j) s += row[j];
                grads.b[i][oc] += s;
            }

            Eigen::Map<const detail::MatRM<T>> wmat(params.w[i].data(), l.out_c, rows);
            std::vector<T> gcol(static_cast<std::size_t>(rows) * cols_n);
            Eigen::Map<detail::MatCM<T>> gcmat(gcol.data(), rows, cols_n);
            gcmat.noalias() = wmat.transpose() * gymat;
            Tensor<T> gxl;
            detail::col2im(gcol, x.c, x.h, x.w, l.k, l.stride, l.pad, oh, ow, gxl);
            ensure(gx, x);
            for (std::size_t t = 0; t < gx.v.size(); ++t) gx.v[t] += gxl.v[t];
            break;
        }
        case LayerKind::relu: {
            ensure(gx, x);
            for (std::size_t t = 0; t < gx.v.size(); ++t)
                if (x.v[t] > T(0)) gx.v[t] += gy.v[t];
            break;
        }
        case LayerKind::upsample2x: {
            ensure(gx, x);
            for (int ci = 0; ci < x.c; ++ci)
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx)
                        gx.at(ci, yy / 2, xx / 2) += gy.at(ci, yy, xx);
            break;
        }
        case LayerKind::add: {
            ensure(gx, x);
            for (std::size_t t = 0; t < gx.v.size(); ++t) gx.v[t] += gy.v[t];
            Tensor<T>& gx2 = grad_acts[l.in1];
            ensure(gx2, cache.acts[l.in1]);
            for (std::size_t t = 0; t < gx2.v.size(); ++t) gx2.v[t] += gy.v[t];
            break;
        }
        }
        gy = Tensor<T>(); // free as we go
    }
}

/// Adam with double-precision moment state independent of the parameter
/// scalar type.
template <typename T>
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;
    std::vector<std::vector<double>> mw, vw, mb, vb;

    void init(const NetParams<T>& p) {
        t = 0;
        auto shape = [](const std::vector<std::vector<T>>& src,
                        std::vector<std::vector<double>>& dst) {
            dst.clear();
            dst.reserve(src.size());
            for (const auto& a : src) dst.emplace_back(a.size(), 0.0);
        };
        shape(p.w, mw);
        shape(p.w, vw);
        shape(p.b, mb);
        shape(p.b, vb);
    }

    void step(NetParams<T>& p, const NetParams<T>& g, double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        auto upd = [&](std::vector<T>& pa, const std::vector<T>& ga, std::vector<double>& m,
                       std::vector<double>& v) {
            for (std::size_t i = 0; i < pa.size(); ++i) {
                const double gi = static_cast<double>(ga[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                pa[i] = static_cast<T>(static_cast<double>(pa[i]) -
                                       lr * mhat / (std::sqrt(vhat) + eps));
            }
        };
        for (std::size_t i = 0; i < p.w.size(); ++i) {
            upd(p.w[i], g.w[i], mw[i], vw[i]);
            upd(p.b[i], g.b[i], mb[i], vb[i]);
        }
    }
};

/// Encoder of three stride-2 stages to /8, decoder of three conv stages with
/// a single x2 upsample and a skip sum landing at /4, then a 1x1 head with
/// one output channel per landmark.
inline NetDef build_tiny(const std::vector<int>& channels = {8, 16, 24, 32}) {
    if (channels.size() != 4) throw DomainError("build_tiny: expected 4 stage widths");
    const int c0 = channels[0], c1 = channels[1], c2 = channels[2], c3 = channels[3];
    NetDef d;
    d.in_channels = 1;
    auto conv = [&](int in_act, int ic, int oc, int k, int s, int p) {
        d.layers.push_back({LayerKind::conv, in_act, -1, ic, oc, k, s, p});
        return static_cast<int>(d.layers.size());
    };
    auto relu = [&](int in_act) {
        d.layers.push_back({LayerKind::relu, in_act, -1});
        return static_cast<int>(d.layers.size());
    };
    int a = conv(0, 1, c0, 3, 1, 1); // stem
    a = relu(a);
    a = conv(a, c0, c1, 3, 2, 1); // /2
    a = relu(a);
    a = conv(a, c1, c2, 3, 2, 1); // /4
    const int skip = relu(a);
    a = conv(skip, c2, c3, 3, 2, 1); // /8
    a = relu(a);
    d.layers.push_back({LayerKind::upsample2x, a, -1}); // /4
    a = static_cast<int>(d.layers.size());
    a = conv(a, c3, c2, 3, 1, 1);
    d.layers.push_back({LayerKind::add, a, skip});
    a = static_cast<int>(d.layers.size());
    a = relu(a);
    a = conv(a, c2, c1, 3, 1, 1);
    a = relu(a);
    a = conv(a, c1, c1, 3, 1, 1);
    a = relu(a);
    conv(a, c1, 2, 1, 1, 0); // head
    validate(d);
    return d;
}

/// Two parallel streams at /4 and /8 exchanging information through two
/// fusion rounds (downsampling conv one way, upsample + 1x1 conv the other),
/// final fusion at /4, 1x1 head.
inline NetDef build_multires(const std::vector<int>& channels = {16, 24, 32}) {
    if (channels.size() != 3) throw DomainError("build_multires: expected 3 stage widths");
    const int c0 = channels[0], cA = channels[1], cB = channels[2];
    NetDef d;
    d.in_channels = 1;
    auto conv = [&](int in_act, int ic, int oc, int k, int s, int p) {
        d.layers.push_back({LayerKind::conv, in_act, -1, ic, oc, k, s, p});
        return static_cast<int>(d.layers.size());
    };
    auto relu = [&](int in_act) {
        d.layers.push_back({LayerKind::relu, in_act, -1});
        return static_cast<int>(d.layers.size());
    };
    auto up = [&](int in_act) {
        d.layers.push_back({LayerKind::upsample2x, in_act, -1});
        return static_cast<int>(d.layers.size());
    };
    auto add = [&](int a0, int a1) {
        d.layers.push_back({LayerKind::add, a0, a1});
        return static_cast<int>(d.layers.size());
    };
    int a = conv(0, 1, c0, 3, 2, 1); // /2
    a = relu(a);
    a = conv(a, c0, c0, 3, 2, 1); // /4
    const int trunk = relu(a);
    int A = relu(conv(trunk, c0, cA, 3, 1, 1)); // /4 stream
    int B = relu(conv(trunk, c0, cB, 3, 2, 1)); // /8 stream
    for (int round = 0; round < 2; ++round) {
        const int a_conv = conv(A, cA, cA, 3, 1, 1);
        const int b_to_a = conv(up(B), cB, cA, 1, 1, 0);
        const int b_conv = conv(B, cB, cB, 3, 1, 1);
        const int a_to_b = conv(A, cA, cB, 3, 2, 1);
        A = relu(add(a_conv, b_to_a));
        B = relu(add(b_conv, a_to_b));
    }
    const int fused = relu(add(conv(A, cA, cA, 3, 1, 1), conv(up(B), cB, cA, 1, 1, 0)));
    conv(fused, cA, 2, 1, 1, 0);
    validate(d);
    return d;
}

} // namespace biometry::nn
