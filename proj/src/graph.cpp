#define EIGEN_DONT_PARALLELIZE
#include "advkit/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little, "serialization assumes little-endian host");

namespace advkit::diff {

using json = nlohmann::ordered_json;

std::string act_name(Act a) {
    switch (a) {
        case Act::Elu: return "elu";
        case Act::Relu: return "relu";
        case Act::Square: return "square";
        case Act::Log: return "log";
        case Act::Softmax: return "softmax";
    }
    return "?";
}

Act act_from_name(const std::string& s) {
    if (s == "elu") return Act::Elu;
    if (s == "relu") return Act::Relu;
    if (s == "square") return Act::Square;
    if (s == "log") return Act::Log;
    if (s == "softmax") return Act::Softmax;
    throw std::invalid_argument("unknown activation: " + s);
}

std::string layer_name(const LayerSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Conv2DSpec>) return "conv2d";
            else if constexpr (std::is_same_v<T, DenseSpec>) return "dense";
            else if constexpr (std::is_same_v<T, ActivationSpec>) return act_name(s.kind);
            else if constexpr (std::is_same_v<T, PoolSpec>) return s.kind == PoolKind::Max ? "maxpool" : "avgpool";
            else if constexpr (std::is_same_v<T, BatchNormSpec>) return "batchnorm";
            else if constexpr (std::is_same_v<T, DropoutSpec>) return "dropout";
            else if constexpr (std::is_same_v<T, FlattenSpec>) return "flatten";
            else if constexpr (std::is_same_v<T, ChannelMapSpec>) return "channel_map";
            else return "stft";
        },
        spec);
}

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using CMatMap = Eigen::Map<const Mat<S>>;

struct Shape3 {
    int64_t c = 0, h = 0, w = 0;
    bool flat = false;  // true once Flatten ran; c holds the feature count
    int64_t features() const { return flat ? c : c * h * w; }
};

}  // namespace

// ---------------------------------------------------------------------------
// Layer interface

template <typename S>
class LayerT {
public:
    virtual ~LayerT() = default;

    virtual TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx& ctx,
                               const TapeT<S>& tape) const = 0;
    virtual TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                                const TapeT<S>& tape, std::vector<TensorT<S>*> pg) const = 0;

    virtual std::vector<TensorT<S>*> params() { return {}; }
    virtual std::vector<TensorT<S>*> buffers() { return {}; }
    virtual std::vector<std::string> param_names() const { return {}; }
    virtual std::vector<std::string> buffer_names() const { return {}; }

    int index = 0;  // position in the chain, used for seeds and messages
};

namespace {

template <typename S>
void init_uniform(TensorT<S>& t, double bound, Rng& rng) {
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
class Conv2DLayer final : public LayerT<S> {
public:
    Conv2DSpec spec;
    int64_t in_c, in_h, in_w, out_h, out_w, in_g, out_g;
    TensorT<S> weight;  // [out_c, in_g, kh, kw]
    TensorT<S> bias;    // [out_c]

    Conv2DLayer(const Conv2DSpec& sp, const Shape3& in, uint64_t seed) : spec(sp) {
        if (in.flat) throw std::invalid_argument("conv2d after flatten");
        in_c = in.c;
        in_h = in.h;
        in_w = in.w;
        if (spec.groups < 1 || in_c % spec.groups || spec.out_channels % spec.groups)
            throw std::invalid_argument("conv2d groups must divide input and output channels");
        in_g = in_c / spec.groups;
        out_g = spec.out_channels / spec.groups;
        const int64_t ph = in_h + spec.pad.h0 + spec.pad.h1;
        const int64_t pw = in_w + spec.pad.w0 + spec.pad.w1;
        if (spec.kh < 1 || spec.kw < 1 || spec.kh > ph || spec.kw > pw)
            throw std::invalid_argument("conv2d kernel exceeds padded input extent");
        if (spec.sh < 1 || spec.sw < 1) throw std::invalid_argument("conv2d stride must be >= 1");
        out_h = (ph - spec.kh) / spec.sh + 1;
        out_w = (pw - spec.kw) / spec.sw + 1;
        weight = TensorT<S>({spec.out_channels, in_g, spec.kh, spec.kw});
        bias = TensorT<S>({spec.out_channels});
        Rng rng(seed);
        init_uniform(weight, 1.0 / std::sqrt(double(in_g) * spec.kh * spec.kw), rng);
    }

    Shape3 out_shape() const { return {spec.out_channels, out_h, out_w, false}; }

    // im2col for one sample and group; col is [in_g*kh*kw x out_h*out_w].
    void im2col(const S* x, int64_t g, S* col) const {
        const int64_t ohw = out_h * out_w;
        for (int64_t ig = 0; ig < in_g; ++ig) {
            const S* xc = x + (g * in_g + ig) * in_h * in_w;
            for (int64_t ki = 0; ki < spec.kh; ++ki) {
                for (int64_t kj = 0; kj < spec.kw; ++kj) {
                    S* row = col + ((ig * spec.kh + ki) * spec.kw + kj) * ohw;
                    for (int64_t oh = 0; oh < out_h; ++oh) {
                        const int64_t h = oh * spec.sh + ki - spec.pad.h0;
                        if (h < 0 || h >= in_h) {
                            std::fill(row + oh * out_w, row + (oh + 1) * out_w, S(0));
                            continue;
                        }
                        for (int64_t ow = 0; ow < out_w; ++ow) {
                            const int64_t w = ow * spec.sw + kj - spec.pad.w0;
                            row[oh * out_w + ow] = (w >= 0 && w < in_w) ? xc[h * in_w + w] : S(0);
                        }
                    }
                }
            }
        }
    }

    void col2im_add(const S* col, int64_t g, S* dx) const {
        const int64_t ohw = out_h * out_w;
        for (int64_t ig = 0; ig < in_g; ++ig) {
            S* xc = dx + (g * in_g + ig) * in_h * in_w;
            for (int64_t ki = 0; ki < spec.kh; ++ki) {
                for (int64_t kj = 0; kj < spec.kw; ++kj) {
                    const S* row = col + ((ig * spec.kh + ki) * spec.kw + kj) * ohw;
                    for (int64_t oh = 0; oh < out_h; ++oh) {
                        const int64_t h = oh * spec.sh + ki - spec.pad.h0;
                        if (h < 0 || h >= in_h) continue;
                        for (int64_t ow = 0; ow < out_w; ++ow) {
                            const int64_t w = ow * spec.sw + kj - spec.pad.w0;
                            if (w >= 0 && w < in_w) xc[h * in_w + w] += row[oh * out_w + ow];
                        }
                    }
                }
            }
        }
    }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx& ctx,
                       const TapeT<S>&) const override {
        const int64_t n = x.shape[0];
        const int64_t rows = in_g * spec.kh * spec.kw;
        const int64_t ohw = out_h * out_w;
        TensorT<S> y({n, spec.out_channels, out_h, out_w});
        ctx.a = TensorT<S>({n, spec.groups, rows, ohw});  // cached im2col for the batch
#pragma omp parallel for num_threads(worker_count()) schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t g = 0; g < spec.groups; ++g) {
                S* col = ctx.a.ptr() + ((i * spec.groups + g) * rows) * ohw;
                im2col(x.ptr() + i * in_c * in_h * in_w, g, col);
                CMatMap<S> wm(weight.ptr() + g * out_g * rows, out_g, rows);
                CMatMap<S> cm(col, rows, ohw);
                MatMap<S> ym(y.ptr() + (i * spec.out_channels + g * out_g) * ohw, out_g, ohw);
                ym.noalias() = wm * cm;
                for (int64_t oc = 0; oc < out_g; ++oc)
                    ym.row(oc).array() += bias.data[g * out_g + oc];
            }
        }
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>&, std::vector<TensorT<S>*> pg) const override {
        const int64_t n = gy.shape[0];
        const int64_t rows = in_g * spec.kh * spec.kw;
        const int64_t ohw = out_h * out_w;
        TensorT<S> dx({n, in_c, in_h, in_w});
        TensorT<S>& dw = *pg[0];
        TensorT<S>& db = *pg[1];
#pragma omp parallel for num_threads(worker_count()) schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            std::vector<S> dcol(rows * ohw);
            for (int64_t g = 0; g < spec.groups; ++g) {
                CMatMap<S> wm(weight.ptr() + g * out_g * rows, out_g, rows);
                CMatMap<S> gm(gy.ptr() + (i * spec.out_channels + g * out_g) * ohw, out_g, ohw);
                MatMap<S> dc(dcol.data(), rows, ohw);
                dc.noalias() = wm.transpose() * gm;
                col2im_add(dcol.data(), g, dx.ptr() + i * in_c * in_h * in_w);
            }
        }
        // Weight/bias grads accumulate over the batch in index order.
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t g = 0; g < spec.groups; ++g) {
                const S* col = ctx.a.ptr() + ((i * spec.groups + g) * rows) * ohw;
                CMatMap<S> cm(col, rows, ohw);
                CMatMap<S> gm(gy.ptr() + (i * spec.out_channels + g * out_g) * ohw, out_g, ohw);
                MatMap<S> dwm(dw.ptr() + g * out_g * rows, out_g, rows);
                dwm.noalias() += gm * cm.transpose();
            }
            for (int64_t oc = 0; oc < spec.out_channels; ++oc) {
                const S* gp = gy.ptr() + (i * spec.out_channels + oc) * ohw;
                S acc = 0;
                for (int64_t k = 0; k < ohw; ++k) acc += gp[k];
                db.data[oc] += acc;
            }
        }
        return dx;
    }

    std::vector<TensorT<S>*> params() override { return {&weight, &bias}; }
    std::vector<std::string> param_names() const override { return {"weight", "bias"}; }
};

template <typename S>
class DenseLayer final : public LayerT<S> {
public:
    DenseSpec spec;
    int64_t in_f;
    TensorT<S> weight;  // [out, in]
    TensorT<S> bias;    // [out]

    DenseLayer(const DenseSpec& sp, const Shape3& in, uint64_t seed) : spec(sp) {
        if (!in.flat) throw std::invalid_argument("dense requires flattened input");
        if (spec.out_features < 1) throw std::invalid_argument("dense out_features must be >= 1");
        in_f = in.c;
        weight = TensorT<S>({spec.out_features, in_f});
        bias = TensorT<S>({spec.out_features});
        Rng rng(seed);
        init_uniform(weight, 1.0 / std::sqrt(double(in_f)), rng);
    }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx&,
                       const TapeT<S>&) const override {
        const int64_t n = x.shape[0];
        TensorT<S> y({n, spec.out_features});
        CMatMap<S> xm(x.ptr(), n, in_f);
        CMatMap<S> wm(weight.ptr(), spec.out_features, in_f);
        MatMap<S> ym(y.ptr(), n, spec.out_features);
        ym.noalias() = xm * wm.transpose();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t o = 0; o < spec.out_features; ++o) y.at2(i, o) += bias.data[o];
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>&, std::vector<TensorT<S>*> pg) const override {
        const int64_t n = gy.shape[0];
        TensorT<S> dx({n, in_f});
        CMatMap<S> gm(gy.ptr(), n, spec.out_features);
        CMatMap<S> wm(weight.ptr(), spec.out_features, in_f);
        CMatMap<S> xm(ctx.x.ptr(), n, in_f);
        MatMap<S>(dx.ptr(), n, in_f).noalias() = gm * wm;
        MatMap<S>(pg[0]->ptr(), spec.out_features, in_f).noalias() += gm.transpose() * xm;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t o = 0; o < spec.out_features; ++o) pg[1]->data[o] += gy.at2(i, o);
        return dx;
    }

    std::vector<TensorT<S>*> params() override { return {&weight, &bias}; }
    std::vector<std::string> param_names() const override { return {"weight", "bias"}; }
};

template <typename S>
class ActivationLayer final : public LayerT<S> {
public:
    ActivationSpec spec;
    static constexpr double kLogFloor = 1e-7;

    ActivationLayer(const ActivationSpec& sp, const Shape3& in) : spec(sp) {
        if (spec.kind == Act::Softmax && !in.flat)
            throw std::invalid_argument("softmax requires flattened input");
    }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx& ctx,
                       const TapeT<S>&) const override {
        TensorT<S> y = x;
        switch (spec.kind) {
            case Act::Elu:
                for (auto& v : y.data) v = v > S(0) ? v : S(std::expm1(double(v)));
                break;
            case Act::Relu:
                for (auto& v : y.data) v = v > S(0) ? v : S(0);
                break;
            case Act::Square:
                for (auto& v : y.data) v = v * v;
                break;
            case Act::Log:
                for (auto& v : y.data) v = S(std::log(std::max(double(v), kLogFloor)));
                break;
            case Act::Softmax:
                y = softmax_rows(x);
                ctx.a = y;
                break;
        }
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>&, std::vector<TensorT<S>*>) const override {
        TensorT<S> dx = gy;
        const TensorT<S>& x = ctx.x;
        switch (spec.kind) {
            case Act::Elu:
                for (size_t i = 0; i < dx.data.size(); ++i)
                    dx.data[i] *= x.data[i] > S(0) ? S(1) : S(std::exp(double(x.data[i])));
                break;
            case Act::Relu:
                for (size_t i = 0; i < dx.data.size(); ++i)
                    if (x.data[i] <= S(0)) dx.data[i] = S(0);
                break;
            case Act::Square:
                for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= S(2) * x.data[i];
                break;
            case Act::Log:
                for (size_t i = 0; i < dx.data.size(); ++i)
                    dx.data[i] = x.data[i] > S(kLogFloor) ? dx.data[i] / x.data[i] : S(0);
                break;
            case Act::Softmax: {
                const TensorT<S>& y = ctx.a;
                const int64_t n = y.shape[0], k = y.shape[1];
                for (int64_t i = 0; i < n; ++i) {
                    S dot = 0;
                    for (int64_t j = 0; j < k; ++j) dot += gy.at2(i, j) * y.at2(i, j);
                    for (int64_t j = 0; j < k; ++j) dx.at2(i, j) = (gy.at2(i, j) - dot) * y.at2(i, j);
                }
                break;
            }
        }
        return dx;
    }
};

template <typename S>
class PoolLayer final : public LayerT<S> {
public:
    PoolSpec spec;
    int64_t c, in_h, in_w, out_h, out_w;
    int sh, sw;

    PoolLayer(const PoolSpec& sp, const Shape3& in) : spec(sp) {
        if (in.flat) throw std::invalid_argument("pool after flatten");
        c = in.c;
        in_h = in.h;
        in_w = in.w;
        sh = spec.sh > 0 ? spec.sh : spec.wh;
        sw = spec.sw > 0 ? spec.sw : spec.ww;
        if (spec.wh < 1 || spec.ww < 1 || spec.wh > in_h || spec.ww > in_w)
            throw std::invalid_argument("pool window exceeds input extent");
        out_h = (in_h - spec.wh) / sh + 1;
        out_w = (in_w - spec.ww) / sw + 1;
    }

    Shape3 out_shape() const { return {c, out_h, out_w, false}; }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx& ctx,
                       const TapeT<S>&) const override {
        const int64_t n = x.shape[0];
        TensorT<S> y({n, c, out_h, out_w});
        const bool is_max = spec.kind == PoolKind::Max;
        if (is_max) ctx.idx.assign(size_t(n * c * out_h * out_w), 0);
        const S inv = S(1.0 / (double(spec.wh) * spec.ww));
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t ch = 0; ch < c; ++ch) {
                const S* xc = x.ptr() + (i * c + ch) * in_h * in_w;
                for (int64_t oh = 0; oh < out_h; ++oh) {
                    for (int64_t ow = 0; ow < out_w; ++ow) {
                        const int64_t h0 = oh * sh, w0 = ow * sw;
                        if (is_max) {
                            int64_t best = h0 * in_w + w0;
                            S bv = xc[best];
                            for (int64_t dh = 0; dh < spec.wh; ++dh)
                                for (int64_t dw = 0; dw < spec.ww; ++dw) {
                                    const int64_t at = (h0 + dh) * in_w + (w0 + dw);
                                    if (xc[at] > bv) {
                                        bv = xc[at];
                                        best = at;
                                    }
                                }
                            y.at4(i, ch, oh, ow) = bv;
                            ctx.idx[size_t(((i * c + ch) * out_h + oh) * out_w + ow)] =
                                static_cast<int32_t>(best);
                        } else {
                            S acc = 0;
                            for (int64_t dh = 0; dh < spec.wh; ++dh)
                                for (int64_t dw = 0; dw < spec.ww; ++dw)
                                    acc += xc[(h0 + dh) * in_w + (w0 + dw)];
                            y.at4(i, ch, oh, ow) = acc * inv;
                        }
                    }
                }
            }
        }
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>&, std::vector<TensorT<S>*>) const override {
        const int64_t n = gy.shape[0];
        TensorT<S> dx({n, c, in_h, in_w});
        const S inv = S(1.0 / (double(spec.wh) * spec.ww));
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t ch = 0; ch < c; ++ch) {
                S* dc = dx.ptr() + (i * c + ch) * in_h * in_w;
                for (int64_t oh = 0; oh < out_h; ++oh) {
                    for (int64_t ow = 0; ow < out_w; ++ow) {
                        const S g = gy.at4(i, ch, oh, ow);
                        if (spec.kind == PoolKind::Max) {
                            dc[ctx.idx[size_t(((i * c + ch) * out_h + oh) * out_w + ow)]] += g;
                        } else {
                            const int64_t h0 = oh * sh, w0 = ow * sw;
                            for (int64_t dh = 0; dh < spec.wh; ++dh)
                                for (int64_t dw = 0; dw < spec.ww; ++dw)
                                    dc[(h0 + dh) * in_w + (w0 + dw)] += g * inv;
                        }
                    }
                }
            }
        }
        return dx;
    }
};

template <typename S>
class BatchNormLayer final : public LayerT<S> {
public:
    BatchNormSpec spec;
    int64_t c, h, w;
    TensorT<S> gamma, beta;
    // Running statistics update in train-mode forward; the share-only-when-
    // frozen contract makes that safe, hence mutable.
    mutable TensorT<S> running_mean, running_var;

    BatchNormLayer(const BatchNormSpec& sp, const Shape3& in) : spec(sp) {
        if (in.flat) throw std::invalid_argument("batchnorm requires 4-d input");
        c = in.c;
        h = in.h;
        w = in.w;
        gamma = TensorT<S>::full({c}, S(1));
        beta = TensorT<S>({c});
        running_mean = TensorT<S>({c});
        running_var = TensorT<S>::full({c}, S(1));
    }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx& ctx,
                       const TapeT<S>& tape) const override {
        const int64_t n = x.shape[0];
        const int64_t hw = h * w;
        const double m = double(n) * hw;
        TensorT<S> y({n, c, h, w});
        ctx.a = TensorT<S>({n, c, h, w});  // xhat
        ctx.b = TensorT<S>({c});           // invstd per channel
        for (int64_t ch = 0; ch < c; ++ch) {
            double mean, var;
            if (tape.train) {
                double s = 0, s2 = 0;
                for (int64_t i = 0; i < n; ++i) {
                    const S* xp = x.ptr() + (i * c + ch) * hw;
                    for (int64_t k = 0; k < hw; ++k) {
                        s += xp[k];
                        s2 += double(xp[k]) * xp[k];
                    }
                }
                mean = s / m;
                var = std::max(0.0, s2 / m - mean * mean);
                running_mean.data[ch] =
                    S(spec.momentum * running_mean.data[ch] + (1 - spec.momentum) * mean);
                running_var.data[ch] =
                    S(spec.momentum * running_var.data[ch] + (1 - spec.momentum) * var);
            } else {
                mean = running_mean.data[ch];
                var = running_var.data[ch];
            }
            const S invstd = S(1.0 / std::sqrt(var + spec.epsilon));
            ctx.b.data[ch] = invstd;
            const S g = gamma.data[ch], b = beta.data[ch], mu = S(mean);
            for (int64_t i = 0; i < n; ++i) {
                const S* xp = x.ptr() + (i * c + ch) * hw;
                S* hp = ctx.a.ptr() + (i * c + ch) * hw;
                S* yp = y.ptr() + (i * c + ch) * hw;
                for (int64_t k = 0; k < hw; ++k) {
                    hp[k] = (xp[k] - mu) * invstd;
                    yp[k] = g * hp[k] + b;
                }
            }
        }
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>& tape, std::vector<TensorT<S>*> pg) const override {
        const int64_t n = gy.shape[0];
        const int64_t hw = h * w;
        const double m = double(n) * hw;
        TensorT<S> dx({n, c, h, w});
        for (int64_t ch = 0; ch < c; ++ch) {
            double dg = 0, db = 0;
            for (int64_t i = 0; i < n; ++i) {
                const S* gp = gy.ptr() + (i * c + ch) * hw;
                const S* hp = ctx.a.ptr() + (i * c + ch) * hw;
                for (int64_t k = 0; k < hw; ++k) {
                    dg += double(gp[k]) * hp[k];
                    db += gp[k];
                }
            }
            pg[0]->data[ch] += S(dg);
            pg[1]->data[ch] += S(db);
            const double gi = double(gamma.data[ch]) * ctx.b.data[ch];
            for (int64_t i = 0; i < n; ++i) {
                const S* gp = gy.ptr() + (i * c + ch) * hw;
                const S* hp = ctx.a.ptr() + (i * c + ch) * hw;
                S* dp = dx.ptr() + (i * c + ch) * hw;
                if (tape.train) {
                    for (int64_t k = 0; k < hw; ++k)
                        dp[k] = S(gi * (double(gp[k]) - db / m - double(hp[k]) * dg / m));
                } else {
                    for (int64_t k = 0; k < hw; ++k) dp[k] = S(gi * gp[k]);
                }
            }
        }
        return dx;
    }

    std::vector<TensorT<S>*> params() override { return {&gamma, &beta}; }
    std::vector<std::string> param_names() const override { return {"gamma", "beta"}; }
    std::vector<TensorT<S>*> buffers() override { return {&running_mean, &running_var}; }
    std::vector<std::string> buffer_names() const override {
        return {"running_mean", "running_var"};
    }
};

template <typename S>
class DropoutLayer final : public LayerT<S> {
public:
    DropoutSpec spec;

    explicit DropoutLayer(const DropoutSpec& sp) : spec(sp) {
        if (spec.rate < 0.0 || spec.rate >= 1.0)
            throw std::invalid_argument("dropout rate must be in [0, 1)");
    }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx& ctx,
                       const TapeT<S>& tape) const override {
        if (!tape.train || spec.rate == 0.0) return x;
        Rng rng(derive_seed(tape.dropout_seed, "dropout" + std::to_string(this->index)));
        const S scale = S(1.0 / (1.0 - spec.rate));
        ctx.a = TensorT<S>(x.shape);
        TensorT<S> y = x;
        for (size_t i = 0; i < y.data.size(); ++i) {
            const S keep = rng.uniform() >= spec.rate ? scale : S(0);
            ctx.a.data[i] = keep;
            y.data[i] *= keep;
        }
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>& tape, std::vector<TensorT<S>*>) const override {
        if (!tape.train || spec.rate == 0.0) return gy;
        TensorT<S> dx = gy;
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= ctx.a.data[i];
        return dx;
    }
};

template <typename S>
class FlattenLayer final : public LayerT<S> {
public:
    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx&,
                       const TapeT<S>&) const override {
        return x.reshaped({x.shape[0], x.numel() / x.shape[0]});
    }
    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>&, std::vector<TensorT<S>*>) const override {
        return gy.reshaped(ctx.x.shape);
    }
};

template <typename S>
class ChannelMapLayer final : public LayerT<S> {
public:
    ChannelMapSpec spec;
    int64_t in_rows, width;
    TensorT<S> weight;  // [out_rows, in_rows], fixed

    ChannelMapLayer(const ChannelMapSpec& sp, const Shape3& in) : spec(sp) {
        if (in.flat || in.c != 1)
            throw std::invalid_argument("channel_map expects a single [1 x C x T] feature map");
        in_rows = in.h;
        width = in.w;
        if (spec.out_channels < 1 || spec.out_channels > in_rows)
            throw std::invalid_argument("channel_map output rows must be in [1, input rows]");
        weight = TensorT<S>({spec.out_channels, in_rows});
        for (int64_t r = 0; r < spec.out_channels; ++r) weight.at2(r, r) = S(1);
    }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx&,
                       const TapeT<S>&) const override {
        const int64_t n = x.shape[0];
        TensorT<S> y({n, 1, spec.out_channels, width});
        CMatMap<S> wm(weight.ptr(), spec.out_channels, in_rows);
        for (int64_t i = 0; i < n; ++i) {
            CMatMap<S> xm(x.ptr() + i * in_rows * width, in_rows, width);
            MatMap<S> ym(y.ptr() + i * spec.out_channels * width, spec.out_channels, width);
            ym.noalias() = wm * xm;
        }
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx&,
                        const TapeT<S>&, std::vector<TensorT<S>*>) const override {
        const int64_t n = gy.shape[0];
        TensorT<S> dx({n, 1, in_rows, width});
        CMatMap<S> wm(weight.ptr(), spec.out_channels, in_rows);
        for (int64_t i = 0; i < n; ++i) {
            CMatMap<S> gm(gy.ptr() + i * spec.out_channels * width, spec.out_channels, width);
            MatMap<S> dm(dx.ptr() + i * in_rows * width, in_rows, width);
            dm.noalias() = wm.transpose() * gm;
        }
        return dx;
    }

    std::vector<TensorT<S>*> buffers() override { return {&weight}; }
    std::vector<std::string> buffer_names() const override { return {"weight"}; }
};

template <typename S>
class StftLayer final : public LayerT<S> {
public:
    StftSpec spec;
    int64_t rows, t_in, n_freq, n_frames;
    std::vector<S> wcos, wsin;  // [n_freq x L] window-folded DFT tables
    static constexpr double kMagEps = 1e-12;

    StftLayer(const StftSpec& sp, const Shape3& in) : spec(sp) {
        if (in.flat || in.c != 1)
            throw std::invalid_argument("stft expects a single [1 x C x T] feature map");
        rows = in.h;
        t_in = in.w;
        if (spec.window_len < 2 || spec.window_len > t_in)
            throw std::invalid_argument("stft window longer than input");
        if (spec.hop < 1) throw std::invalid_argument("stft hop must be >= 1");
        n_freq = spec.window_len / 2 + 1;
        n_frames = (t_in - spec.window_len) / spec.hop + 1;
        const int64_t L = spec.window_len;
        wcos.resize(size_t(n_freq * L));
        wsin.resize(size_t(n_freq * L));
        for (int64_t l = 0; l < L; ++l) {
            const double win = 0.5 * (1.0 - std::cos(2.0 * M_PI * double(l) / double(L)));
            for (int64_t f = 0; f < n_freq; ++f) {
                const double ang = 2.0 * M_PI * double(f) * double(l) / double(L);
                wcos[size_t(f * L + l)] = S(win * std::cos(ang));
                wsin[size_t(f * L + l)] = S(win * std::sin(ang));
            }
        }
    }

    Shape3 out_shape() const { return {rows, n_freq, n_frames, false}; }

    TensorT<S> forward(const TensorT<S>& x, typename TapeT<S>::LayerCtx& ctx,
                       const TapeT<S>&) const override {
        const int64_t n = x.shape[0];
        const int64_t L = spec.window_len;
        TensorT<S> y({n, rows, n_freq, n_frames});
        ctx.a = TensorT<S>({n, rows, n_freq, n_frames});  // re
        ctx.b = TensorT<S>({n, rows, n_freq, n_frames});  // im
        CMatMap<S> cm(wcos.data(), n_freq, L);
        CMatMap<S> sm(wsin.data(), n_freq, L);
        Mat<S> win(L, n_frames), re(n_freq, n_frames), im(n_freq, n_frames);
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t r = 0; r < rows; ++r) {
                const S* xp = x.ptr() + (i * rows + r) * t_in;
                for (int64_t m = 0; m < n_frames; ++m)
                    for (int64_t l = 0; l < L; ++l) win(l, m) = xp[m * spec.hop + l];
                re.noalias() = cm * win;
                im.noalias() = -(sm * win);
                const int64_t base = ((i * rows + r) * n_freq) * n_frames;
                for (int64_t f = 0; f < n_freq; ++f)
                    for (int64_t m = 0; m < n_frames; ++m) {
                        const S rr = re(f, m), ii = im(f, m);
                        ctx.a.data[size_t(base + f * n_frames + m)] = rr;
                        ctx.b.data[size_t(base + f * n_frames + m)] = ii;
                        y.data[size_t(base + f * n_frames + m)] =
                            S(std::sqrt(double(rr) * rr + double(ii) * ii + kMagEps));
                    }
            }
        }
        return y;
    }

    TensorT<S> backward(const TensorT<S>& gy, const typename TapeT<S>::LayerCtx& ctx,
                        const TapeT<S>&, std::vector<TensorT<S>*>) const override {
        const int64_t n = gy.shape[0];
        const int64_t L = spec.window_len;
        TensorT<S> dx({n, 1, rows, t_in});
        CMatMap<S> cm(wcos.data(), n_freq, L);
        CMatMap<S> sm(wsin.data(), n_freq, L);
        Mat<S> gre(n_freq, n_frames), gim(n_freq, n_frames), dwin(L, n_frames);
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t base = ((i * rows + r) * n_freq) * n_frames;
                for (int64_t f = 0; f < n_freq; ++f)
                    for (int64_t m = 0; m < n_frames; ++m) {
                        const size_t at = size_t(base + f * n_frames + m);
                        const S rr = ctx.a.data[at], ii = ctx.b.data[at];
                        const S mag = S(std::sqrt(double(rr) * rr + double(ii) * ii + kMagEps));
                        gre(f, m) = gy.data[at] * rr / mag;
                        gim(f, m) = gy.data[at] * ii / mag;
                    }
                dwin.noalias() = cm.transpose() * gre - sm.transpose() * gim;
                S* dp = dx.ptr() + (i * rows + r) * t_in;
                for (int64_t m = 0; m < n_frames; ++m)
                    for (int64_t l = 0; l < L; ++l) dp[m * spec.hop + l] += dwin(l, m);
            }
        }
        return dx;
    }
};

template <typename S>
std::unique_ptr<LayerT<S>> make_layer(const LayerSpec& spec, Shape3& shape, bool& positive_ok,
                                      uint64_t seed, int index) {
    std::unique_ptr<LayerT<S>> layer;
    if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
        auto l = std::make_unique<Conv2DLayer<S>>(*c, shape, seed);
        shape = l->out_shape();
        layer = std::move(l);
        positive_ok = false;
    } else if (const auto* d = std::get_if<DenseSpec>(&spec)) {
        layer = std::make_unique<DenseLayer<S>>(*d, shape, seed);
        shape = {d->out_features, 1, 1, true};
        positive_ok = false;
    } else if (const auto* a = std::get_if<ActivationSpec>(&spec)) {
        if (a->kind == Act::Log && !positive_ok)
            throw std::invalid_argument(
                "log activation must follow a square (or averaged square) output");
        layer = std::make_unique<ActivationLayer<S>>(*a, shape);
        positive_ok = a->kind == Act::Square;
    } else if (const auto* p = std::get_if<PoolSpec>(&spec)) {
        auto l = std::make_unique<PoolLayer<S>>(*p, shape);
        shape = l->out_shape();
        layer = std::move(l);
        if (p->kind != PoolKind::Avg) positive_ok = false;
    } else if (const auto* b = std::get_if<BatchNormSpec>(&spec)) {
        layer = std::make_unique<BatchNormLayer<S>>(*b, shape);
        positive_ok = false;
    } else if (const auto* dr = std::get_if<DropoutSpec>(&spec)) {
        layer = std::make_unique<DropoutLayer<S>>(*dr);
    } else if (std::get_if<FlattenSpec>(&spec)) {
        if (shape.flat) throw std::invalid_argument("flatten applied twice");
        layer = std::make_unique<FlattenLayer<S>>();
        shape = {shape.features(), 1, 1, true};
    } else if (const auto* cmsp = std::get_if<ChannelMapSpec>(&spec)) {
        layer = std::make_unique<ChannelMapLayer<S>>(*cmsp, shape);
        shape = {1, cmsp->out_channels, shape.w, false};
        positive_ok = false;
    } else if (const auto* st = std::get_if<StftSpec>(&spec)) {
        auto l = std::make_unique<StftLayer<S>>(*st, shape);
        shape = l->out_shape();
        layer = std::move(l);
        positive_ok = false;  // magnitudes are >= 0, not bounded away from it
    } else {
        throw std::invalid_argument("unknown layer spec");
    }
    layer->index = index;
    return layer;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename S>
GraphT<S>::~GraphT() = default;

template <typename S>
GraphT<S>& GraphT<S>::operator=(const GraphT& o) {
    if (this == &o) return *this;
    GraphT fresh = build(o.specs_, o.sig_, 0);
    fresh.mode_ = o.mode_;
    auto dst_p = fresh.parameters();
    auto src_p = o.parameters();
    for (size_t i = 0; i < src_p.size(); ++i) *dst_p[i] = *src_p[i];
    auto dst_b = fresh.buffers();
    auto src_b = o.buffers();
    for (size_t i = 0; i < src_b.size(); ++i) *dst_b[i] = *src_b[i];
    *this = std::move(fresh);
    return *this;
}

template <typename S>
GraphT<S> GraphT<S>::build(const std::vector<LayerSpec>& specs, InputSig sig, uint64_t seed) {
    if (sig.channels < 1 || sig.height < 1 || sig.width < 1)
        throw std::invalid_argument("input signature dimensions must be >= 1");
    GraphT g;
    g.specs_ = specs;
    g.sig_ = sig;
    Shape3 shape{sig.channels, sig.height, sig.width, false};
    bool positive_ok = false;
    for (size_t i = 0; i < specs.size(); ++i) {
        try {
            g.layers_.push_back(make_layer<S>(specs[i], shape, positive_ok,
                                              derive_seed(seed, "layer" + std::to_string(i)),
                                              static_cast<int>(i)));
        } catch (const std::exception& e) {
            throw std::invalid_argument("layer " + std::to_string(i) + " (" +
                                        layer_name(specs[i]) + "): " + e.what());
        }
    }
    return g;
}

template <typename S>
std::vector<int64_t> GraphT<S>::output_shape(int64_t n) const {
    Shape3 shape{sig_.channels, sig_.height, sig_.width, false};
    bool positive_ok = false;
    for (size_t i = 0; i < specs_.size(); ++i) {
        // Rebuild shapes only; cheap relative to holding them.
        auto tmp = make_layer<S>(specs_[i], shape, positive_ok, 0, static_cast<int>(i));
        (void)tmp;
    }
    if (shape.flat) return {n, shape.c};
    return {n, shape.c, shape.h, shape.w};
}

template <typename S>
TensorT<S> GraphT<S>::forward(const TensorT<S>& batch, TapeT<S>& tape) const {
    if (batch.ndim() != 4 || batch.shape[1] != sig_.channels || batch.shape[2] != sig_.height ||
        batch.shape[3] != sig_.width)
        throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape) +
                                    " does not match input signature");
    if (batch.shape[0] < 1) throw std::invalid_argument("forward: empty batch");
    tape.ctx.assign(layers_.size(), {});
    TensorT<S> cur = batch;
    for (size_t i = 0; i < layers_.size(); ++i) {
        tape.ctx[i].x = cur;
        cur = layers_[i]->forward(cur, tape.ctx[i], tape);
        ensure_finite(cur, "forward output of layer " + std::to_string(i) + " (" +
                               layer_name(specs_[i]) + ")");
    }
    tape.output = cur;
    tape.ran_forward = true;
    return cur;
}

template <typename S>
BackpropT<S> GraphT<S>::backward(const TensorT<S>& grad_output, const TapeT<S>& tape) const {
    if (!tape.ran_forward || tape.ctx.size() != layers_.size())
        throw std::runtime_error("backward called before forward");
    if (!grad_output.same_shape(tape.output))
        throw std::invalid_argument("backward: gradient shape does not match forward output");
    BackpropT<S> out;
    out.param_grads = make_gradients();
    // Slice grad slots per layer once.
    std::vector<std::vector<TensorT<S>*>> slots(layers_.size());
    {
        size_t at = 0;
        for (size_t i = 0; i < layers_.size(); ++i) {
            const size_t k = const_cast<LayerT<S>*>(layers_[i].get())->params().size();
            for (size_t j = 0; j < k; ++j) slots[i].push_back(&out.param_grads[at + j]);
            at += k;
        }
    }
    TensorT<S> g = grad_output;
    for (size_t i = layers_.size(); i-- > 0;) {
        g = layers_[i]->backward(g, tape.ctx[i], tape, slots[i]);
        ensure_finite(g, "backward gradient into layer " + std::to_string(i));
    }
    for (const auto& pg : out.param_grads) ensure_finite(pg, "parameter gradient");
    out.input_grad = std::move(g);
    return out;
}

template <typename S>
std::vector<TensorT<S>*> GraphT<S>::parameters() {
    std::vector<TensorT<S>*> out;
    for (auto& l : layers_)
        for (auto* p : l->params()) out.push_back(p);
    return out;
}

template <typename S>
std::vector<const TensorT<S>*> GraphT<S>::parameters() const {
    std::vector<const TensorT<S>*> out;
    for (const auto& l : layers_)
        for (auto* p : const_cast<LayerT<S>*>(l.get())->params()) out.push_back(p);
    return out;
}

template <typename S>
std::vector<TensorT<S>*> GraphT<S>::buffers() {
    std::vector<TensorT<S>*> out;
    for (auto& l : layers_)
        for (auto* b : l->buffers()) out.push_back(b);
    return out;
}

template <typename S>
std::vector<const TensorT<S>*> GraphT<S>::buffers() const {
    std::vector<const TensorT<S>*> out;
    for (const auto& l : layers_)
        for (auto* b : const_cast<LayerT<S>*>(l.get())->buffers()) out.push_back(b);
    return out;
}

template <typename S>
std::vector<std::string> GraphT<S>::tensor_names() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < layers_.size(); ++i)
        for (const auto& n : layers_[i]->param_names())
            out.push_back("layer" + std::to_string(i) + "." + n);
    for (size_t i = 0; i < layers_.size(); ++i)
        for (const auto& n : layers_[i]->buffer_names())
            out.push_back("layer" + std::to_string(i) + "." + n);
    return out;
}

template <typename S>
int GraphT<S>::param_layer(size_t param_index) const {
    size_t at = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const size_t k = const_cast<LayerT<S>*>(layers_[i].get())->params().size();
        if (param_index < at + k) return static_cast<int>(i);
        at += k;
    }
    throw std::out_of_range("parameter index out of range");
}

template <typename S>
std::vector<TensorT<S>> GraphT<S>::make_gradients() const {
    std::vector<TensorT<S>> out;
    for (const auto* p : parameters()) out.emplace_back(p->shape);
    return out;
}

template <typename S>
void GraphT<S>::set_channel_map(size_t layer_index, const TensorT<S>& w) {
    if (layer_index >= layers_.size()) throw std::out_of_range("layer index");
    auto* cm = dynamic_cast<ChannelMapLayer<S>*>(layers_[layer_index].get());
    if (!cm) throw std::invalid_argument("layer is not a channel_map");
    if (!w.same_shape(cm->weight))
        throw std::invalid_argument("channel_map weight shape mismatch: expected " +
                                    shape_str(cm->weight.shape) + " got " + shape_str(w.shape));
    cm->weight = w;
}

template <typename S>
CeResultT<S> softmax_cross_entropy(const TensorT<S>& logits, const std::vector<int32_t>& labels,
                                   const std::vector<double>& class_weights) {
    if (logits.ndim() != 2) throw std::invalid_argument("cross entropy expects [N x K] logits");
    const int64_t n = logits.shape[0], k = logits.shape[1];
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("cross entropy: label count mismatch");
    if (!class_weights.empty() && static_cast<int64_t>(class_weights.size()) != k)
        throw std::invalid_argument("cross entropy: class weight count mismatch");
    CeResultT<S> out;
    out.grad_logits = TensorT<S>({n, k});
    double loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        const int32_t y = labels[i];
        if (y < 0 || y >= k) throw std::invalid_argument("cross entropy: label out of range");
        const double w = class_weights.empty() ? 1.0 : class_weights[size_t(y)];
        double mx = logits.at2(i, 0);
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, double(logits.at2(i, j)));
        double se = 0;
        for (int64_t j = 0; j < k; ++j) se += std::exp(double(logits.at2(i, j)) - mx);
        const double lse = mx + std::log(se);
        loss += w * (lse - double(logits.at2(i, y)));
        for (int64_t j = 0; j < k; ++j) {
            const double p = std::exp(double(logits.at2(i, j)) - lse);
            out.grad_logits.at2(i, j) = S(w / double(n) * (p - (j == y ? 1.0 : 0.0)));
        }
    }
    out.loss = loss / double(n);
    if (!std::isfinite(out.loss)) throw std::runtime_error("non-finite loss");
    return out;
}

template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& logits) {
    if (logits.ndim() != 2) throw std::invalid_argument("softmax expects [N x K]");
    const int64_t n = logits.shape[0], k = logits.shape[1];
    TensorT<S> y({n, k});
    for (int64_t i = 0; i < n; ++i) {
        double mx = logits.at2(i, 0);
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, double(logits.at2(i, j)));
        double se = 0;
        for (int64_t j = 0; j < k; ++j) se += std::exp(double(logits.at2(i, j)) - mx);
        for (int64_t j = 0; j < k; ++j)
            y.at2(i, j) = S(std::exp(double(logits.at2(i, j)) - mx) / se);
    }
    return y;
}

// ---------------------------------------------------------------------------
// LayerSpec <-> JSON

void to_json(json& j, const LayerSpec& spec);
LayerSpec layer_spec_from_json(const json& j);

void to_json(json& j, const LayerSpec& spec) {
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Conv2DSpec>) {
                j = json{{"type", "conv2d"},
                         {"out_channels", s.out_channels},
                         {"kernel", {s.kh, s.kw}},
                         {"stride", {s.sh, s.sw}},
                         {"pad", {s.pad.h0, s.pad.h1, s.pad.w0, s.pad.w1}},
                         {"groups", s.groups}};
            } else if constexpr (std::is_same_v<T, DenseSpec>) {
                j = json{{"type", "dense"}, {"out_features", s.out_features}};
            } else if constexpr (std::is_same_v<T, ActivationSpec>) {
                j = json{{"type", "activation"}, {"kind", act_name(s.kind)}};
            } else if constexpr (std::is_same_v<T, PoolSpec>) {
                j = json{{"type", "pool"},
                         {"kind", s.kind == PoolKind::Max ? "max" : "avg"},
                         {"window", {s.wh, s.ww}},
                         {"stride", {s.sh, s.sw}}};
            } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
                j = json{{"type", "batchnorm"}, {"momentum", s.momentum}, {"epsilon", s.epsilon}};
            } else if constexpr (std::is_same_v<T, DropoutSpec>) {
                j = json{{"type", "dropout"}, {"rate", s.rate}};
            } else if constexpr (std::is_same_v<T, FlattenSpec>) {
                j = json{{"type", "flatten"}};
            } else if constexpr (std::is_same_v<T, ChannelMapSpec>) {
                j = json{{"type", "channel_map"}, {"out_channels", s.out_channels}};
            } else {
                j = json{{"type", "stft"}, {"window_len", s.window_len}, {"hop", s.hop}};
            }
        },
        spec);
}

LayerSpec layer_spec_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv2d") {
        Conv2DSpec s;
        s.out_channels = j.at("out_channels").get<int>();
        s.kh = j.at("kernel")[0].get<int>();
        s.kw = j.at("kernel")[1].get<int>();
        s.sh = j.at("stride")[0].get<int>();
        s.sw = j.at("stride")[1].get<int>();
        s.pad = {j.at("pad")[0].get<int>(), j.at("pad")[1].get<int>(), j.at("pad")[2].get<int>(),
                 j.at("pad")[3].get<int>()};
        s.groups = j.at("groups").get<int>();
        return s;
    }
    if (type == "dense") return DenseSpec{j.at("out_features").get<int>()};
    if (type == "activation") return ActivationSpec{act_from_name(j.at("kind").get<std::string>())};
    if (type == "pool") {
        PoolSpec s;
        s.kind = j.at("kind").get<std::string>() == "max" ? PoolKind::Max : PoolKind::Avg;
        s.wh = j.at("window")[0].get<int>();
        s.ww = j.at("window")[1].get<int>();
        s.sh = j.at("stride")[0].get<int>();
        s.sw = j.at("stride")[1].get<int>();
        return s;
    }
    if (type == "batchnorm")
        return BatchNormSpec{j.at("momentum").get<double>(), j.at("epsilon").get<double>()};
    if (type == "dropout") return DropoutSpec{j.at("rate").get<double>()};
    if (type == "flatten") return FlattenSpec{};
    if (type == "channel_map") return ChannelMapSpec{j.at("out_channels").get<int>()};
    if (type == "stft") return StftSpec{j.at("window_len").get<int>(), j.at("hop").get<int>()};
    throw std::invalid_argument("unknown layer type in manifest: " + type);
}

// ---------------------------------------------------------------------------
// ADWT container

namespace {

void write_u16(std::ostream& os, uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }
void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint16_t read_u16(std::istream& is) {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    return v;
}
uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

constexpr uint16_t kGraphVersion = 1;

}  // namespace

void save_graph(const Graph& g, const std::string& path) {
    json manifest;
    manifest["input"] = {{"channels", g.input_sig().channels},
                         {"height", g.input_sig().height},
                         {"width", g.input_sig().width}};
    manifest["mode"] = g.mode() == Mode::Train ? "train" : "eval";
    json layers = json::array();
    for (const auto& spec : g.specs()) {
        json lj;
        to_json(lj, spec);
        layers.push_back(lj);
    }
    manifest["layers"] = layers;
    std::vector<const Tensor*> tensors;
    for (const auto* p : g.parameters()) tensors.push_back(p);
    for (const auto* b : g.buffers()) tensors.push_back(b);
    const auto names = g.tensor_names();
    json table = json::array();
    for (size_t i = 0; i < tensors.size(); ++i)
        table.push_back({{"name", names[i]}, {"shape", tensors[i]->shape}});
    manifest["tensors"] = table;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("ADWT", 4);
    write_u16(os, kGraphVersion);
    const std::string mtxt = manifest.dump();
    write_u32(os, static_cast<uint32_t>(mtxt.size()));
    os.write(mtxt.data(), std::streamsize(mtxt.size()));
    for (const auto* t : tensors)
        os.write(reinterpret_cast<const char*>(t->ptr()), std::streamsize(t->data.size() * 4));
    if (!os) throw std::runtime_error("write failed: " + path);
}

Graph load_graph(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ADWT", 4) != 0)
        throw std::runtime_error("bad magic in model file: " + path);
    const uint16_t version = read_u16(is);
    if (version != kGraphVersion)
        throw std::runtime_error("unsupported model version " + std::to_string(version));
    const uint32_t mlen = read_u32(is);
    std::string mtxt(mlen, '\0');
    is.read(mtxt.data(), mlen);
    if (!is) throw std::runtime_error("truncated model manifest: " + path);
    const json manifest = json::parse(mtxt);

    std::vector<LayerSpec> specs;
    for (const auto& lj : manifest.at("layers")) specs.push_back(layer_spec_from_json(lj));
    InputSig sig{manifest.at("input").at("channels").get<int>(),
                 manifest.at("input").at("height").get<int>(),
                 manifest.at("input").at("width").get<int>()};
    Graph g = Graph::build(specs, sig, 0);
    g.set_mode(manifest.at("mode").get<std::string>() == "train" ? Mode::Train : Mode::Eval);

    std::vector<Tensor*> tensors;
    for (auto* p : g.parameters()) tensors.push_back(p);
    for (auto* b : g.buffers()) tensors.push_back(b);
    const auto names = g.tensor_names();
    const auto& table = manifest.at("tensors");
    if (table.size() != tensors.size())
        throw std::runtime_error("model tensor table does not match architecture");
    for (size_t i = 0; i < tensors.size(); ++i) {
        if (table[i].at("name").get<std::string>() != names[i] ||
            table[i].at("shape").get<std::vector<int64_t>>() != tensors[i]->shape)
            throw std::runtime_error("model tensor " + names[i] + " mismatch");
        is.read(reinterpret_cast<char*>(tensors[i]->ptr()),
                std::streamsize(tensors[i]->data.size() * 4));
        if (!is) throw std::runtime_error("truncated model payload: " + path);
    }
    return g;
}

template class GraphT<float>;
template class GraphT<double>;
template struct CeResultT<float>;
template struct CeResultT<double>;
template CeResultT<float> softmax_cross_entropy<float>(const TensorT<float>&,
                                                       const std::vector<int32_t>&,
                                                       const std::vector<double>&);
template CeResultT<double> softmax_cross_entropy<double>(const TensorT<double>&,
                                                         const std::vector<int32_t>&,
                                                         const std::vector<double>&);
template TensorT<float> softmax_rows<float>(const TensorT<float>&);
template TensorT<double> softmax_rows<double>(const TensorT<double>&);

}  // namespace advkit::diff
