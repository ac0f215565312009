#include "advkit/models.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace advkit::models {

using diff::Act;
using diff::ActivationSpec;
using diff::BatchNormSpec;
using diff::ChannelMapSpec;
using diff::Conv2DSpec;
using diff::DenseSpec;
using diff::DropoutSpec;
using diff::FlattenSpec;
using diff::LayerSpec;
using diff::Padding;
using diff::PoolKind;
using diff::PoolSpec;
using diff::StftSpec;
using json = nlohmann::ordered_json;

namespace {
constexpr int64_t kEvalChunk = 128;
}

std::string family_name(Family f) {
    switch (f) {
        case Family::EegNet: return "eegnet";
        case Family::DeepCnn: return "deepcnn";
        case Family::ShallowCnn: return "shallowcnn";
        case Family::SpectroCnn: return "spectrocnn";
    }
    return "?";
}

Family family_from_name(const std::string& s) {
    if (s == "eegnet") return Family::EegNet;
    if (s == "deepcnn") return Family::DeepCnn;
    if (s == "shallowcnn" || s == "shallow") return Family::ShallowCnn;
    if (s == "spectrocnn" || s == "spectro") return Family::SpectroCnn;
    throw std::invalid_argument("unknown architecture family: " + s);
}

void ArchSpec::validate() const {
    if (channels < 1) throw std::invalid_argument("architecture needs channels >= 1");
    if (samples < 1) throw std::invalid_argument("architecture needs samples >= 1");
    if (classes < 1) throw std::invalid_argument("architecture needs classes >= 1");
    if (!(fs > 0.0)) throw std::invalid_argument("architecture needs fs > 0");
    if (family == Family::SpectroCnn) {
        if (stft_window < 2 || stft_hop < 1)
            throw std::invalid_argument("invalid spectrogram front-end parameters");
        if (csp_filters_per_class < 1 || csp_filters_per_class * classes > channels)
            throw std::invalid_argument("csp filters x classes must fit channel count");
    }
}

namespace {

// Halve until it fits; desk-scale inputs are shorter than the reference
// architectures assume.
int fit_len(int want, int64_t extent) {
    int k = want;
    while (k > extent && k > 1) k /= 2;
    return std::max(1, k);
}

struct StackBuilder {
    std::vector<LayerSpec> specs;
    int64_t h, w;  // spatial extent tracking (feature-map count is implicit)

    void conv_t(int out_ch, int kw, bool same, int groups = 1) {
        const int k = fit_len(kw, same ? int64_t(1) << 30 : w);
        Conv2DSpec c;
        c.out_channels = out_ch;
        c.kh = 1;
        c.kw = k;
        c.groups = groups;
        if (same) c.pad = Padding::same(1, k);
        specs.push_back(c);
        if (!same) w = w - k + 1;
    }
    void conv_spatial(int out_ch, int64_t rows, int groups = 1) {
        Conv2DSpec c;
        c.out_channels = out_ch;
        c.kh = static_cast<int>(rows);
        c.kw = 1;
        c.groups = groups;
        specs.push_back(c);
        h = 1;
    }
    void conv_2d(int out_ch, int kh, int kw) {
        Conv2DSpec c;
        c.out_channels = out_ch;
        c.kh = fit_len(kh, h);
        c.kw = fit_len(kw, w);
        specs.push_back(c);
        h = h - c.kh + 1;
        w = w - c.kw + 1;
    }
    void bn() { specs.push_back(BatchNormSpec{}); }
    void act(Act a) { specs.push_back(ActivationSpec{a}); }
    void pool_w(PoolKind kind, int win, int stride = 0) {
        const int k = fit_len(win, w);
        PoolSpec p;
        p.kind = kind;
        p.wh = 1;
        p.ww = k;
        p.sh = 1;
        p.sw = stride > 0 ? stride : k;
        specs.push_back(p);
        w = (w - k) / p.sw + 1;
    }
    void pool_2d(PoolKind kind, int win) {
        if (h == 1 && w == 1) return;  // nothing left to pool
        PoolSpec p;
        p.kind = kind;
        p.wh = fit_len(win, h);
        p.ww = fit_len(win, w);
        p.sh = p.wh;
        p.sw = p.ww;
        specs.push_back(p);
        h = (h - p.wh) / p.sh + 1;
        w = (w - p.ww) / p.sw + 1;
    }
    void dropout(double rate) { specs.push_back(DropoutSpec{rate}); }
    void head(int k) {
        specs.push_back(FlattenSpec{});
        specs.push_back(DenseSpec{k});
    }
};

std::vector<LayerSpec> eegnet_stack(const ArchSpec& a) {
    StackBuilder b{{}, a.channels, a.samples};
    const int k1 = std::max(1, std::min(int(std::lround(a.fs / 2.0)), a.samples / 2));
    b.conv_t(8, k1, /*same=*/true);
    b.bn();
    b.conv_spatial(16, a.channels, /*groups=*/8);  // depthwise, depth multiplier 2
    b.bn();
    b.act(Act::Elu);
    b.pool_w(PoolKind::Avg, 4);
    b.dropout(0.25);
    b.conv_t(16, fit_len(16, b.w), /*same=*/true, /*groups=*/16);  // separable: depthwise
    b.conv_t(16, 1, /*same=*/false);                               // separable: pointwise
    b.bn();
    b.act(Act::Elu);
    b.pool_w(PoolKind::Avg, 8);
    b.dropout(0.25);
    b.head(a.classes);
    return b.specs;
}

std::vector<LayerSpec> deepcnn_stack(const ArchSpec& a) {
    StackBuilder b{{}, a.channels, a.samples};
    b.conv_t(25, 10, /*same=*/false);
    b.conv_spatial(25, a.channels);
    b.bn();
    b.act(Act::Elu);
    if (b.w >= 3) b.pool_w(PoolKind::Max, 3);
    for (int filters : {50, 100, 200}) {
        b.conv_t(filters, 10, /*same=*/false);
        b.bn();
        b.act(Act::Elu);
        if (b.w >= 3) b.pool_w(PoolKind::Max, 3);  // skip once length is exhausted
    }
    b.head(a.classes);
    return b.specs;
}

std::vector<LayerSpec> shallowcnn_stack(const ArchSpec& a) {
    StackBuilder b{{}, a.channels, a.samples};
    b.conv_t(40, 25, /*same=*/false);
    b.conv_spatial(40, a.channels);
    b.act(Act::Square);
    b.pool_w(PoolKind::Avg, 75, /*stride=*/15);
    b.act(Act::Log);
    b.dropout(0.5);
    b.head(a.classes);
    return b.specs;
}

std::vector<LayerSpec> spectrocnn_stack(const ArchSpec& a, int* channel_map_layer) {
    StackBuilder b{{}, a.channels, a.samples};
    *channel_map_layer = 0;
    const int c_out = a.csp_filters_per_class * a.classes;
    b.specs.push_back(ChannelMapSpec{c_out});
    b.h = c_out;
    const int window = fit_len(a.stft_window, a.samples);
    const int hop = std::max(1, window == a.stft_window ? a.stft_hop : window / 4);
    b.specs.push_back(StftSpec{window, hop});
    b.h = window / 2 + 1;                      // frequency bins
    b.w = (a.samples - window) / hop + 1;      // frames
    b.conv_2d(16, 3, 3);
    b.bn();
    b.act(Act::Elu);
    b.pool_2d(PoolKind::Max, 2);
    b.conv_2d(32, 3, 3);
    b.bn();
    b.act(Act::Elu);
    b.pool_2d(PoolKind::Max, 2);
    b.head(a.classes);
    return b.specs;
}

}  // namespace

Model build_model(const ArchSpec& arch, uint64_t seed) {
    arch.validate();
    Model m;
    m.arch = arch;
    std::vector<LayerSpec> specs;
    switch (arch.family) {
        case Family::EegNet: specs = eegnet_stack(arch); break;
        case Family::DeepCnn: specs = deepcnn_stack(arch); break;
        case Family::ShallowCnn: specs = shallowcnn_stack(arch); break;
        case Family::SpectroCnn: specs = spectrocnn_stack(arch, &m.channel_map_layer); break;
    }
    m.graph = diff::Graph::build(specs, diff::InputSig{1, arch.channels, arch.samples},
                                 derive_seed(seed, "model-" + family_name(arch.family)));
    m.graph.set_mode(diff::Mode::Eval);
    return m;
}

void fit_frontend(Model& model, const EpochSet& train_set) {
    if (model.arch.family != Family::SpectroCnn)
        throw std::invalid_argument("only SpectroCnn models carry a front-end");
    const signal::CspProjection proj = signal::csp_fit(train_set, model.arch.csp_filters_per_class);
    model.graph.set_channel_map(size_t(model.channel_map_layer), proj.w);
    model.frontend_fitted = true;
}

int64_t parameter_count(const Model& model) {
    int64_t n = 0;
    for (const auto* p : model.graph.parameters()) n += p->numel();
    return n;
}

namespace {

diff::Tensor as_batch(const diff::Tensor& x) {
    if (x.ndim() != 3) throw std::invalid_argument("expected [N x C x T] input");
    return x.reshaped({x.shape[0], 1, x.shape[1], x.shape[2]});
}

}  // namespace

Prediction predict(const Model& model, const EpochSet& set) {
    set.validate();
    if (set.channels() != model.arch.channels || set.samples() != model.arch.samples)
        throw std::invalid_argument("predict: epoch shape does not match model input");
    const int64_t n = set.n();
    const int64_t k = model.arch.classes;
    Prediction out;
    out.probs = diff::Tensor({n, k});
    out.labels.resize(size_t(n));
    const diff::Tensor batch = as_batch(set.data);
    const int64_t c = set.channels(), t = set.samples();
    for (int64_t at = 0; at < n; at += kEvalChunk) {
        const int64_t len = std::min(kEvalChunk, n - at);
        diff::Tensor chunk({len, 1, c, t});
        std::copy(batch.ptr() + at * c * t, batch.ptr() + (at + len) * c * t, chunk.ptr());
        diff::Tape tape;  // eval: tape.train stays false
        const diff::Tensor logits = model.graph.forward(chunk, tape);
        const diff::Tensor probs = diff::softmax_rows(logits);
        std::copy(probs.ptr(), probs.ptr() + len * k, out.probs.ptr() + at * k);
    }
    for (int64_t i = 0; i < n; ++i) {
        int32_t best = 0;
        for (int64_t j = 1; j < k; ++j)
            if (out.probs.at2(i, j) > out.probs.at2(i, best)) best = int32_t(j);
        out.labels[size_t(i)] = best;
    }
    return out;
}

LossGrad loss_and_input_gradient(const Model& model, const diff::Tensor& x,
                                 const std::vector<int32_t>& labels,
                                 const std::vector<double>& class_weights) {
    const diff::Tensor batch = as_batch(x);
    const int64_t n = batch.shape[0], c = batch.shape[2], t = batch.shape[3];
    if (labels.size() != size_t(n))
        throw std::invalid_argument("loss_and_input_gradient: label count mismatch");
    LossGrad out;
    out.grad = diff::Tensor(x.shape);
    double loss_sum = 0;
    for (int64_t at = 0; at < n; at += kEvalChunk) {
        const int64_t len = std::min(kEvalChunk, n - at);
        diff::Tensor chunk({len, 1, c, t});
        std::copy(batch.ptr() + at * c * t, batch.ptr() + (at + len) * c * t, chunk.ptr());
        const std::vector<int32_t> y(labels.begin() + at, labels.begin() + at + len);
        diff::Tape tape;
        const diff::Tensor logits = model.graph.forward(chunk, tape);
        const auto ce = diff::softmax_cross_entropy(logits, y, class_weights);
        const auto bp = model.graph.backward(ce.grad_logits, tape);
        // Chunk losses/grads are per-chunk means; reweight to a global mean.
        loss_sum += ce.loss * double(len);
        for (int64_t i = 0; i < len * c * t; ++i)
            out.grad.data[size_t(at * c * t + i)] =
                bp.input_grad.data[size_t(i)] * float(double(len) / double(n));
    }
    out.loss = loss_sum / double(n);
    return out;
}

void save_model(const Model& model, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    diff::save_graph(model.graph, (fs::path(dir) / "model.adwt").string());
    json j;
    j["family"] = family_name(model.arch.family);
    j["channels"] = model.arch.channels;
    j["samples"] = model.arch.samples;
    j["classes"] = model.arch.classes;
    j["fs"] = model.arch.fs;
    j["stft_window"] = model.arch.stft_window;
    j["stft_hop"] = model.arch.stft_hop;
    j["csp_filters_per_class"] = model.arch.csp_filters_per_class;
    j["frontend_fitted"] = model.frontend_fitted;
    j["channel_map_layer"] = model.channel_map_layer;
    std::ofstream os(fs::path(dir) / "arch.json");
    if (!os) throw std::runtime_error("cannot write arch sidecar in " + dir);
    os << j.dump(2) << "\n";
}

Model load_model(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "arch.json");
    if (!is) throw std::runtime_error("missing arch.json in " + dir);
    const json j = json::parse(is);
    Model m;
    m.arch.family = family_from_name(j.at("family").get<std::string>());
    m.arch.channels = j.at("channels").get<int>();
    m.arch.samples = j.at("samples").get<int>();
    m.arch.classes = j.at("classes").get<int>();
    m.arch.fs = j.at("fs").get<double>();
    m.arch.stft_window = j.at("stft_window").get<int>();
    m.arch.stft_hop = j.at("stft_hop").get<int>();
    m.arch.csp_filters_per_class = j.at("csp_filters_per_class").get<int>();
    m.frontend_fitted = j.at("frontend_fitted").get<bool>();
    m.channel_map_layer = j.at("channel_map_layer").get<int>();
    m.graph = diff::load_graph((fs::path(dir) / "model.adwt").string());
    return m;
}

diff::GradCheckReport family_gradcheck(const ArchSpec& arch, uint64_t seed, int batch,
                                       bool check_params) {
    Model m = build_model(arch, seed);
    if (arch.family == Family::SpectroCnn) {
        // Any labeled data yields a valid frozen projection for the check.
        EpochSet fit;
        fit.fs = float(arch.fs);
        const int64_t n = std::max(4, 2 * arch.classes);
        fit.data = diff::Tensor({n, arch.channels, arch.samples});
        Rng rng(derive_seed(seed, "gradcheck-frontend"));
        for (auto& v : fit.data.data) v = float(rng.normal());
        for (int64_t i = 0; i < n; ++i) {
            fit.labels.push_back(int32_t(i % arch.classes));
            fit.subjects.push_back(0);
        }
        fit_frontend(m, fit);
    }
    diff::Graph64 g64 = m.graph.cast<double>();
    g64.set_mode(diff::Mode::Eval);

    diff::Tensor64 x({batch, 1, arch.channels, arch.samples});
    Rng rng(derive_seed(seed, "gradcheck-input"));
    for (auto& v : x.data) v = rng.normal();

    diff::CheckLoss loss;
    loss.kind = diff::CheckLoss::Kind::CrossEntropy;
    for (int i = 0; i < batch; ++i) loss.labels.push_back(int32_t(i % arch.classes));

    diff::GradCheckOptions opt;
    opt.seed = derive_seed(seed, "gradcheck-run");
    opt.check_params = check_params;
    opt.max_param_coords = 300;
    return diff::finite_diff_check(g64, x, loss, opt);
}

}  // namespace advkit::models
