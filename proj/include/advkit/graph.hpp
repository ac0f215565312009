#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "advkit/layers.hpp"
#include "advkit/seeds.hpp"
#include "advkit/tensor.hpp"

namespace advkit::diff {

enum class Mode { Train, Eval };

/// Spatial signature of a single example: feature maps x height x width.
/// EEG epochs enter as {1, C, T}; the batch axis is free.
struct InputSig {
    int channels = 1;
    int height = 1;
    int width = 1;
};

/// Per-call activation workspace. A frozen (eval-mode) graph may be shared
/// across workers as long as each owns its tape.
template <typename S>
struct TapeT {
    bool train = false;
    uint64_t dropout_seed = 0;

    struct LayerCtx {
        TensorT<S> x;                 // layer input
        TensorT<S> a;                 // layer-specific cache (masks, xhat, re, im2col, ...)
        TensorT<S> b;                 // second cache slot
        std::vector<int32_t> idx;     // argmax indices for max pooling
    };
    std::vector<LayerCtx> ctx;
    TensorT<S> output;
    bool ran_forward = false;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

/// Result of a reverse pass: gradient with respect to the batch plus one
/// gradient tensor per parameter, in parameters() order.
template <typename S>
struct BackpropT {
    TensorT<S> input_grad;
    std::vector<TensorT<S>> param_grads;
};

template <typename S>
class LayerT;

template <typename S>
class GraphT {
public:
    GraphT() = default;
    GraphT(GraphT&&) noexcept = default;
    GraphT& operator=(GraphT&&) noexcept = default;
    GraphT(const GraphT& o) { *this = o; }
    GraphT& operator=(const GraphT& o);
    ~GraphT();

    /// Validates the whole chain against the input signature and initializes
    /// parameters from the seed. Throws on any shape or placement violation.
    static GraphT build(const std::vector<LayerSpec>& specs, InputSig sig, uint64_t seed);

    TensorT<S> forward(const TensorT<S>& batch, TapeT<S>& tape) const;
    BackpropT<S> backward(const TensorT<S>& grad_output, const TapeT<S>& tape) const;

    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    const std::vector<LayerSpec>& specs() const { return specs_; }
    InputSig input_sig() const { return sig_; }
    std::vector<int64_t> output_shape(int64_t n) const;

    /// Trainable tensors in a stable order (layer-major).
    std::vector<TensorT<S>*> parameters();
    std::vector<const TensorT<S>*> parameters() const;
    /// Non-trainable state (running statistics, fixed projections).
    std::vector<TensorT<S>*> buffers();
    std::vector<const TensorT<S>*> buffers() const;
    std::vector<std::string> tensor_names() const;  // parameters then buffers

    /// Layer index owning parameter slot i of parameters().
    int param_layer(size_t param_index) const;

    std::vector<TensorT<S>> make_gradients() const;

    /// Install a fixed projection into the ChannelMap layer at layer_index.
    void set_channel_map(size_t layer_index, const TensorT<S>& w);

    template <typename U>
    GraphT<U> cast() const {
        GraphT<U> g = GraphT<U>::build(specs_, sig_, 0);
        g.set_mode(mode_);
        auto dst_p = g.parameters();
        auto src_p = parameters();
        for (size_t i = 0; i < src_p.size(); ++i) *dst_p[i] = src_p[i]->template cast<U>();
        auto dst_b = g.buffers();
        auto src_b = buffers();
        for (size_t i = 0; i < src_b.size(); ++i) *dst_b[i] = src_b[i]->template cast<U>();
        return g;
    }

private:
    std::vector<LayerSpec> specs_;
    InputSig sig_;
    Mode mode_ = Mode::Train;
    std::vector<std::unique_ptr<LayerT<S>>> layers_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

/// Weighted softmax cross entropy on logits. Returns the scalar loss and its
/// gradient with respect to the logits; J = mean_i w[y_i] * (-log p_i[y_i]).
template <typename S>
struct CeResultT {
    double loss;
    TensorT<S> grad_logits;
};

template <typename S>
CeResultT<S> softmax_cross_entropy(const TensorT<S>& logits, const std::vector<int32_t>& labels,
                                   const std::vector<double>& class_weights = {});

/// Row-wise softmax of a [N x K] logits tensor.
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& logits);

// --- "ADWT" parameter-store container -------------------------------------
// magic "ADWT", version u16, JSON manifest (layer list, input signature,
// mode, tensor table), then little-endian f32 tensors in manifest order.

void save_graph(const Graph& g, const std::string& path);
Graph load_graph(const std::string& path);

}  // namespace advkit::diff
