#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit::diff {

/// Zero-padding amounts per edge. same_for(k) rounds the extra sample to the
/// trailing edge for even kernels.
struct Padding {
    int h0 = 0, h1 = 0, w0 = 0, w1 = 0;
    static Padding same(int kh, int kw) {
        return {(kh - 1) / 2, kh / 2, (kw - 1) / 2, kw / 2};
    }
};

struct Conv2DSpec {
    int out_channels = 1;
    int kh = 1, kw = 1;
    int sh = 1, sw = 1;
    Padding pad;
    int groups = 1;
};

struct DenseSpec {
    int out_features = 1;
};

enum class Act { Elu, Relu, Square, Log, Softmax };

struct ActivationSpec {
    Act kind = Act::Relu;
};

enum class PoolKind { Max, Avg };

struct PoolSpec {
    PoolKind kind = PoolKind::Max;
    int wh = 1, ww = 1;
    int sh = 0, sw = 0;  // 0 means stride = window
};

struct BatchNormSpec {
    double momentum = 0.9;
    double epsilon = 1e-5;
};

struct DropoutSpec {
    double rate = 0.5;
};

struct FlattenSpec {};

/// Fixed (non-trainable) linear map across the channel axis; this is how a
/// frozen spatial-filter projection participates in end-to-end gradients.
struct ChannelMapSpec {
    int out_channels = 1;
};

/// Windowed DFT magnitude with Hann window; rows of the input become feature
/// maps of the output, so a spectrogram classifier can follow with Conv2D.
struct StftSpec {
    int window_len = 64;
    int hop = 16;
};

using LayerSpec = std::variant<Conv2DSpec, DenseSpec, ActivationSpec, PoolSpec, BatchNormSpec,
                               DropoutSpec, FlattenSpec, ChannelMapSpec, StftSpec>;

std::string layer_name(const LayerSpec& spec);

std::string act_name(Act a);
Act act_from_name(const std::string& s);

}  // namespace advkit::diff
