#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advkit/epochs.hpp"
#include "advkit/gradcheck.hpp"
#include "advkit/graph.hpp"
#include "advkit/signal.hpp"

namespace advkit::models {

enum class Family { EegNet, DeepCnn, ShallowCnn, SpectroCnn };

std::string family_name(Family f);
Family family_from_name(const std::string& s);

struct ArchSpec {
    Family family = Family::EegNet;
    int channels = 8;
    int samples = 128;
    int classes = 2;
    double fs = 128.0;
    // Spectrogram-pipeline knobs.
    int stft_window = 64;
    int stft_hop = 16;
    int csp_filters_per_class = 2;

    void validate() const;
};

/// A differentiable classifier: architecture + parameter graph. SpectroCnn
/// models carry a frozen spatial-filter front-end inside the graph; gradients
/// flow through it back to the raw time series.
struct Model {
    ArchSpec arch;
    diff::Graph graph;
    bool frontend_fitted = false;
    int channel_map_layer = -1;
};

/// Deterministic construction from the seed; parameters are uniform scaled by
/// fan-in. Kernel and pooling windows halve until they fit short inputs.
Model build_model(const ArchSpec& arch, uint64_t seed);

/// Fit the CSP front-end of a SpectroCnn model on training data and freeze it.
void fit_frontend(Model& model, const EpochSet& train_set);

int64_t parameter_count(const Model& model);

struct Prediction {
    std::vector<int32_t> labels;
    diff::Tensor probs;  // [N x K]
};

/// Eval-mode prediction; ties break toward the smallest class index.
Prediction predict(const Model& model, const EpochSet& set);

struct LossGrad {
    double loss;
    diff::Tensor grad;  // same shape as x
};

/// Weighted cross entropy and its gradient with respect to the raw input.
LossGrad loss_and_input_gradient(const Model& model, const diff::Tensor& x,
                                 const std::vector<int32_t>& labels,
                                 const std::vector<double>& class_weights = {});

void save_model(const Model& model, const std::string& dir);
Model load_model(const std::string& dir);

/// Finite-difference verification of input gradients for one family at the
/// given size, in 64-bit. SpectroCnn gets its front-end fitted on seeded
/// random data first.
diff::GradCheckReport family_gradcheck(const ArchSpec& arch, uint64_t seed, int batch = 1,
                                       bool check_params = false);

}  // namespace advkit::models
