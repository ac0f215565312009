#pragma once

#include <cstdint>
#include <vector>

#include "advkit/graph.hpp"

namespace advkit::diff {

/// Loss used by the finite-difference harness. WeightedSum dots the flattened
/// output with a fixed projection (generated from the seed when empty);
/// CrossEntropy uses the training loss at the given labels.
struct CheckLoss {
    enum class Kind { WeightedSum, CrossEntropy };
    Kind kind = Kind::WeightedSum;
    std::vector<double> projection;
    std::vector<int32_t> labels;
    std::vector<double> class_weights;
};

struct GradCheckOptions {
    double h = 1e-4;
    double param_sample_frac = 0.05;
    size_t max_param_coords = 20000;
    bool check_params = true;
    uint64_t seed = 0;
};

struct GradCheckCoord {
    bool is_param = false;
    int layer = -1;           // owning layer for parameter coordinates
    size_t tensor_index = 0;  // index into parameters() for parameter coordinates
    int64_t flat_index = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    GradCheckCoord worst;
    size_t coords_checked = 0;
};

double eval_check_loss(const Tensor64& output, const CheckLoss& loss);
Tensor64 check_loss_grad(const Tensor64& output, const CheckLoss& loss);

/// Central finite differences in 64-bit against reverse-mode gradients.
/// Covers every input coordinate and a seeded sample of parameter
/// coordinates. Requires eval mode.
GradCheckReport finite_diff_check(const Graph64& graph, const Tensor64& batch,
                                  const CheckLoss& loss, const GradCheckOptions& opt = {});

/// Comparison half of finite_diff_check, exposed so tests can feed it
/// deliberately corrupted gradients.
GradCheckReport fd_compare(const Graph64& graph, const Tensor64& batch, const CheckLoss& loss,
                           const Tensor64& input_grad, const std::vector<Tensor64>& param_grads,
                           const GradCheckOptions& opt = {});

}  // namespace advkit::diff
