#include "advkit/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace advkit::diff {

namespace {

CheckLoss with_projection(const CheckLoss& loss, const Tensor64& output, uint64_t seed) {
    CheckLoss out = loss;
    if (out.kind == CheckLoss::Kind::WeightedSum && out.projection.empty()) {
        Rng rng(derive_seed(seed, "gradcheck-projection"));
        out.projection.resize(size_t(output.numel()));
        for (auto& v : out.projection) v = rng.uniform(-1.0, 1.0);
    }
    return out;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

}  // namespace

double eval_check_loss(const Tensor64& output, const CheckLoss& loss) {
    if (loss.kind == CheckLoss::Kind::CrossEntropy)
        return softmax_cross_entropy(output, loss.labels, loss.class_weights).loss;
    if (loss.projection.size() != output.data.size())
        throw std::invalid_argument("check loss projection size mismatch");
    double j = 0;
    for (size_t i = 0; i < output.data.size(); ++i) j += loss.projection[i] * output.data[i];
    return j;
}

Tensor64 check_loss_grad(const Tensor64& output, const CheckLoss& loss) {
    if (loss.kind == CheckLoss::Kind::CrossEntropy)
        return softmax_cross_entropy(output, loss.labels, loss.class_weights).grad_logits;
    Tensor64 g(output.shape);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = loss.projection[i];
    return g;
}

GradCheckReport fd_compare(const Graph64& graph, const Tensor64& batch, const CheckLoss& loss0,
                           const Tensor64& input_grad, const std::vector<Tensor64>& param_grads,
                           const GradCheckOptions& opt) {
    Graph64 work = graph;  // params get nudged in place
    Tensor64 x = batch;
    Tape64 tape;
    const Tensor64 out0 = work.forward(x, tape);
    const CheckLoss loss = with_projection(loss0, out0, opt.seed);

    auto loss_at = [&](void) {
        Tape64 t;
        return eval_check_loss(work.forward(x, t), loss);
    };

    GradCheckReport report;
    auto consider = [&](double analytic, double fd, const GradCheckCoord& coord) {
        const double e = rel_err(analytic, fd);
        ++report.coords_checked;
        if (e > report.max_rel_err) {
            report.max_rel_err = e;
            report.worst = coord;
        }
    };

    for (int64_t i = 0; i < x.numel(); ++i) {
        const double keep = x.data[size_t(i)];
        x.data[size_t(i)] = keep + opt.h;
        const double jp = loss_at();
        x.data[size_t(i)] = keep - opt.h;
        const double jm = loss_at();
        x.data[size_t(i)] = keep;
        consider(input_grad.data[size_t(i)], (jp - jm) / (2 * opt.h), {false, -1, 0, i});
    }

    if (opt.check_params) {
        Rng rng(derive_seed(opt.seed, "gradcheck-param-sample"));
        auto params = work.parameters();
        size_t taken = 0;
        for (size_t ti = 0; ti < params.size() && taken < opt.max_param_coords; ++ti) {
            for (int64_t k = 0; k < params[ti]->numel() && taken < opt.max_param_coords; ++k) {
                if (rng.uniform() >= opt.param_sample_frac) continue;
                ++taken;
                double& slot = params[ti]->data[size_t(k)];
                const double keep = slot;
                slot = keep + opt.h;
                const double jp = loss_at();
                slot = keep - opt.h;
                const double jm = loss_at();
                slot = keep;
                consider(param_grads[ti].data[size_t(k)], (jp - jm) / (2 * opt.h),
                         {true, graph.param_layer(ti), ti, k});
            }
        }
    }
    return report;
}

GradCheckReport finite_diff_check(const Graph64& graph, const Tensor64& batch,
                                  const CheckLoss& loss0, const GradCheckOptions& opt) {
    if (graph.mode() != Mode::Eval)
        throw std::invalid_argument("gradient check requires eval mode");
    if (batch.ndim() < 1 || batch.shape[0] == 0)
        throw std::invalid_argument("gradient check: empty batch");
    Tape64 tape;
    const Tensor64 out = graph.forward(batch, tape);
    const CheckLoss loss = with_projection(loss0, out, opt.seed);
    const Tensor64 gout = check_loss_grad(out, loss);
    const BackpropT<double> bp = graph.backward(gout, tape);
    return fd_compare(graph, batch, loss, bp.input_grad, bp.param_grads, opt);
}

}  // namespace advkit::diff
