#include "advkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include "advkit/metrics.hpp"

namespace advkit::train {

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !(beta1 > 0) || !(beta2 > 0) || !(adam_eps > 0))
        throw std::invalid_argument("train config values must be positive");
    if (batch_size < 1 || max_epochs < 1 || patience < 1)
        throw std::invalid_argument("train config values must be positive");
    if (patience >= max_epochs)
        throw std::invalid_argument("patience must be smaller than max epochs");
}

std::vector<double> class_weights(const std::vector<int32_t>& labels, int n_classes) {
    if (labels.empty()) throw std::invalid_argument("class_weights: empty labels");
    if (n_classes < 1) throw std::invalid_argument("class_weights: need n_classes >= 1");
    std::vector<int64_t> counts(size_t(n_classes), 0);
    for (int32_t l : labels) {
        if (l < 0 || l >= n_classes)
            throw std::invalid_argument("class_weights: label out of range");
        ++counts[size_t(l)];
    }
    std::vector<double> w(size_t(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        if (counts[size_t(c)] == 0)
            throw std::invalid_argument("class_weights: class " + std::to_string(c) +
                                        " has no examples");
        w[size_t(c)] = double(labels.size()) / (double(n_classes) * double(counts[size_t(c)]));
    }
    return w;
}

std::string split_kind_name(SplitPlan::Kind k) {
    switch (k) {
        case SplitPlan::Kind::WithinSubject: return "within";
        case SplitPlan::Kind::CrossSubjectLoso: return "loso";
        case SplitPlan::Kind::MixedSubject: return "mixed";
        case SplitPlan::Kind::GroupAB: return "groupab";
    }
    return "?";
}

SplitPlan::Kind split_kind_from_name(const std::string& s) {
    if (s == "within") return SplitPlan::Kind::WithinSubject;
    if (s == "loso") return SplitPlan::Kind::CrossSubjectLoso;
    if (s == "mixed") return SplitPlan::Kind::MixedSubject;
    if (s == "groupab") return SplitPlan::Kind::GroupAB;
    throw std::invalid_argument("unknown split kind: " + s);
}

namespace {

// Stratified three-way split of the given indices: test gets 1 - train_frac,
// validation gets val_frac of the training portion, bucketed by label.
void stratified_split(const EpochSet& set, const std::vector<int64_t>& pool, double train_frac,
                      double val_frac, Rng& rng, Split& out) {
    std::map<int32_t, std::vector<int64_t>> buckets;
    for (int64_t i : pool) buckets[set.labels[size_t(i)]].push_back(i);
    for (auto& [label, idx] : buckets) {
        rng.shuffle(idx);
        const int64_t n = int64_t(idx.size());
        const int64_t n_test = int64_t(std::floor(double(n) * (1.0 - train_frac)));
        const int64_t n_train0 = n - n_test;
        const int64_t n_val = int64_t(std::floor(double(n_train0) * val_frac));
        for (int64_t i = 0; i < n; ++i) {
            if (i < n_test) out.test.push_back(idx[size_t(i)]);
            else if (i < n_test + n_val) out.val.push_back(idx[size_t(i)]);
            else out.train.push_back(idx[size_t(i)]);
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
}

std::vector<int32_t> unique_subjects(const EpochSet& set) {
    std::set<int32_t> s(set.subjects.begin(), set.subjects.end());
    return {s.begin(), s.end()};
}

}  // namespace

std::vector<Split> make_splits(const EpochSet& set, const SplitPlan& plan, uint64_t seed) {
    set.validate();
    if (!(plan.train_frac > 0.0 && plan.train_frac < 1.0) ||
        !(plan.val_frac > 0.0 && plan.val_frac < 1.0))
        throw std::invalid_argument("split fractions must lie in (0, 1)");
    const auto subjects = unique_subjects(set);

    std::vector<Split> folds;
    switch (plan.kind) {
        case SplitPlan::Kind::WithinSubject: {
            Split split;
            for (int32_t s : subjects) {
                std::vector<int64_t> pool;
                for (int64_t i = 0; i < set.n(); ++i)
                    if (set.subjects[size_t(i)] == s) pool.push_back(i);
                Rng rng(derive_seed(seed, "within-subject-" + std::to_string(s)));
                stratified_split(set, pool, plan.train_frac, plan.val_frac, rng, split);
            }
            std::sort(split.train.begin(), split.train.end());
            std::sort(split.val.begin(), split.val.end());
            std::sort(split.test.begin(), split.test.end());
            folds.push_back(std::move(split));
            break;
        }
        case SplitPlan::Kind::MixedSubject: {
            Split split;
            std::vector<int64_t> pool(size_t(set.n()));
            std::iota(pool.begin(), pool.end(), 0);
            Rng rng(derive_seed(seed, "mixed-subject"));
            stratified_split(set, pool, plan.train_frac, plan.val_frac, rng, split);
            folds.push_back(std::move(split));
            break;
        }
        case SplitPlan::Kind::CrossSubjectLoso: {
            if (subjects.size() < 2)
                throw std::invalid_argument("leave-one-subject-out needs >= 2 subjects");
            for (int32_t held : subjects) {
                Split split;
                std::vector<int64_t> pool;
                for (int64_t i = 0; i < set.n(); ++i) {
                    if (set.subjects[size_t(i)] == held) split.test.push_back(i);
                    else pool.push_back(i);
                }
                // Mixed pool, 75/25 train/validation.
                std::map<int32_t, std::vector<int64_t>> buckets;
                for (int64_t i : pool) buckets[set.labels[size_t(i)]].push_back(i);
                Rng rng(derive_seed(seed, "loso-" + std::to_string(held)));
                for (auto& [label, idx] : buckets) {
                    rng.shuffle(idx);
                    const int64_t n_val = int64_t(std::floor(double(idx.size()) * plan.val_frac));
                    for (size_t i = 0; i < idx.size(); ++i)
                        (int64_t(i) < n_val ? split.val : split.train).push_back(idx[i]);
                }
                std::sort(split.train.begin(), split.train.end());
                std::sort(split.val.begin(), split.val.end());
                folds.push_back(std::move(split));
            }
            break;
        }
        case SplitPlan::Kind::GroupAB: {
            if (plan.group_b_subjects < 1 ||
                plan.group_b_subjects >= static_cast<int>(subjects.size()))
                throw std::invalid_argument("group B must leave at least one subject in group A");
            std::vector<int32_t> order = subjects;
            Rng rng(derive_seed(seed, "groupab-subjects"));
            rng.shuffle(order);
            std::set<int32_t> group_b(order.end() - plan.group_b_subjects, order.end());
            Split split;
            std::vector<int64_t> pool_a;
            for (int64_t i = 0; i < set.n(); ++i) {
                if (group_b.count(set.subjects[size_t(i)])) split.attacker.push_back(i);
                else pool_a.push_back(i);
            }
            Rng rng_a(derive_seed(seed, "groupab-split"));
            stratified_split(set, pool_a, plan.train_frac, plan.val_frac, rng_a, split);
            folds.push_back(std::move(split));
            break;
        }
    }
    for (const auto& f : folds)
        if (f.train.empty() || f.val.empty() || f.test.empty())
            throw std::invalid_argument("not enough epochs for the requested split");
    return folds;
}

Adam::Adam(std::vector<diff::Tensor*> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.learning_rate),
      b1_(cfg.beta1),
      b2_(cfg.beta2),
      eps_(cfg.adam_eps) {
    for (auto* p : params_) {
        m_.emplace_back(p->shape);
        v_.emplace_back(p->shape);
    }
}

void Adam::step(const std::vector<diff::Tensor>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("adam: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, double(t_));
    const double bc2 = 1.0 - std::pow(b2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        float* p = params_[i]->ptr();
        float* m = m_[i].ptr();
        float* v = v_[i].ptr();
        const float* g = grads[i].ptr();
        const int64_t n = params_[i]->numel();
        for (int64_t k = 0; k < n; ++k) {
            m[k] = float(b1_ * m[k] + (1.0 - b1_) * g[k]);
            v[k] = float(b2_ * v[k] + (1.0 - b2_) * double(g[k]) * g[k]);
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= float(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,train_loss,val_loss,val_rca,val_bca\n";
    char line[160];
    for (const auto& e : history.epochs) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_rca, e.val_bca);
        out += line;
    }
    return out;
}

namespace {

diff::Tensor gather_batch(const EpochSet& set, const std::vector<int64_t>& order, int64_t at,
                          int64_t len, std::vector<int32_t>& labels_out) {
    const int64_t c = set.channels(), t = set.samples();
    diff::Tensor x({len, 1, c, t});
    labels_out.resize(size_t(len));
    for (int64_t i = 0; i < len; ++i) {
        const int64_t src = order[size_t(at + i)];
        std::copy(set.data.ptr() + src * c * t, set.data.ptr() + (src + 1) * c * t,
                  x.ptr() + i * c * t);
        labels_out[size_t(i)] = set.labels[size_t(src)];
    }
    return x;
}

struct Snapshot {
    std::vector<diff::Tensor> params, buffers;
};

Snapshot take_snapshot(const diff::Graph& g) {
    Snapshot s;
    for (const auto* p : g.parameters()) s.params.push_back(*p);
    for (const auto* b : g.buffers()) s.buffers.push_back(*b);
    return s;
}

void restore_snapshot(diff::Graph& g, const Snapshot& s) {
    auto params = g.parameters();
    for (size_t i = 0; i < params.size(); ++i) *params[i] = s.params[i];
    auto buffers = g.buffers();
    for (size_t i = 0; i < buffers.size(); ++i) *buffers[i] = s.buffers[i];
}

}  // namespace

TrainHistory train_model(models::Model& model, const EpochSet& train_set, const EpochSet& val_set,
                         const TrainConfig& cfg) {
    cfg.validate();
    train_set.validate();
    val_set.validate();
    const int k = model.arch.classes;
    for (int32_t l : train_set.labels)
        if (l < 0 || l >= k) throw std::invalid_argument("training label outside model classes");
    if (model.arch.family == models::Family::SpectroCnn && !model.frontend_fitted)
        fit_frontend(model, train_set);

    const std::vector<double> weights =
        cfg.class_weighting ? class_weights(train_set.labels, k) : std::vector<double>{};

    model.graph.set_mode(diff::Mode::Train);
    Adam adam(model.graph.parameters(), cfg);
    EarlyStopper stopper(cfg.patience);
    TrainHistory history;
    Snapshot best = take_snapshot(model.graph);

    const int64_t n = train_set.n();
    std::vector<int64_t> order(size_t(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "epoch-shuffle-" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);
        double loss_sum = 0;
        try {
            int batch_index = 0;
            for (int64_t at = 0; at < n; at += cfg.batch_size, ++batch_index) {
                const int64_t len = std::min<int64_t>(cfg.batch_size, n - at);
                std::vector<int32_t> labels;
                const diff::Tensor x = gather_batch(train_set, order, at, len, labels);
                diff::Tape tape;
                tape.train = true;
                tape.dropout_seed = derive_seed(
                    cfg.seed, "dropout-" + std::to_string(epoch) + "-" + std::to_string(batch_index));
                const diff::Tensor logits = model.graph.forward(x, tape);
                const auto ce = diff::softmax_cross_entropy(logits, labels, weights);
                const auto bp = model.graph.backward(ce.grad_logits, tape);
                adam.step(bp.param_grads);
                loss_sum += ce.loss * double(len);
            }
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " +
                                     e.what());
        }

        // Validation pass in eval mode.
        const auto pred = models::predict(model, val_set);
        double val_loss = 0;
        {
            const int64_t vn = val_set.n();
            const int64_t c = val_set.channels(), t = val_set.samples();
            for (int64_t at = 0; at < vn; at += 256) {
                const int64_t len = std::min<int64_t>(256, vn - at);
                diff::Tensor x({len, 1, c, t});
                std::copy(val_set.data.ptr() + at * c * t, val_set.data.ptr() + (at + len) * c * t,
                          x.ptr());
                std::vector<int32_t> labels(val_set.labels.begin() + at,
                                            val_set.labels.begin() + at + len);
                diff::Tape tape;
                const diff::Tensor logits = model.graph.forward(x, tape);
                val_loss += diff::softmax_cross_entropy(logits, labels, weights).loss * double(len);
            }
            val_loss /= double(vn);
        }
        const double val_rca = metrics::rca(pred.labels, val_set.labels);
        const double val_bca = metrics::bca(pred.labels, val_set.labels);
        history.epochs.push_back({epoch, loss_sum / double(n), val_loss, val_rca, val_bca});

        const bool stop = stopper.observe(val_loss);
        if (stopper.improved()) best = take_snapshot(model.graph);
        if (stop) {
            history.stopped_early = true;
            break;
        }
    }

    restore_snapshot(model.graph, best);
    model.graph.set_mode(diff::Mode::Eval);
    history.best_epoch = stopper.best_index() + 1;
    history.best_val_loss = stopper.best_loss();
    return history;
}

}  // namespace advkit::train
