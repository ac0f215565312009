#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advkit/epochs.hpp"
#include "advkit/models.hpp"

namespace advkit::train {

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 32;
    int max_epochs = 100;
    int patience = 10;
    uint64_t seed = 0;
    bool class_weighting = true;

    void validate() const;
};

/// Normalized inverse class frequency: w_c = N / (K * n_c).
std::vector<double> class_weights(const std::vector<int32_t>& labels, int n_classes);

struct SplitPlan {
    enum class Kind { WithinSubject, CrossSubjectLoso, MixedSubject, GroupAB };
    Kind kind = Kind::WithinSubject;
    double train_frac = 0.8;  // remainder is the test split
    double val_frac = 0.25;   // carved out of the training portion
    int group_b_subjects = 1;
};

std::string split_kind_name(SplitPlan::Kind k);
SplitPlan::Kind split_kind_from_name(const std::string& s);

struct Split {
    std::vector<int64_t> train, val, test;
    std::vector<int64_t> attacker;  // GroupAB only: group-B epochs
};

/// Seeded, label-stratified index splits. One entry except for
/// leave-one-subject-out, which yields a fold per subject.
std::vector<Split> make_splits(const EpochSet& set, const SplitPlan& plan, uint64_t seed);

/// Early-stopping bookkeeping: stop after `patience` observations without a
/// strict improvement; best_index() is the observation to restore.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    bool observe(double val_loss) {
        ++count_;
        if (val_loss < best_) {
            best_ = val_loss;
            best_index_ = count_ - 1;
            improved_ = true;
            return false;
        }
        improved_ = false;
        return count_ - 1 - best_index_ >= patience_;
    }

    bool improved() const { return improved_; }
    int best_index() const { return best_index_; }
    double best_loss() const { return best_; }

private:
    int patience_;
    int count_ = 0;
    int best_index_ = -1;
    bool improved_ = false;
    double best_ = std::numeric_limits<double>::infinity();
};

/// Adam with bias correction over a graph's parameter list.
class Adam {
public:
    Adam(std::vector<diff::Tensor*> params, const TrainConfig& cfg);
    void step(const std::vector<diff::Tensor>& grads);

private:
    std::vector<diff::Tensor*> params_;
    std::vector<diff::Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

struct EpochStats {
    int epoch;  // 1-based
    double train_loss;
    double val_loss;
    double val_rca;
    double val_bca;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;  // 1-based
    double best_val_loss = 0.0;
    bool stopped_early = false;
};

/// CSV with header epoch,train_loss,val_loss,val_rca,val_bca.
std::string history_csv(const TrainHistory& history);

/// Mini-batch Adam with weighted cross entropy and early stopping on
/// validation loss; restores the best-epoch parameters (and running
/// statistics) before returning.
TrainHistory train_model(models::Model& model, const EpochSet& train_set, const EpochSet& val_set,
                         const TrainConfig& cfg);

}  // namespace advkit::train
