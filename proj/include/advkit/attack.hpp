#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advkit/epochs.hpp"
#include "advkit/models.hpp"
#include "advkit/train.hpp"

namespace advkit::attack {

enum class Kind { WhiteBox, GrayBox, BlackBox, RandomNoise };

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& s);

struct AttackSpec {
    Kind kind = Kind::WhiteBox;
    double epsilon = 0.1;
    models::ArchSpec substitute;   // gray/black box
    bool has_substitute = false;
    double lambda = 0.5;           // black box augmentation step
    int iterations = 2;            // black box N
    uint64_t seed = 0;
    size_t query_budget = 0;       // 0: default |S| * 2^N

    void validate() const;
};

struct AttackResult {
    EpochSet adversarial;
    diff::Tensor perturbation;        // exact eps * sign values, [N x C x T]
    std::vector<float> max_deviation; // per epoch
    double clean_rca = 0.0, clean_bca = 0.0;
    double adv_rca = 0.0, adv_bca = 0.0;
    double snr_db = 0.0;
    double substitute_agreement = -1.0;  // fraction agreeing with the target, when applicable
    size_t oracle_queries = 0;
    std::string provenance;  // JSON: kind, epsilon, seeds, loop sizes

    std::string metrics_json() const;
};

/// One-step sign attack at the true labels; exactly one gradient evaluation
/// per epoch and no clipping of the result.
AttackResult fgsm(const models::Model& model, const EpochSet& x, double epsilon);

/// Label-free variant: the true labels are replaced by the model's own
/// predictions. Identical to fgsm wherever the model is correct.
AttackResult ufgsm_whitebox(const models::Model& model, const EpochSet& x, double epsilon);

/// Train a substitute of the given architecture on the target's training
/// data, attack the substitute, evaluate against the target.
AttackResult ufgsm_graybox(const EpochSet& train_data, const models::ArchSpec& substitute_arch,
                           const models::Model& target, const EpochSet& x, double epsilon,
                           const train::TrainConfig& cfg, uint64_t seed);

/// Query-only attack: label a seed set through the target, balance it, then
/// iteratively expand the dataset with lambda-step sign perturbations and
/// retrain the substitute; the final adversarials come from the substitute.
AttackResult ufgsm_blackbox(const models::Model& oracle, const EpochSet& seed_set,
                            const models::ArchSpec& substitute_arch, double lambda, int iterations,
                            double epsilon, const EpochSet& x, const train::TrainConfig& cfg,
                            uint64_t seed, size_t query_budget = 0,
                            const models::Model* eval_model = nullptr);

/// Baseline: each coordinate moves by +-epsilon with the sign of a standard
/// normal draw.
AttackResult random_noise(const models::Model& model, const EpochSet& x, double epsilon,
                          uint64_t seed);

enum class AveragedMode { Pse, Aae, Pae };

std::string averaged_mode_name(AveragedMode m);

/// Synchronized-averaging attacks: perturb each single epoch (Pse), average
/// the per-epoch adversarials (Aae), or perturb the group means directly
/// (Pae). The model is assumed trained on averaged epochs.
AttackResult averaged_attack(const models::Model& model, const EpochSet& singles,
                             const std::vector<int32_t>& group_ids, int group_size,
                             AveragedMode mode, double epsilon);

}  // namespace advkit::attack
