#pragma once

#include <string>
#include <vector>

#include "advkit/attack.hpp"
#include "advkit/synth.hpp"
#include "advkit/train.hpp"

namespace advkit::harness {

struct AttackConfig {
    attack::Kind kind = attack::Kind::WhiteBox;
    std::string substitute;  // family name, gray/black box
    double lambda = 0.5;
    int iterations = 2;
};

struct ExperimentConfig {
    std::string dataset_path;  // empty: use synth
    SynthSpec synth;
    bool use_synth = true;
    std::vector<std::string> architectures;
    train::SplitPlan split;
    train::TrainConfig tcfg;
    std::vector<AttackConfig> attacks;
    std::vector<double> epsilons;
    std::string out_dir;
    uint64_t master_seed = 0;

    static ExperimentConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
    void validate() const;
};

struct CellResult {
    std::string arch;
    int fold = 0;
    std::string attack;  // "none" for the baseline row
    double epsilon = 0.0;
    std::string status = "ok";  // or "error: ..."
    double clean_rca = 0, clean_bca = 0;
    double noisy_rca = 0, noisy_bca = 0;
    double adv_rca = 0, adv_bca = 0;
    double snr_db = 0;
    std::string model_dir, adv_path, test_path;
};

struct ReportBundle {
    std::string csv;            // fixed column order, fold-averaged
    std::string manifest_json;  // config echo, seeds, per-fold cells
    std::vector<CellResult> cells;
};

/// Full grid: for each architecture x fold, train a target, then evaluate the
/// noise baseline and every attack x epsilon cell on the test split. Cell
/// failures are recorded without aborting the grid. Artifacts (clean data,
/// per-fold test sets, models, adversarial sets) persist under out_dir.
ReportBundle run_experiment(const ExperimentConfig& cfg);

/// Reload a finished run and recompute every recorded metric from its
/// persisted artifacts; throws if anything drifts beyond 1e-6.
std::string validate_run(const std::string& out_dir);

}  // namespace advkit::harness
