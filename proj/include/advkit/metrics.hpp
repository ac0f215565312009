#pragma once

#include <optional>
#include <string>
#include <vector>

#include "advkit/epochs.hpp"
#include "advkit/models.hpp"
#include "advkit/signal.hpp"

namespace advkit::metrics {

/// Raw classification accuracy: correct / total.
double rca(const std::vector<int32_t>& predictions, const std::vector<int32_t>& labels);

/// Balanced classification accuracy: unweighted mean of per-class RCAs.
/// With n_classes <= 0 the classes are those present in the labels; with an
/// explicit count, a class without instances is an error.
double bca(const std::vector<int32_t>& predictions, const std::vector<int32_t>& labels,
           int n_classes = -1);

struct MetricReport {
    double rca = 0.0;
    double bca = 0.0;
    std::vector<double> per_class_rca;
    std::vector<std::vector<int64_t>> confusion;  // rows = true class
    std::optional<double> snr_db;

    std::string to_json() const;
};

MetricReport evaluate(const std::vector<int32_t>& predictions, const std::vector<int32_t>& labels,
                      int n_classes);

/// Set-wide power ratio, 10*log10(sum clean^2 / sum (perturbed-clean)^2); a
/// zero perturbation reports +infinity.
double snr_db(const EpochSet& clean, const EpochSet& perturbed);

struct TfrReport {
    signal::TimeFreqMap group1_clean_mean;   // true 0 -> predicted 1
    signal::TimeFreqMap group2_clean_mean;   // true 1 -> predicted 0
    signal::TimeFreqMap perturbation_mean;   // over all misclassified adversarials
    signal::TimeFreqMap group_diff;          // group1 mean - group2 mean
    size_t group1_count = 0;
    size_t group2_count = 0;
    int channel = 0;
};

/// Wavelet characterization of a binary attack: group means of clean epochs
/// split by flip direction, the mean perturbation map, and the group
/// difference, all on one channel.
TfrReport tfr_report(const models::Model& model, const EpochSet& clean, const EpochSet& adversarial,
                     int channel, const std::vector<double>& freqs_hz, double cycles = 7.0);

/// Frequency rows x time columns.
std::string tfr_to_csv(const signal::TimeFreqMap& map, int channel = 0);

std::string tfr_report_json(const TfrReport& report);

}  // namespace advkit::metrics
