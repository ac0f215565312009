#include "advkit/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace advkit::metrics {

using json = nlohmann::ordered_json;

double rca(const std::vector<int32_t>& predictions, const std::vector<int32_t>& labels) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw std::invalid_argument("rca: predictions and labels must be nonempty and equal-length");
    int64_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return double(correct) / double(labels.size());
}

double bca(const std::vector<int32_t>& predictions, const std::vector<int32_t>& labels,
           int n_classes) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw std::invalid_argument("bca: predictions and labels must be nonempty and equal-length");
    std::map<int32_t, std::pair<int64_t, int64_t>> per_class;  // class -> {correct, total}
    for (size_t i = 0; i < labels.size(); ++i) {
        auto& [correct, total] = per_class[labels[i]];
        ++total;
        if (predictions[i] == labels[i]) ++correct;
    }
    if (n_classes > 0) {
        for (int c = 0; c < n_classes; ++c)
            if (!per_class.count(c) || per_class[c].second == 0)
                throw std::invalid_argument("bca: class " + std::to_string(c) +
                                            " has zero instances");
    }
    double sum = 0;
    for (const auto& [cls, ct] : per_class) sum += double(ct.first) / double(ct.second);
    return sum / double(per_class.size());
}

MetricReport evaluate(const std::vector<int32_t>& predictions, const std::vector<int32_t>& labels,
                      int n_classes) {
    MetricReport r;
    r.rca = rca(predictions, labels);
    r.bca = bca(predictions, labels, n_classes);
    r.per_class_rca.assign(size_t(n_classes), 0.0);
    r.confusion.assign(size_t(n_classes), std::vector<int64_t>(size_t(n_classes), 0));
    std::vector<int64_t> totals(size_t(n_classes), 0);
    std::vector<int64_t> correct(size_t(n_classes), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        const int32_t y = labels[i], p = predictions[i];
        if (y < 0 || y >= n_classes || p < 0 || p >= n_classes)
            throw std::invalid_argument("evaluate: label outside [0, K)");
        ++r.confusion[size_t(y)][size_t(p)];
        ++totals[size_t(y)];
        if (p == y) ++correct[size_t(y)];
    }
    for (int c = 0; c < n_classes; ++c)
        r.per_class_rca[size_t(c)] = double(correct[size_t(c)]) / double(totals[size_t(c)]);
    return r;
}

std::string MetricReport::to_json() const {
    json j;
    j["rca"] = rca;
    j["bca"] = bca;
    j["per_class_rca"] = per_class_rca;
    j["confusion"] = confusion;
    if (snr_db) {
        if (std::isinf(*snr_db)) j["snr_db"] = "inf";
        else j["snr_db"] = *snr_db;
    }
    return j.dump();
}

double snr_db(const EpochSet& clean, const EpochSet& perturbed) {
    if (clean.data.shape != perturbed.data.shape)
        throw std::invalid_argument("snr_db: shape mismatch");
    double signal = 0, noise = 0;
    for (size_t i = 0; i < clean.data.data.size(); ++i) {
        const double c = clean.data.data[i];
        const double d = double(perturbed.data.data[i]) - c;
        signal += c * c;
        noise += d * d;
    }
    if (noise == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal / noise);
}

namespace {

signal::TimeFreqMap mean_map(const std::vector<signal::TimeFreqMap>& maps,
                             const std::vector<size_t>& members) {
    signal::TimeFreqMap out = maps[members.front()];
    if (members.size() == 1) return out;
    for (size_t mi = 1; mi < members.size(); ++mi) {
        const auto& m = maps[members[mi]];
        for (size_t i = 0; i < out.values.data.size(); ++i) out.values.data[i] += m.values.data[i];
    }
    const float inv = 1.0f / float(members.size());
    for (auto& v : out.values.data) v *= inv;
    return out;
}

EpochSet one_channel(const EpochSet& set, int channel) {
    if (channel < 0 || channel >= set.channels())
        throw std::invalid_argument("tfr_report: channel out of range");
    EpochSet out;
    out.fs = set.fs;
    out.labels = set.labels;
    out.subjects = set.subjects;
    const int64_t t = set.samples();
    out.data = diff::Tensor({set.n(), 1, t});
    for (int64_t i = 0; i < set.n(); ++i)
        std::copy(set.data.ptr() + (i * set.channels() + channel) * t,
                  set.data.ptr() + (i * set.channels() + channel + 1) * t,
                  out.data.ptr() + i * t);
    return out;
}

}  // namespace

TfrReport tfr_report(const models::Model& model, const EpochSet& clean, const EpochSet& adversarial,
                     int channel, const std::vector<double>& freqs_hz, double cycles) {
    if (clean.data.shape != adversarial.data.shape)
        throw std::invalid_argument("tfr_report: clean/adversarial shape mismatch");
    if (model.arch.classes != 2)
        throw std::invalid_argument("tfr_report: binary classification only");
    const auto pred = models::predict(model, adversarial);

    std::vector<size_t> group1, group2;  // indices into the epoch sets
    for (int64_t i = 0; i < clean.n(); ++i) {
        const int32_t y = clean.labels[size_t(i)];
        const int32_t p = pred.labels[size_t(i)];
        if (y == 0 && p == 1) group1.push_back(size_t(i));
        else if (y == 1 && p == 0) group2.push_back(size_t(i));
    }
    if (group1.empty() || group2.empty())
        throw std::runtime_error("tfr_report: no misclassified adversarial examples in group " +
                                 std::string(group1.empty() ? "1" : "2"));

    const EpochSet clean_ch = one_channel(clean, channel);
    EpochSet pert_ch = one_channel(adversarial, channel);
    for (size_t i = 0; i < pert_ch.data.data.size(); ++i)
        pert_ch.data.data[i] -= clean_ch.data.data[i];

    const auto clean_maps = signal::morlet_map(clean_ch, freqs_hz, cycles);
    const auto pert_maps = signal::morlet_map(pert_ch, freqs_hz, cycles);

    TfrReport r;
    r.channel = channel;
    r.group1_count = group1.size();
    r.group2_count = group2.size();
    r.group1_clean_mean = mean_map(clean_maps, group1);
    r.group2_clean_mean = mean_map(clean_maps, group2);
    std::vector<size_t> all = group1;
    all.insert(all.end(), group2.begin(), group2.end());
    r.perturbation_mean = mean_map(pert_maps, all);
    r.group_diff = r.group1_clean_mean;
    for (size_t i = 0; i < r.group_diff.values.data.size(); ++i)
        r.group_diff.values.data[i] -= r.group2_clean_mean.values.data[i];
    return r;
}

std::string tfr_to_csv(const signal::TimeFreqMap& map, int channel) {
    const int64_t f = map.values.shape[1], m = map.values.shape[2];
    std::string out;
    char cell[48];
    for (int64_t fi = 0; fi < f; ++fi) {
        for (int64_t mi = 0; mi < m; ++mi) {
            std::snprintf(cell, sizeof(cell), "%s%.6g", mi ? "," : "",
                          double(map.values.at3(channel, fi, mi)));
            out += cell;
        }
        out += "\n";
    }
    return out;
}

std::string tfr_report_json(const TfrReport& report) {
    json j;
    j["channel"] = report.channel;
    j["group1_count"] = report.group1_count;
    j["group2_count"] = report.group2_count;
    j["freqs_hz"] = report.group1_clean_mean.freqs_hz;
    auto flat = [](const signal::TimeFreqMap& m) {
        return std::vector<float>(m.values.data.begin(), m.values.data.end());
    };
    j["group1_clean_mean"] = flat(report.group1_clean_mean);
    j["group2_clean_mean"] = flat(report.group2_clean_mean);
    j["perturbation_mean"] = flat(report.perturbation_mean);
    j["group_diff"] = flat(report.group_diff);
    return j.dump();
}

}  // namespace advkit::metrics
