#include "advkit/synth.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "advkit/seeds.hpp"
#include "advkit/signal.hpp"

namespace advkit::harness {

using json = nlohmann::ordered_json;

void SynthSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("synth needs at least 2 classes");
    if (n < classes) throw std::invalid_argument("synth needs at least one epoch per class");
    if (channels < 1 || samples < 8) throw std::invalid_argument("synth epoch size too small");
    if (!(fs > 0.0)) throw std::invalid_argument("synth fs must be positive");
    if (subjects < 1) throw std::invalid_argument("synth needs at least one subject");
}

namespace {

// Smooth per-class template: Hann-windowed sinusoid burst, class-dependent
// frequency and latency, active on the channels congruent to the class.
double template_value(int cls, int k_classes, int channel, int t, int samples, double fs) {
    if (channel % k_classes != cls % k_classes) return 0.0;
    const double freq = 5.0 + 3.0 * cls;
    const double spread = k_classes > 1 ? double(cls) / double(k_classes - 1) : 0.5;
    const double center = double(samples) * (0.3 + 0.4 * spread);
    const double width = double(samples) * 0.5;
    const double d = (double(t) - center) / (width / 2.0);
    if (std::abs(d) >= 1.0) return 0.0;
    const double window = 0.5 * (1.0 + std::cos(M_PI * d));
    return window * std::sin(2.0 * M_PI * freq * double(t) / fs);
}

}  // namespace

EpochSet synth_dataset(const SynthSpec& spec) {
    spec.validate();
    const int64_t n = spec.n;
    const int c = spec.channels, t = spec.samples, k = spec.classes;

    // Class templates and their whole-epoch power.
    std::vector<double> templates(size_t(k) * c * t);
    std::vector<double> tmpl_power(size_t(k), 0.0);
    for (int cls = 0; cls < k; ++cls) {
        for (int ch = 0; ch < c; ++ch)
            for (int ti = 0; ti < t; ++ti) {
                const double v = template_value(cls, k, ch, ti, t, spec.fs);
                templates[size_t((cls * c + ch) * t + ti)] = v;
                tmpl_power[size_t(cls)] += v * v;
            }
        tmpl_power[size_t(cls)] /= double(c) * t;
    }

    // 1/f amplitude profile normalized to unit total noise variance.
    const int n_harm = t / 2;
    std::vector<double> sigma(size_t(n_harm));
    double total = 0.0;
    for (int h = 1; h <= n_harm; ++h) {
        sigma[size_t(h - 1)] = 1.0 / double(h);
        total += sigma[size_t(h - 1)];
    }
    for (auto& s : sigma) s = std::sqrt(s / total);

    EpochSet set;
    set.fs = float(spec.fs);
    set.data = diff::Tensor({n, c, t});
    set.labels.resize(size_t(n));
    set.subjects.resize(size_t(n));
    for (int cls = 0; cls < k; ++cls) set.class_names.push_back("class" + std::to_string(cls));
    for (int ch = 0; ch < c; ++ch) set.channel_names.push_back("ch" + std::to_string(ch));
    {
        json prov;
        prov["synth"] = {{"classes", k},          {"n", n},
                         {"channels", c},         {"samples", t},
                         {"fs", spec.fs},         {"template_snr_db", spec.template_snr_db},
                         {"subjects", spec.subjects}, {"seed", spec.seed}};
        set.provenance = prov.dump();
    }

    std::vector<double> trace(size_t(t));
    for (int64_t i = 0; i < n; ++i) {
        const int cls = int(i % k);
        const int subject = int((i / k) % spec.subjects);
        // Small deterministic per-subject latency jitter.
        const int shift = int((uint64_t(subject) * 7919u) % 9u) - 4;
        const double gain =
            std::sqrt(std::pow(10.0, spec.template_snr_db / 10.0) / tmpl_power[size_t(cls)]);
        Rng rng(derive_seed(spec.seed, "synth-epoch-" + std::to_string(i)));
        set.labels[size_t(i)] = cls;
        set.subjects[size_t(i)] = subject;
        for (int ch = 0; ch < c; ++ch) {
            // Pink noise via random-phase harmonics plus a white floor.
            std::fill(trace.begin(), trace.end(), 0.0);
            for (int h = 1; h <= n_harm; ++h) {
                const double a = sigma[size_t(h - 1)] * rng.normal();
                const double b = sigma[size_t(h - 1)] * rng.normal();
                const double w = 2.0 * M_PI * double(h) / double(t);
                for (int ti = 0; ti < t; ++ti)
                    trace[size_t(ti)] += a * std::cos(w * ti) + b * std::sin(w * ti);
            }
            for (int ti = 0; ti < t; ++ti) {
                const int src = ti - shift;
                const double tmpl = (src >= 0 && src < t)
                                        ? templates[size_t((cls * c + ch) * t + src)]
                                        : 0.0;
                const double noise = std::sqrt(0.8) * trace[size_t(ti)] +
                                     std::sqrt(0.2) * rng.normal();
                set.data.at3(i, ch, ti) = float(gain * tmpl + noise);
            }
        }
    }
    return signal::normalize(set, signal::NormScheme::zscore());
}

}  // namespace advkit::harness
