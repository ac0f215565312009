#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "advkit/epochs.hpp"
#include "advkit/tensor.hpp"

namespace advkit::signal {

/// One second-order section (biquad), direct form II transposed, a0 = 1.
struct Biquad {
    double b0, b1, b2, a1, a2;
};

/// Digital Butterworth band-pass, order 4 (8 poles), as cascaded biquads.
std::vector<Biquad> design_bandpass(double lo_hz, double hi_hz, double fs);
/// Digital Butterworth low-pass, order 4.
std::vector<Biquad> design_lowpass(double cut_hz, double fs);

/// |H(e^{j 2 pi f / fs})| of a biquad cascade; the analytic oracle for the
/// filtering tests.
double cascade_magnitude(const std::vector<Biquad>& sos, double f_hz, double fs);

/// Zero-phase forward-backward filtering with odd-reflection padding of
/// 3 x filter order and steady-state section initialization.
void filtfilt(const std::vector<Biquad>& sos, std::vector<double>& x);

/// Zero-phase 4th-order Butterworth band-pass per channel per epoch.
EpochSet bandpass(const EpochSet& set, double lo_hz, double hi_hz);

/// Integer decimation with an internal anti-alias low-pass at 0.8 x the new
/// Nyquist. factor 1 is the identity.
EpochSet downsample(const EpochSet& set, int factor);

struct EmaParams {
    double decay = 0.999;
};

struct NormScheme {
    enum class Kind { P300Scale, ZScore, EmaStandardize };
    Kind kind = Kind::ZScore;
    EmaParams ema;
    static NormScheme p300() { return {Kind::P300Scale, {}}; }
    static NormScheme zscore() { return {Kind::ZScore, {}}; }
    static NormScheme ema_standardize(double decay = 0.999) {
        return {Kind::EmaStandardize, {decay}};
    }
};

EpochSet normalize(const EpochSet& set, const NormScheme& scheme);

/// Element-wise mean of fixed-size groups; group ids are caller-supplied, one
/// per epoch, and each group must be label-pure and exactly group_size large.
EpochSet average_epochs(const EpochSet& set, int group_size,
                        const std::vector<int32_t>& group_ids);

/// Convenience grouping: consecutive runs of group_size epochs of the same
/// class, in index order. Epochs that do not complete a group are dropped.
std::vector<int32_t> consecutive_label_groups(const EpochSet& set, int group_size);

struct CspProjection {
    diff::Tensor w;                    // [C_out x C_in]
    std::vector<int> source_class;     // per output filter
    std::vector<int> classes;          // classes seen in fit order
    int filters_per_class = 0;
    double ridge = 0.0;
};

/// One-vs-rest CSP: per class, generalized eigenvectors of (class covariance,
/// rest covariance + ridge), top filters_per_class per class, concatenated.
CspProjection csp_fit(const EpochSet& set, int filters_per_class);
EpochSet csp_apply(const CspProjection& proj, const EpochSet& set);

struct TimeFreqMap {
    diff::Tensor values;  // [C x F x M], nonnegative magnitudes
    std::vector<double> freqs_hz;
    std::vector<double> times_s;
};

/// Hann-window magnitude spectrogram per channel, one map per epoch.
std::vector<TimeFreqMap> stft(const EpochSet& set, int window_len, int hop);

/// Complex Morlet magnitude per channel and frequency; time axis = samples.
std::vector<TimeFreqMap> morlet_map(const EpochSet& set, const std::vector<double>& freqs_hz,
                                    double cycles = 7.0);

}  // namespace advkit::signal
