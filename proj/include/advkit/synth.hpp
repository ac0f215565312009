#pragma once

#include <cstdint>

#include "advkit/epochs.hpp"

namespace advkit::harness {

/// Desk-scale synthetic EEG: per class, a smooth windowed sinusoid burst with
/// class-dependent frequency, latency, and channel subset, buried in
/// 1/f-shaped noise at the requested SNR, then z-scored per channel.
struct SynthSpec {
    int classes = 2;
    int64_t n = 2000;
    int channels = 8;
    int samples = 128;
    double fs = 128.0;
    double template_snr_db = 0.0;
    int subjects = 8;
    uint64_t seed = 0;

    void validate() const;
};

EpochSet synth_dataset(const SynthSpec& spec);

}  // namespace advkit::harness
