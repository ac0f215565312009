#pragma once

#include <string>

#include "advkit/epochs.hpp"

namespace advkit::harness {

/// "EEGB" epoch container: magic, version u16 = 1, header_len u32, JSON
/// header {fs, n_epochs, n_channels, n_samples, class_names, channel_names,
/// provenance}, then little-endian f32 epochs [N x C x T] row-major, i16
/// labels, u16 subject ids. Parse-then-serialize is byte-identical.
void write_container(const EpochSet& set, const std::string& path);
EpochSet read_container(const std::string& path);

}  // namespace advkit::harness
