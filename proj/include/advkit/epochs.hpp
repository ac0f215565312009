#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit {

/// A batch of EEG epochs [N x C x T] with labels (-1 = unlabeled), per-epoch
/// subject ids, and sampling metadata.
struct EpochSet {
    diff::Tensor data;  // [N x C x T]
    std::vector<int32_t> labels;
    std::vector<int32_t> subjects;
    float fs = 0.0f;
    std::vector<std::string> class_names;
    std::vector<std::string> channel_names;
    std::string provenance;  // free-form JSON, carried through serialization

    int64_t n() const { return data.ndim() == 3 ? data.shape[0] : 0; }
    int64_t channels() const { return data.ndim() == 3 ? data.shape[1] : 0; }
    int64_t samples() const { return data.ndim() == 3 ? data.shape[2] : 0; }

    int n_classes() const {
        if (!class_names.empty()) return static_cast<int>(class_names.size());
        int32_t mx = -1;
        for (int32_t l : labels) mx = std::max(mx, l);
        return mx + 1;
    }

    void validate() const;

    /// Copy of the epochs at the given indices, metadata preserved.
    EpochSet subset(const std::vector<int64_t>& indices) const;
};

}  // namespace advkit
