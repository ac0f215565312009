#include "advkit/epochs.hpp"

#include <stdexcept>

namespace advkit {

void EpochSet::validate() const {
    if (data.ndim() != 3) throw std::invalid_argument("epoch data must be [N x C x T]");
    const int64_t count = n();
    if (static_cast<int64_t>(labels.size()) != count ||
        static_cast<int64_t>(subjects.size()) != count)
        throw std::invalid_argument("labels/subjects length must equal epoch count");
    if (!(fs > 0.0f)) throw std::invalid_argument("sampling rate must be positive");
    const int k = n_classes();
    for (int32_t l : labels)
        if (l < -1 || (k > 0 && l >= k && !class_names.empty()))
            throw std::invalid_argument("label out of range: " + std::to_string(l));
}

EpochSet EpochSet::subset(const std::vector<int64_t>& indices) const {
    EpochSet out;
    out.fs = fs;
    out.class_names = class_names;
    out.channel_names = channel_names;
    out.provenance = provenance;
    const int64_t c = channels(), t = samples();
    out.data = diff::Tensor({static_cast<int64_t>(indices.size()), c, t});
    out.labels.resize(indices.size());
    out.subjects.resize(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t src = indices[i];
        if (src < 0 || src >= n()) throw std::out_of_range("epoch index out of range");
        std::copy(data.ptr() + src * c * t, data.ptr() + (src + 1) * c * t,
                  out.data.ptr() + int64_t(i) * c * t);
        out.labels[i] = labels[size_t(src)];
        out.subjects[i] = subjects[size_t(src)];
    }
    return out;
}

}  // namespace advkit
