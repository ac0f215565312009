#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace advkit::diff {

/// Dense row-major tensor. 32-bit for training and attacks, 64-bit for
/// gradient verification; both share the same code paths via the template.
template <typename S>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)), data(checked_numel(shape), S(0)) {}

    static TensorT zeros(std::vector<int64_t> s) { return TensorT(std::move(s)); }

    static TensorT full(std::vector<int64_t> s, S value) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    int64_t dim(int i) const {
        if (i < 0 || i >= ndim()) throw std::out_of_range("tensor dim index " + std::to_string(i));
        return shape[i];
    }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    // Unchecked fast-path indexers for the layouts the engine uses.
    S& at2(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
    S at2(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }
    S& at3(int64_t i, int64_t j, int64_t k) { return data[(i * shape[1] + j) * shape[2] + k]; }
    S at3(int64_t i, int64_t j, int64_t k) const { return data[(i * shape[1] + j) * shape[2] + k]; }
    S& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    S at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    /// Same data, new shape; element count must match.
    TensorT reshaped(std::vector<int64_t> s) const {
        if (checked_numel(s) != numel()) throw std::invalid_argument("reshape changes element count");
        TensorT t;
        t.shape = std::move(s);
        t.data = data;
        return t;
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> t;
        t.shape = shape;
        t.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
        return t;
    }

    static int64_t checked_numel(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= d;
        }
        return n;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
bool all_finite(const TensorT<S>& t) {
    for (S v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

template <typename S>
void ensure_finite(const TensorT<S>& t, const std::string& context) {
    if (!all_finite(t)) throw std::runtime_error("non-finite values in " + context);
}

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace advkit::diff
