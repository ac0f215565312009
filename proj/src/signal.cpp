#define EIGEN_DONT_PARALLELIZE
#include "advkit/signal.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numeric>
#include <stdexcept>

namespace advkit::signal {

namespace {

constexpr int kButterOrder = 4;

using cd = std::complex<double>;

// Pair conjugate roots into quadratic factors (z - r)(z - conj r).
std::vector<std::array<double, 3>> conjugate_quads(std::vector<cd> roots) {
    std::sort(roots.begin(), roots.end(), [](const cd& a, const cd& b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return std::abs(a.imag()) < std::abs(b.imag());
    });
    std::vector<std::array<double, 3>> quads;
    std::vector<bool> used(roots.size(), false);
    for (size_t i = 0; i < roots.size(); ++i) {
        if (used[i]) continue;
        used[i] = true;
        if (std::abs(roots[i].imag()) < 1e-12) {
            // Real root: pair with the next unused real root.
            for (size_t j = i + 1; j < roots.size(); ++j) {
                if (!used[j] && std::abs(roots[j].imag()) < 1e-12) {
                    used[j] = true;
                    quads.push_back({1.0, -(roots[i].real() + roots[j].real()),
                                     roots[i].real() * roots[j].real()});
                    break;
                }
            }
        } else {
            for (size_t j = i + 1; j < roots.size(); ++j) {
                if (!used[j] && std::abs(roots[j] - std::conj(roots[i])) < 1e-9) {
                    used[j] = true;
                    break;
                }
            }
            quads.push_back({1.0, -2.0 * roots[i].real(), std::norm(roots[i])});
        }
    }
    return quads;
}

cd biquad_response(const Biquad& s, const cd& z) {
    const cd zi = 1.0 / z;
    return (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
}

std::vector<cd> butter_prototype_poles() {
    std::vector<cd> poles;
    for (int k = 1; k <= kButterOrder; ++k) {
        const double theta = M_PI * (2.0 * k + kButterOrder - 1.0) / (2.0 * kButterOrder);
        poles.emplace_back(std::cos(theta), std::sin(theta));
    }
    return poles;
}

std::vector<Biquad> assemble_sections(const std::vector<cd>& zpoles, int zeros_at_one,
                                      int zeros_at_minus_one, double norm_f_hz, double fs) {
    auto quads = conjugate_quads(zpoles);
    std::vector<Biquad> sos;
    int z1 = zeros_at_one, zm1 = zeros_at_minus_one;
    for (const auto& q : quads) {
        Biquad s{1.0, 0.0, 0.0, q[1], q[2]};
        // Distribute zeros across sections: one z=1 and/or one z=-1 each.
        double r1 = 0.0, r2 = 0.0;
        if (z1 > 0) {
            r1 = 1.0;
            --z1;
        } else if (zm1 > 0) {
            r1 = -1.0;
            --zm1;
        }
        if (zm1 > 0) {
            r2 = -1.0;
            --zm1;
        } else if (z1 > 0) {
            r2 = 1.0;
            --z1;
        }
        s.b0 = 1.0;
        s.b1 = -(r1 + r2);
        s.b2 = r1 * r2;
        sos.push_back(s);
    }
    // Normalize overall gain to 1 at the reference frequency.
    const cd z = std::polar(1.0, 2.0 * M_PI * norm_f_hz / fs);
    double mag = 1.0;
    for (const auto& s : sos) mag *= std::abs(biquad_response(s, z));
    const double g = std::pow(1.0 / mag, 1.0 / double(sos.size()));
    for (auto& s : sos) {
        s.b0 *= g;
        s.b1 *= g;
        s.b2 *= g;
    }
    return sos;
}

}  // namespace

std::vector<Biquad> design_bandpass(double lo_hz, double hi_hz, double fs) {
    if (!(lo_hz > 0.0) || !(hi_hz > lo_hz) || !(hi_hz < fs / 2.0))
        throw std::invalid_argument("bandpass edges must satisfy 0 < lo < hi < fs/2");
    const double fs2 = 2.0 * fs;
    const double w1 = fs2 * std::tan(M_PI * lo_hz / fs);
    const double w2 = fs2 * std::tan(M_PI * hi_hz / fs);
    const double w0 = std::sqrt(w1 * w2);
    const double bw = w2 - w1;

    std::vector<cd> spoles;
    for (const cd& p : butter_prototype_poles()) {
        const cd bp = 0.5 * bw * p;
        const cd disc = std::sqrt(bp * bp - w0 * w0);
        spoles.push_back(bp + disc);
        spoles.push_back(bp - disc);
    }
    std::vector<cd> zpoles;
    for (const cd& s : spoles) zpoles.push_back((fs2 + s) / (fs2 - s));
    // n zeros at z=1 (from s=0) and n at z=-1 (from infinity).
    const double f_center = fs / M_PI * std::atan(w0 / fs2);
    return assemble_sections(zpoles, kButterOrder, kButterOrder, f_center, fs);
}

std::vector<Biquad> design_lowpass(double cut_hz, double fs) {
    if (!(cut_hz > 0.0) || !(cut_hz < fs / 2.0))
        throw std::invalid_argument("lowpass cutoff must satisfy 0 < cut < fs/2");
    const double fs2 = 2.0 * fs;
    const double wc = fs2 * std::tan(M_PI * cut_hz / fs);
    std::vector<cd> zpoles;
    for (const cd& p : butter_prototype_poles()) {
        const cd s = wc * p;
        zpoles.push_back((fs2 + s) / (fs2 - s));
    }
    return assemble_sections(zpoles, 0, kButterOrder, 0.0, fs);
}

double cascade_magnitude(const std::vector<Biquad>& sos, double f_hz, double fs) {
    const cd z = std::polar(1.0, 2.0 * M_PI * f_hz / fs);
    double mag = 1.0;
    for (const auto& s : sos) mag *= std::abs(biquad_response(s, z));
    return mag;
}

namespace {

// Steady-state DF2T state for unit step input, scaled by the actual level.
std::array<double, 2> section_zi(const Biquad& s) {
    const double yss = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    return {yss - s.b0, s.b2 - s.a2 * yss};
}

void filter_once(const std::vector<Biquad>& sos, std::vector<double>& x) {
    double level = x.empty() ? 0.0 : x.front();
    for (const auto& s : sos) {
        auto zi = section_zi(s);
        double z1 = zi[0] * level, z2 = zi[1] * level;
        for (double& v : x) {
            const double y = s.b0 * v + z1;
            z1 = s.b1 * v - s.a1 * y + z2;
            z2 = s.b2 * v - s.a2 * y;
            v = y;
        }
        level *= (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    }
}

}  // namespace

void filtfilt(const std::vector<Biquad>& sos, std::vector<double>& x) {
    const size_t pad = size_t(3 * kButterOrder);
    if (x.size() < 2) return;
    const size_t p = std::min(pad, x.size() - 1);
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * p);
    for (size_t i = p; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (size_t i = 1; i <= p; ++i) ext.push_back(2.0 * x.back() - x[x.size() - 1 - i]);

    filter_once(sos, ext);
    std::reverse(ext.begin(), ext.end());
    filter_once(sos, ext);
    std::reverse(ext.begin(), ext.end());

    std::copy(ext.begin() + std::ptrdiff_t(p), ext.begin() + std::ptrdiff_t(p + x.size()),
              x.begin());
}

namespace {

EpochSet filter_epochs(const EpochSet& set, const std::vector<Biquad>& sos) {
    EpochSet out = set;
    const int64_t c = set.channels(), t = set.samples();
    std::vector<double> trace(size_t(t));
    for (int64_t i = 0; i < set.n(); ++i) {
        for (int64_t ch = 0; ch < c; ++ch) {
            float* p = out.data.ptr() + (i * c + ch) * t;
            for (int64_t k = 0; k < t; ++k) trace[size_t(k)] = p[k];
            filtfilt(sos, trace);
            for (int64_t k = 0; k < t; ++k) p[k] = float(trace[size_t(k)]);
        }
    }
    return out;
}

}  // namespace

EpochSet bandpass(const EpochSet& set, double lo_hz, double hi_hz) {
    set.validate();
    return filter_epochs(set, design_bandpass(lo_hz, hi_hz, set.fs));
}

EpochSet downsample(const EpochSet& set, int factor) {
    set.validate();
    if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
    if (factor == 1) return set;
    const double new_nyquist = double(set.fs) / (2.0 * factor);
    EpochSet filtered = filter_epochs(set, design_lowpass(0.8 * new_nyquist, set.fs));
    const int64_t c = set.channels(), t = set.samples();
    const int64_t t_out = t / factor;
    EpochSet out;
    out.fs = set.fs / float(factor);
    out.labels = set.labels;
    out.subjects = set.subjects;
    out.class_names = set.class_names;
    out.channel_names = set.channel_names;
    out.provenance = set.provenance;
    out.data = diff::Tensor({set.n(), c, t_out});
    for (int64_t i = 0; i < set.n(); ++i)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t k = 0; k < t_out; ++k)
                out.data.at3(i, ch, k) = filtered.data.at3(i, ch, k * factor);
    return out;
}

EpochSet normalize(const EpochSet& set, const NormScheme& scheme) {
    set.validate();
    if (set.n() == 0) throw std::invalid_argument("normalize: empty epoch set");
    EpochSet out = set;
    const int64_t c = set.channels(), t = set.samples();
    for (int64_t i = 0; i < set.n(); ++i) {
        for (int64_t ch = 0; ch < c; ++ch) {
            float* p = out.data.ptr() + (i * c + ch) * t;
            switch (scheme.kind) {
                case NormScheme::Kind::P300Scale: {
                    double mean = 0;
                    for (int64_t k = 0; k < t; ++k) mean += p[k];
                    mean /= double(t);
                    for (int64_t k = 0; k < t; ++k)
                        p[k] = float(std::clamp((p[k] - mean) / 10.0, -5.0, 5.0));
                    break;
                }
                case NormScheme::Kind::ZScore: {
                    double mean = 0;
                    for (int64_t k = 0; k < t; ++k) mean += p[k];
                    mean /= double(t);
                    double var = 0;
                    for (int64_t k = 0; k < t; ++k) var += (p[k] - mean) * (p[k] - mean);
                    var /= double(t);
                    if (var <= 0.0)
                        throw std::runtime_error("zscore: zero variance in channel " +
                                                 std::to_string(ch) + " of epoch " +
                                                 std::to_string(i));
                    const double inv = 1.0 / std::sqrt(var);
                    for (int64_t k = 0; k < t; ++k) p[k] = float((p[k] - mean) * inv);
                    break;
                }
                case NormScheme::Kind::EmaStandardize: {
                    const double d = scheme.ema.decay;
                    double m = p[0];
                    double v = 1.0;
                    p[0] = float((double(p[0]) - m) / std::sqrt(v + 1e-5));
                    for (int64_t k = 1; k < t; ++k) {
                        const double xk = p[k];
                        m = d * m + (1.0 - d) * xk;
                        v = d * v + (1.0 - d) * (xk - m) * (xk - m);
                        p[k] = float((xk - m) / std::sqrt(v + 1e-5));
                    }
                    break;
                }
            }
        }
    }
    return out;
}

std::vector<int32_t> consecutive_label_groups(const EpochSet& set, int group_size) {
    std::vector<int32_t> ids(size_t(set.n()), -1);
    int32_t next = 0;
    int64_t i = 0;
    while (i + group_size <= set.n()) {
        bool pure = true;
        for (int64_t j = 1; j < group_size; ++j)
            if (set.labels[size_t(i + j)] != set.labels[size_t(i)]) pure = false;
        if (pure) {
            for (int64_t j = 0; j < group_size; ++j) ids[size_t(i + j)] = next;
            ++next;
            i += group_size;
        } else {
            ++i;
        }
    }
    return ids;
}

EpochSet average_epochs(const EpochSet& set, int group_size,
                        const std::vector<int32_t>& group_ids) {
    set.validate();
    if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
    if (group_ids.size() != size_t(set.n()))
        throw std::invalid_argument("group id count must equal epoch count");
    std::map<int32_t, std::vector<int64_t>> groups;
    for (int64_t i = 0; i < set.n(); ++i)
        if (group_ids[size_t(i)] >= 0) groups[group_ids[size_t(i)]].push_back(i);

    const int64_t c = set.channels(), t = set.samples();
    EpochSet out;
    out.fs = set.fs;
    out.class_names = set.class_names;
    out.channel_names = set.channel_names;
    out.provenance = set.provenance;
    out.data = diff::Tensor({int64_t(groups.size()), c, t});
    out.labels.resize(groups.size());
    out.subjects.resize(groups.size());
    int64_t gi = 0;
    for (const auto& [gid, members] : groups) {
        if (int(members.size()) != group_size)
            throw std::invalid_argument("group " + std::to_string(gid) + " has " +
                                        std::to_string(members.size()) + " epochs, expected " +
                                        std::to_string(group_size));
        const int32_t label = set.labels[size_t(members[0])];
        for (int64_t m : members)
            if (set.labels[size_t(m)] != label)
                throw std::invalid_argument("group " + std::to_string(gid) +
                                            " mixes class labels");
        float* dst = out.data.ptr() + gi * c * t;
        for (int64_t k = 0; k < c * t; ++k) {
            double acc = 0;
            for (int64_t m : members) acc += set.data.ptr()[m * c * t + k];
            dst[k] = float(acc / double(group_size));
        }
        out.labels[size_t(gi)] = label;
        out.subjects[size_t(gi)] = set.subjects[size_t(members[0])];
        ++gi;
    }
    return out;
}

namespace {

// Mean per-epoch channel covariance (X X^T / T) over the given epochs.
Eigen::MatrixXd class_covariance(const EpochSet& set, const std::vector<int64_t>& idx) {
    const int64_t c = set.channels(), t = set.samples();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(c, c);
    Eigen::MatrixXd x(c, t);
    for (int64_t i : idx) {
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t k = 0; k < t; ++k) x(ch, k) = set.data.at3(i, ch, k);
        cov += x * x.transpose() / double(t);
    }
    return cov / double(idx.size());
}

}  // namespace

CspProjection csp_fit(const EpochSet& set, int filters_per_class) {
    set.validate();
    if (filters_per_class < 1) throw std::invalid_argument("filters_per_class must be >= 1");
    std::map<int32_t, std::vector<int64_t>> by_class;
    for (int64_t i = 0; i < set.n(); ++i)
        if (set.labels[size_t(i)] >= 0) by_class[set.labels[size_t(i)]].push_back(i);
    if (by_class.size() < 2) throw std::invalid_argument("csp requires at least 2 classes");
    for (const auto& [cls, idx] : by_class)
        if (idx.size() < 2)
            throw std::invalid_argument("csp requires >= 2 epochs per class (class " +
                                        std::to_string(cls) + ")");
    const int64_t c = set.channels();
    const int64_t c_out = int64_t(filters_per_class) * int64_t(by_class.size());
    if (c_out > c)
        throw std::invalid_argument("requested more CSP filters than input channels");

    std::map<int32_t, Eigen::MatrixXd> covs;
    for (const auto& [cls, idx] : by_class) covs[cls] = class_covariance(set, idx);

    CspProjection proj;
    proj.filters_per_class = filters_per_class;
    proj.w = diff::Tensor({c_out, c});
    int64_t row = 0;
    for (const auto& [cls, cov] : covs) {
        proj.classes.push_back(cls);
        Eigen::MatrixXd rest = Eigen::MatrixXd::Zero(c, c);
        int rest_n = 0;
        for (const auto& [other, ocov] : covs) {
            if (other == cls) continue;
            rest += ocov;
            ++rest_n;
        }
        rest /= double(rest_n);
        const double ridge_a = 1e-6 * cov.trace() / double(c);
        const double ridge_b = 1e-6 * rest.trace() / double(c);
        proj.ridge = std::max(proj.ridge, std::max(ridge_a, ridge_b));
        Eigen::MatrixXd a = cov + ridge_a * Eigen::MatrixXd::Identity(c, c);
        Eigen::MatrixXd b = rest + ridge_b * Eigen::MatrixXd::Identity(c, c);
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, b);
        if (solver.info() != Eigen::Success)
            throw std::runtime_error("csp: covariance is singular even after ridge");

        // Top filters, descending variance-ratio eigenvalue; ties broken by
        // dominant channel index.
        struct Filt {
            double lambda;
            Eigen::VectorXd v;
            int64_t dom;
        };
        std::vector<Filt> picks;
        for (int f = 0; f < filters_per_class; ++f) {
            const int64_t at = c - 1 - f;
            Eigen::VectorXd v = solver.eigenvectors().col(at);
            int64_t dom = 0;
            for (int64_t k = 1; k < c; ++k)
                if (std::abs(v(k)) > std::abs(v(dom))) dom = k;
            if (v(dom) < 0) v = -v;
            picks.push_back({solver.eigenvalues()(at), v, dom});
        }
        std::stable_sort(picks.begin(), picks.end(), [](const Filt& x, const Filt& y) {
            if (std::abs(x.lambda - y.lambda) > 1e-6 * std::max({1.0, std::abs(x.lambda)}))
                return x.lambda > y.lambda;
            return x.dom < y.dom;
        });
        for (const auto& f : picks) {
            for (int64_t k = 0; k < c; ++k) proj.w.at2(row, k) = float(f.v(k));
            proj.source_class.push_back(cls);
            ++row;
        }
    }
    return proj;
}

EpochSet csp_apply(const CspProjection& proj, const EpochSet& set) {
    set.validate();
    const int64_t c_in = proj.w.shape[1], c_out = proj.w.shape[0];
    if (set.channels() != c_in)
        throw std::invalid_argument("csp_apply: channel count mismatch: set has " +
                                    std::to_string(set.channels()) + ", projection expects " +
                                    std::to_string(c_in));
    const int64_t t = set.samples();
    EpochSet out;
    out.fs = set.fs;
    out.labels = set.labels;
    out.subjects = set.subjects;
    out.class_names = set.class_names;
    out.provenance = set.provenance;
    out.data = diff::Tensor({set.n(), c_out, t});
    for (int64_t i = 0; i < set.n(); ++i)
        for (int64_t o = 0; o < c_out; ++o)
            for (int64_t k = 0; k < t; ++k) {
                double acc = 0;
                for (int64_t ci = 0; ci < c_in; ++ci)
                    acc += double(proj.w.at2(o, ci)) * set.data.at3(i, ci, k);
                out.data.at3(i, o, k) = float(acc);
            }
    return out;
}

std::vector<TimeFreqMap> stft(const EpochSet& set, int window_len, int hop) {
    set.validate();
    const int64_t t = set.samples();
    if (window_len < 2 || window_len > t)
        throw std::invalid_argument("stft window longer than epoch");
    if (hop < 1) throw std::invalid_argument("stft hop must be >= 1");
    const int64_t f_bins = window_len / 2 + 1;
    const int64_t frames = (t - window_len) / hop + 1;
    const int64_t c = set.channels();

    std::vector<double> wcos(size_t(f_bins * window_len)), wsin(size_t(f_bins * window_len));
    for (int64_t l = 0; l < window_len; ++l) {
        const double win = 0.5 * (1.0 - std::cos(2.0 * M_PI * double(l) / double(window_len)));
        for (int64_t f = 0; f < f_bins; ++f) {
            const double ang = 2.0 * M_PI * double(f) * double(l) / double(window_len);
            wcos[size_t(f * window_len + l)] = win * std::cos(ang);
            wsin[size_t(f * window_len + l)] = win * std::sin(ang);
        }
    }

    std::vector<TimeFreqMap> out;
    out.reserve(size_t(set.n()));
    for (int64_t i = 0; i < set.n(); ++i) {
        TimeFreqMap map;
        map.values = diff::Tensor({c, f_bins, frames});
        for (int64_t f = 0; f < f_bins; ++f)
            map.freqs_hz.push_back(double(f) * set.fs / double(window_len));
        for (int64_t m = 0; m < frames; ++m)
            map.times_s.push_back((double(m) * hop + window_len / 2.0) / set.fs);
        for (int64_t ch = 0; ch < c; ++ch) {
            const float* p = set.data.ptr() + (i * c + ch) * t;
            for (int64_t m = 0; m < frames; ++m)
                for (int64_t f = 0; f < f_bins; ++f) {
                    double re = 0, im = 0;
                    for (int64_t l = 0; l < window_len; ++l) {
                        const double v = p[m * hop + l];
                        re += wcos[size_t(f * window_len + l)] * v;
                        im -= wsin[size_t(f * window_len + l)] * v;
                    }
                    map.values.at3(ch, f, m) = float(std::sqrt(re * re + im * im));
                }
        }
        out.push_back(std::move(map));
    }
    return out;
}

std::vector<TimeFreqMap> morlet_map(const EpochSet& set, const std::vector<double>& freqs_hz,
                                    double cycles) {
    set.validate();
    if (freqs_hz.empty()) throw std::invalid_argument("morlet_map: empty frequency list");
    for (double f : freqs_hz)
        if (!(f > 0.0) || !(f < set.fs / 2.0))
            throw std::invalid_argument("morlet frequency outside (0, fs/2)");
    const int64_t c = set.channels(), t = set.samples();
    const double fs = set.fs;

    // L2-normalized complex Morlet kernels, truncated at 3.5 sigma.
    struct Kernel {
        std::vector<double> re, im;
        int64_t half;
    };
    std::vector<Kernel> kernels;
    for (double f : freqs_hz) {
        const double sigma_t = cycles / (2.0 * M_PI * f);
        const int64_t half = std::max<int64_t>(1, int64_t(std::ceil(3.5 * sigma_t * fs)));
        Kernel k;
        k.half = half;
        double energy = 0;
        for (int64_t l = -half; l <= half; ++l) {
            const double tt = double(l) / fs;
            const double env = std::exp(-tt * tt / (2.0 * sigma_t * sigma_t));
            k.re.push_back(env * std::cos(2.0 * M_PI * f * tt));
            k.im.push_back(env * std::sin(2.0 * M_PI * f * tt));
            energy += env * env;
        }
        const double inv = 1.0 / std::sqrt(energy);
        for (auto& v : k.re) v *= inv;
        for (auto& v : k.im) v *= inv;
        kernels.push_back(std::move(k));
    }

    std::vector<TimeFreqMap> out;
    out.reserve(size_t(set.n()));
    for (int64_t i = 0; i < set.n(); ++i) {
        TimeFreqMap map;
        map.values = diff::Tensor({c, int64_t(freqs_hz.size()), t});
        map.freqs_hz = freqs_hz;
        for (int64_t k = 0; k < t; ++k) map.times_s.push_back(double(k) / fs);
        for (int64_t ch = 0; ch < c; ++ch) {
            const float* p = set.data.ptr() + (i * c + ch) * t;
            for (size_t fi = 0; fi < kernels.size(); ++fi) {
                const Kernel& k = kernels[fi];
                for (int64_t n = 0; n < t; ++n) {
                    double re = 0, im = 0;
                    const int64_t lo = std::max<int64_t>(-k.half, n - (t - 1));
                    const int64_t hi = std::min<int64_t>(k.half, n);
                    for (int64_t l = lo; l <= hi; ++l) {
                        const double v = p[n - l];
                        re += k.re[size_t(l + k.half)] * v;
                        im += k.im[size_t(l + k.half)] * v;
                    }
                    map.values.at3(ch, int64_t(fi), n) = float(std::sqrt(re * re + im * im));
                }
            }
        }
        out.push_back(std::move(map));
    }
    return out;
}

}  // namespace advkit::signal
