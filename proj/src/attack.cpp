#include "advkit/attack.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "advkit/metrics.hpp"
#include "advkit/signal.hpp"

namespace advkit::attack {

using json = nlohmann::ordered_json;

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::WhiteBox: return "white";
        case Kind::GrayBox: return "gray";
        case Kind::BlackBox: return "black";
        case Kind::RandomNoise: return "noise";
    }
    return "?";
}

Kind kind_from_name(const std::string& s) {
    if (s == "white" || s == "whitebox" || s == "ufgsm") return Kind::WhiteBox;
    if (s == "gray" || s == "graybox") return Kind::GrayBox;
    if (s == "black" || s == "blackbox") return Kind::BlackBox;
    if (s == "noise" || s == "random") return Kind::RandomNoise;
    throw std::invalid_argument("unknown attack kind: " + s);
}

void AttackSpec::validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("attack epsilon must be >= 0");
    if (lambda <= 0.0) throw std::invalid_argument("attack lambda must be > 0");
    if (iterations < 0) throw std::invalid_argument("attack iterations must be >= 0");
    if ((kind == Kind::GrayBox || kind == Kind::BlackBox) && !has_substitute)
        throw std::invalid_argument(kind_name(kind) + " attack needs a substitute architecture");
}

std::string AttackResult::metrics_json() const {
    json j;
    j["clean_rca"] = clean_rca;
    j["clean_bca"] = clean_bca;
    j["adv_rca"] = adv_rca;
    j["adv_bca"] = adv_bca;
    if (std::isinf(snr_db)) j["snr_db"] = "inf";
    else j["snr_db"] = snr_db;
    if (substitute_agreement >= 0.0) j["substitute_agreement"] = substitute_agreement;
    if (oracle_queries > 0) j["oracle_queries"] = oracle_queries;
    if (!provenance.empty()) j["provenance"] = json::parse(provenance);
    return j.dump();
}

namespace {

template <typename S>
inline S sgn(S v) {
    return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
}

bool fully_labeled(const EpochSet& set, int k) {
    for (int32_t l : set.labels)
        if (l < 0 || l >= k) return false;
    return !set.labels.empty();
}

// x~ = x + eps * sign(grad); perturbation entries are exactly 0 or +-eps.
void apply_sign_step(EpochSet& out, diff::Tensor& perturbation, const EpochSet& x,
                     const diff::Tensor& grad, double epsilon) {
    const float eps = float(epsilon);
    perturbation = diff::Tensor(x.data.shape);
    for (size_t i = 0; i < x.data.data.size(); ++i) {
        const float eta = eps * sgn(grad.data[i]);
        perturbation.data[i] = eta;
        out.data.data[i] = x.data.data[i] + eta;
    }
}

void fill_metrics(AttackResult& r, const models::Model& eval_model, const EpochSet& clean) {
    const int k = eval_model.arch.classes;
    r.max_deviation.assign(size_t(clean.n()), 0.0f);
    const int64_t per = clean.channels() * clean.samples();
    for (int64_t i = 0; i < clean.n(); ++i) {
        float mx = 0.0f;
        for (int64_t j = 0; j < per; ++j)
            mx = std::max(mx, std::abs(r.adversarial.data.data[size_t(i * per + j)] -
                                       clean.data.data[size_t(i * per + j)]));
        r.max_deviation[size_t(i)] = mx;
    }
    r.snr_db = metrics::snr_db(clean, r.adversarial);
    if (fully_labeled(clean, k)) {
        const auto clean_pred = models::predict(eval_model, clean);
        const auto adv_pred = models::predict(eval_model, r.adversarial);
        r.clean_rca = metrics::rca(clean_pred.labels, clean.labels);
        r.clean_bca = metrics::bca(clean_pred.labels, clean.labels);
        r.adv_rca = metrics::rca(adv_pred.labels, clean.labels);
        r.adv_bca = metrics::bca(adv_pred.labels, clean.labels);
    } else {
        r.clean_rca = r.clean_bca = r.adv_rca = r.adv_bca =
            std::numeric_limits<double>::quiet_NaN();
    }
}

// Shared FGSM/UFGSM core: one gradient evaluation at the given labels.
AttackResult sign_attack(const models::Model& grad_model, const models::Model& eval_model,
                         const EpochSet& x, const std::vector<int32_t>& labels, double epsilon,
                         const std::string& kind) {
    if (epsilon < 0.0) throw std::invalid_argument("attack epsilon must be >= 0");
    AttackResult r;
    r.adversarial = x;
    const auto lg = models::loss_and_input_gradient(grad_model, x.data, labels);
    apply_sign_step(r.adversarial, r.perturbation, x, lg.grad, epsilon);
    fill_metrics(r, eval_model, x);
    json prov;
    prov["attack"] = kind;
    prov["epsilon"] = epsilon;
    r.provenance = prov.dump();
    return r;
}

// Stratified train/validation carve-up for substitute training.
std::pair<EpochSet, EpochSet> split_train_val(const EpochSet& set, double val_frac,
                                              uint64_t seed) {
    std::map<int32_t, std::vector<int64_t>> buckets;
    for (int64_t i = 0; i < set.n(); ++i) buckets[set.labels[size_t(i)]].push_back(i);
    Rng rng(seed);
    std::vector<int64_t> train, val;
    for (auto& [label, idx] : buckets) {
        rng.shuffle(idx);
        const int64_t n_val = std::max<int64_t>(1, int64_t(std::floor(double(idx.size()) * val_frac)));
        for (size_t i = 0; i < idx.size(); ++i)
            (int64_t(i) < n_val ? val : train).push_back(idx[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {set.subset(train), set.subset(val)};
}

models::Model train_substitute(const models::ArchSpec& arch, const EpochSet& data,
                               const train::TrainConfig& cfg, uint64_t seed) {
    models::Model sub = models::build_model(arch, derive_seed(seed, "substitute-init"));
    auto [tr, val] = split_train_val(data, 0.25, derive_seed(seed, "substitute-split"));
    train::TrainConfig sub_cfg = cfg;
    sub_cfg.seed = derive_seed(seed, "substitute-train");
    train::train_model(sub, tr, val, sub_cfg);
    return sub;
}

double agreement(const models::Model& a, const models::Model& b, const EpochSet& x) {
    const auto pa = models::predict(a, x);
    const auto pb = models::predict(b, x);
    int64_t same = 0;
    for (size_t i = 0; i < pa.labels.size(); ++i)
        if (pa.labels[i] == pb.labels[i]) ++same;
    return double(same) / double(pa.labels.size());
}

}  // namespace

AttackResult fgsm(const models::Model& model, const EpochSet& x, double epsilon) {
    x.validate();
    if (!fully_labeled(x, model.arch.classes))
        throw std::invalid_argument("fgsm requires true labels on every epoch");
    return sign_attack(model, model, x, x.labels, epsilon, "fgsm");
}

AttackResult ufgsm_whitebox(const models::Model& model, const EpochSet& x, double epsilon) {
    x.validate();
    const auto pred = models::predict(model, x);
    AttackResult r = sign_attack(model, model, x, pred.labels, epsilon, "white");
    return r;
}

AttackResult ufgsm_graybox(const EpochSet& train_data, const models::ArchSpec& substitute_arch,
                           const models::Model& target, const EpochSet& x, double epsilon,
                           const train::TrainConfig& cfg, uint64_t seed) {
    x.validate();
    const models::Model sub = train_substitute(substitute_arch, train_data, cfg, seed);
    const auto pred = models::predict(sub, x);
    AttackResult r = sign_attack(sub, target, x, pred.labels, epsilon, "gray");
    r.substitute_agreement = agreement(sub, target, x);
    json prov;
    prov["attack"] = "gray";
    prov["epsilon"] = epsilon;
    prov["substitute"] = models::family_name(substitute_arch.family);
    prov["seed"] = seed;
    r.provenance = prov.dump();
    return r;
}

AttackResult ufgsm_blackbox(const models::Model& oracle, const EpochSet& seed_set,
                            const models::ArchSpec& substitute_arch, double lambda, int iterations,
                            double epsilon, const EpochSet& x, const train::TrainConfig& cfg,
                            uint64_t seed, size_t query_budget, const models::Model* eval_model) {
    x.validate();
    seed_set.validate();
    if (lambda <= 0.0) throw std::invalid_argument("blackbox lambda must be > 0");
    if (iterations < 0) throw std::invalid_argument("blackbox iterations must be >= 0");
    const size_t budget = query_budget > 0
                              ? query_budget
                              : size_t(seed_set.n()) * (size_t(1) << size_t(iterations));
    size_t queries = 0;
    auto oracle_labels = [&](const EpochSet& q) {
        queries += size_t(q.n());
        if (queries > budget)
            throw std::runtime_error("blackbox query budget exceeded: " + std::to_string(queries) +
                                     " > " + std::to_string(budget));
        return models::predict(oracle, q).labels;
    };

    // D0: oracle-labeled seed epochs, majority classes downsampled to balance.
    EpochSet d = seed_set;
    d.labels = oracle_labels(seed_set);
    {
        std::map<int32_t, std::vector<int64_t>> buckets;
        for (int64_t i = 0; i < d.n(); ++i) buckets[d.labels[size_t(i)]].push_back(i);
        int64_t m = d.n();
        for (const auto& [cls, idx] : buckets) m = std::min<int64_t>(m, int64_t(idx.size()));
        Rng rng(derive_seed(seed, "blackbox-balance"));
        std::vector<int64_t> keep;
        for (auto& [cls, idx] : buckets) {
            rng.shuffle(idx);
            keep.insert(keep.end(), idx.begin(), idx.begin() + m);
        }
        std::sort(keep.begin(), keep.end());
        d = d.subset(keep);
    }

    std::vector<int64_t> d_sizes{d.n()};
    models::Model sub =
        train_substitute(substitute_arch, d, cfg, derive_seed(seed, "blackbox-round-0"));
    for (int n = 1; n <= iterations; ++n) {
        // Delta-S: lambda-step sign perturbations of everything in D.
        EpochSet delta = d;
        const auto lg = models::loss_and_input_gradient(sub, d.data, d.labels);
        const float lam = float(lambda);
        for (size_t i = 0; i < delta.data.data.size(); ++i)
            delta.data.data[i] = d.data.data[i] + lam * sgn(lg.grad.data[i]);
        delta.labels = oracle_labels(delta);
        EpochSet merged;
        merged.fs = d.fs;
        merged.class_names = d.class_names;
        merged.channel_names = d.channel_names;
        const int64_t c = d.channels(), t = d.samples();
        merged.data = diff::Tensor({d.n() + delta.n(), c, t});
        std::copy(d.data.data.begin(), d.data.data.end(), merged.data.data.begin());
        std::copy(delta.data.data.begin(), delta.data.data.end(),
                  merged.data.data.begin() + d.n() * c * t);
        merged.labels = d.labels;
        merged.labels.insert(merged.labels.end(), delta.labels.begin(), delta.labels.end());
        merged.subjects = d.subjects;
        merged.subjects.insert(merged.subjects.end(), delta.subjects.begin(),
                               delta.subjects.end());
        d = std::move(merged);
        d_sizes.push_back(d.n());
        sub = train_substitute(substitute_arch, d, cfg,
                               derive_seed(seed, "blackbox-round-" + std::to_string(n)));
    }

    const auto pred = models::predict(sub, x);
    const models::Model& evaluator = eval_model ? *eval_model : oracle;
    AttackResult r = sign_attack(sub, evaluator, x, pred.labels, epsilon, "black");
    r.substitute_agreement = agreement(sub, evaluator, x);
    r.oracle_queries = queries;
    json prov;
    prov["attack"] = "black";
    prov["epsilon"] = epsilon;
    prov["lambda"] = lambda;
    prov["iterations"] = iterations;
    prov["substitute"] = models::family_name(substitute_arch.family);
    prov["seed"] = seed;
    prov["d_sizes"] = d_sizes;
    prov["queries"] = queries;
    prov["budget"] = budget;
    r.provenance = prov.dump();
    return r;
}

AttackResult random_noise(const models::Model& model, const EpochSet& x, double epsilon,
                          uint64_t seed) {
    x.validate();
    if (epsilon < 0.0) throw std::invalid_argument("attack epsilon must be >= 0");
    AttackResult r;
    r.adversarial = x;
    r.perturbation = diff::Tensor(x.data.shape);
    Rng rng(derive_seed(seed, "random-noise"));
    const float eps = float(epsilon);
    for (size_t i = 0; i < x.data.data.size(); ++i) {
        const float eta = eps * sgn(float(rng.normal()));
        r.perturbation.data[i] = eta;
        r.adversarial.data.data[i] = x.data.data[i] + eta;
    }
    fill_metrics(r, model, x);
    json prov;
    prov["attack"] = "noise";
    prov["epsilon"] = epsilon;
    prov["seed"] = seed;
    r.provenance = prov.dump();
    return r;
}

std::string averaged_mode_name(AveragedMode m) {
    switch (m) {
        case AveragedMode::Pse: return "pse";
        case AveragedMode::Aae: return "aae";
        case AveragedMode::Pae: return "pae";
    }
    return "?";
}

AttackResult averaged_attack(const models::Model& model, const EpochSet& singles,
                             const std::vector<int32_t>& group_ids, int group_size,
                             AveragedMode mode, double epsilon) {
    singles.validate();
    const EpochSet averaged = signal::average_epochs(singles, group_size, group_ids);

    AttackResult r;
    switch (mode) {
        case AveragedMode::Pse:
            r = ufgsm_whitebox(model, singles, epsilon);
            break;
        case AveragedMode::Pae:
            r = ufgsm_whitebox(model, averaged, epsilon);
            break;
        case AveragedMode::Aae: {
            AttackResult per_single = ufgsm_whitebox(model, singles, epsilon);
            r.adversarial = signal::average_epochs(per_single.adversarial, group_size, group_ids);
            r.perturbation = diff::Tensor(averaged.data.shape);
            for (size_t i = 0; i < r.perturbation.data.size(); ++i)
                r.perturbation.data[i] = r.adversarial.data.data[i] - averaged.data.data[i];
            fill_metrics(r, model, averaged);
            break;
        }
    }
    json prov;
    prov["attack"] = std::string("averaged-") + averaged_mode_name(mode);
    prov["epsilon"] = epsilon;
    prov["group_size"] = group_size;
    r.provenance = prov.dump();
    return r;
}

}  // namespace advkit::attack
