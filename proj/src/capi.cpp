#include "advkit/advkit.h"

#include <cstring>
#include <nlohmann/json.hpp>
#include <string>

#include "advkit/attack.hpp"
#include "advkit/container.hpp"
#include "advkit/experiment.hpp"
#include "advkit/metrics.hpp"
#include "advkit/models.hpp"
#include "advkit/synth.hpp"
#include "advkit/train.hpp"

using json = nlohmann::ordered_json;

struct advkit_dataset {
    advkit::EpochSet set;
};
struct advkit_model {
    advkit::models::Model model;
};
struct advkit_attack_result {
    advkit::attack::AttackResult result;
};

namespace {

thread_local std::string g_last_error;

advkit_status fail(advkit_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

template <typename Fn>
advkit_status guarded(Fn&& fn) {
    try {
        fn();
        return ADVKIT_OK;
    } catch (const std::invalid_argument& e) {
        return fail(ADVKIT_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::exception& e) {
        const std::string what = e.what();
        const bool io = what.find("cannot open") != std::string::npos ||
                        what.find("write failed") != std::string::npos ||
                        what.find("truncated") != std::string::npos ||
                        what.find("bad magic") != std::string::npos;
        return fail(io ? ADVKIT_ERR_IO : ADVKIT_ERR_RUNTIME, what);
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

advkit::models::ArchSpec arch_from_json(const json& j) {
    advkit::models::ArchSpec arch;
    arch.family = advkit::models::family_from_name(j.value("family", std::string("eegnet")));
    arch.channels = j.value("channels", arch.channels);
    arch.samples = j.value("samples", arch.samples);
    arch.classes = j.value("classes", arch.classes);
    arch.fs = j.value("fs", arch.fs);
    arch.stft_window = j.value("stft_window", arch.stft_window);
    arch.stft_hop = j.value("stft_hop", arch.stft_hop);
    arch.csp_filters_per_class = j.value("csp_filters_per_class", arch.csp_filters_per_class);
    return arch;
}

advkit::train::TrainConfig train_cfg_from_json(const json& j) {
    advkit::train::TrainConfig cfg;
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.class_weighting = j.value("class_weighting", cfg.class_weighting);
    return cfg;
}

}  // namespace

extern "C" {

const char* advkit_version(void) { return "0.1.0"; }

const char* advkit_last_error(void) { return g_last_error.c_str(); }

void advkit_string_free(char* s) { std::free(s); }

advkit_status advkit_dataset_synth(const char* spec_json, advkit_dataset** out) {
    if (!out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null output handle");
    return guarded([&] {
        advkit::harness::SynthSpec spec;
        if (spec_json && *spec_json) {
            const json j = json::parse(spec_json);
            spec.classes = j.value("classes", spec.classes);
            spec.n = j.value("n", spec.n);
            spec.channels = j.value("channels", spec.channels);
            spec.samples = j.value("samples", spec.samples);
            spec.fs = j.value("fs", spec.fs);
            spec.template_snr_db = j.value("template_snr_db", spec.template_snr_db);
            spec.subjects = j.value("subjects", spec.subjects);
            spec.seed = j.value("seed", spec.seed);
        }
        *out = new advkit_dataset{advkit::harness::synth_dataset(spec)};
    });
}

advkit_status advkit_dataset_read(const char* path, advkit_dataset** out) {
    if (!path || !out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] { *out = new advkit_dataset{advkit::harness::read_container(path)}; });
}

advkit_status advkit_dataset_write(const advkit_dataset* set, const char* path) {
    if (!set || !path) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] { advkit::harness::write_container(set->set, path); });
}

advkit_status advkit_dataset_info(const advkit_dataset* set, char** json_out) {
    if (!set || !json_out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        json j;
        j["n"] = set->set.n();
        j["channels"] = set->set.channels();
        j["samples"] = set->set.samples();
        j["fs"] = set->set.fs;
        j["classes"] = set->set.n_classes();
        std::vector<int32_t> subjects = set->set.subjects;
        std::sort(subjects.begin(), subjects.end());
        subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
        j["subjects"] = subjects.size();
        j["class_names"] = set->set.class_names;
        *json_out = dup_string(j.dump());
    });
}

advkit_status advkit_dataset_split(const advkit_dataset* set, const char* plan_json,
                                   uint64_t seed, char** folds_json_out) {
    if (!set || !plan_json || !folds_json_out)
        return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        const json j = json::parse(plan_json);
        advkit::train::SplitPlan plan;
        plan.kind = advkit::train::split_kind_from_name(j.value("kind", std::string("within")));
        plan.train_frac = j.value("train_frac", plan.train_frac);
        plan.val_frac = j.value("val_frac", plan.val_frac);
        plan.group_b_subjects = j.value("group_b_subjects", plan.group_b_subjects);
        const auto folds = advkit::train::make_splits(set->set, plan, seed);
        json out;
        out["folds"] = json::array();
        for (const auto& f : folds)
            out["folds"].push_back({{"train", f.train},
                                    {"val", f.val},
                                    {"test", f.test},
                                    {"attacker", f.attacker}});
        *folds_json_out = dup_string(out.dump());
    });
}

advkit_status advkit_dataset_select(const advkit_dataset* set, const int64_t* indices,
                                    size_t count, advkit_dataset** out) {
    if (!set || (!indices && count > 0) || !out)
        return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        std::vector<int64_t> idx(indices, indices + count);
        *out = new advkit_dataset{set->set.subset(idx)};
    });
}

void advkit_dataset_free(advkit_dataset* set) { delete set; }

advkit_status advkit_model_build(const char* arch_json, uint64_t seed, advkit_model** out) {
    if (!arch_json || !out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        *out = new advkit_model{
            advkit::models::build_model(arch_from_json(json::parse(arch_json)), seed)};
    });
}

advkit_status advkit_model_load(const char* dir, advkit_model** out) {
    if (!dir || !out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] { *out = new advkit_model{advkit::models::load_model(dir)}; });
}

advkit_status advkit_model_save(const advkit_model* model, const char* dir) {
    if (!model || !dir) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] { advkit::models::save_model(model->model, dir); });
}

advkit_status advkit_model_train(advkit_model* model, const advkit_dataset* train_set,
                                 const advkit_dataset* val_set, const char* config_json,
                                 char** history_csv_out) {
    if (!model || !train_set || !val_set) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        advkit::train::TrainConfig cfg;
        if (config_json && *config_json) cfg = train_cfg_from_json(json::parse(config_json));
        const auto history =
            advkit::train::train_model(model->model, train_set->set, val_set->set, cfg);
        if (history_csv_out) *history_csv_out = dup_string(advkit::train::history_csv(history));
    });
}

advkit_status advkit_model_evaluate(const advkit_model* model, const advkit_dataset* set,
                                    char** metrics_json_out) {
    if (!model || !set || !metrics_json_out)
        return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        const auto pred = advkit::models::predict(model->model, set->set);
        const auto report =
            advkit::metrics::evaluate(pred.labels, set->set.labels, model->model.arch.classes);
        *metrics_json_out = dup_string(report.to_json());
    });
}

advkit_status advkit_model_predict(const advkit_model* model, const advkit_dataset* set,
                                   int32_t* labels_out) {
    if (!model || !set || !labels_out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        const auto pred = advkit::models::predict(model->model, set->set);
        std::copy(pred.labels.begin(), pred.labels.end(), labels_out);
    });
}

void advkit_model_free(advkit_model* model) { delete model; }

advkit_status advkit_attack_run(const advkit_model* target, const advkit_dataset* x,
                                const advkit_dataset* aux, const char* attack_json,
                                advkit_attack_result** out) {
    if (!target || !x || !attack_json || !out)
        return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        const json j = json::parse(attack_json);
        const std::string kind = j.value("kind", std::string("white"));
        const double eps = j.value("epsilon", 0.1);
        const uint64_t seed = j.value("seed", uint64_t(0));
        advkit::train::TrainConfig cfg;
        if (j.contains("train")) cfg = train_cfg_from_json(j["train"]);
        advkit::attack::AttackResult res;
        if (kind == "fgsm") {
            res = advkit::attack::fgsm(target->model, x->set, eps);
        } else if (kind == "white" || kind == "whitebox" || kind == "ufgsm") {
            res = advkit::attack::ufgsm_whitebox(target->model, x->set, eps);
        } else if (kind == "noise" || kind == "random") {
            res = advkit::attack::random_noise(target->model, x->set, eps, seed);
        } else if (kind == "gray" || kind == "graybox") {
            if (!aux) throw std::invalid_argument("gray-box attack needs training data (aux)");
            advkit::models::ArchSpec sub = target->model.arch;
            if (j.contains("substitute"))
                sub.family = advkit::models::family_from_name(j["substitute"].get<std::string>());
            res = advkit::attack::ufgsm_graybox(aux->set, sub, target->model, x->set, eps, cfg,
                                                seed);
        } else if (kind == "black" || kind == "blackbox") {
            if (!aux) throw std::invalid_argument("black-box attack needs seed epochs (aux)");
            advkit::models::ArchSpec sub = target->model.arch;
            if (j.contains("substitute"))
                sub.family = advkit::models::family_from_name(j["substitute"].get<std::string>());
            res = advkit::attack::ufgsm_blackbox(target->model, aux->set, sub,
                                                 j.value("lambda", 0.5), j.value("iterations", 2),
                                                 eps, x->set, cfg, seed,
                                                 j.value("query_budget", size_t(0)));
        } else {
            throw std::invalid_argument("unknown attack kind: " + kind);
        }
        *out = new advkit_attack_result{std::move(res)};
    });
}

advkit_status advkit_attack_result_dataset(const advkit_attack_result* result,
                                           advkit_dataset** out) {
    if (!result || !out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        advkit::EpochSet adv = result->result.adversarial;
        adv.provenance = result->result.provenance;
        *out = new advkit_dataset{std::move(adv)};
    });
}

advkit_status advkit_attack_result_metrics(const advkit_attack_result* result, char** json_out) {
    if (!result || !json_out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] { *json_out = dup_string(result->result.metrics_json()); });
}

void advkit_attack_result_free(advkit_attack_result* result) { delete result; }

advkit_status advkit_gradcheck(const char* spec_json, char** report_json_out) {
    if (!report_json_out) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        json spec = spec_json && *spec_json ? json::parse(spec_json) : json::object();
        const std::string which = spec.value("arch", std::string("all"));
        const int channels = spec.value("channels", 8);
        const int samples = spec.value("samples", 64);
        const int classes = spec.value("classes", 2);
        const uint64_t seed = spec.value("seed", uint64_t(0));

        std::vector<std::string> families;
        if (which == "all") families = {"eegnet", "deepcnn", "shallowcnn", "spectrocnn"};
        else if (which != "layers") families = {which};

        json checks = json::array();
        bool pass = true;
        double overall = 0.0;
        for (const auto& fam : families) {
            advkit::models::ArchSpec arch;
            arch.family = advkit::models::family_from_name(fam);
            arch.channels = channels;
            arch.samples = samples;
            arch.classes = classes;
            const double tol =
                arch.family == advkit::models::Family::SpectroCnn ? 1e-4 : 1e-5;
            const auto report = advkit::models::family_gradcheck(arch, seed);
            const bool ok = report.max_rel_err <= tol;
            pass = pass && ok;
            overall = std::max(overall, report.max_rel_err);
            checks.push_back({{"check", fam},
                              {"max_rel_err", report.max_rel_err},
                              {"tolerance", tol},
                              {"coords", report.coords_checked},
                              {"pass", ok}});
        }
        json out;
        out["checks"] = checks;
        out["max_rel_err"] = overall;
        out["pass"] = pass;
        *report_json_out = dup_string(out.dump());
    });
}

advkit_status advkit_run_experiment(const char* config_json, const char* out_dir,
                                    char** report_csv_out) {
    if (!config_json) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        auto cfg = advkit::harness::ExperimentConfig::from_json_text(config_json);
        if (out_dir && *out_dir) cfg.out_dir = out_dir;
        const auto bundle = advkit::harness::run_experiment(cfg);
        if (report_csv_out) *report_csv_out = dup_string(bundle.csv);
    });
}

advkit_status advkit_report_validate(const char* run_dir, char** report_out) {
    if (!run_dir) return fail(ADVKIT_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        const std::string report = advkit::harness::validate_run(run_dir);
        if (report_out) *report_out = dup_string(report);
    });
}

}  // extern "C"
