// Command-line front end; everything goes through the advkit C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "advkit/advkit.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct StringOut {
    char* value = nullptr;
    ~StringOut() { advkit_string_free(value); }
    std::string str() const { return value ? value : ""; }
};

int status_to_exit(advkit_status s) {
    if (s == ADVKIT_OK) return 0;
    std::cerr << "error: " << advkit_last_error() << "\n";
    return s == ADVKIT_ERR_INVALID_ARGUMENT ? 1 : 2;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct DatasetHandle {
    advkit_dataset* p = nullptr;
    ~DatasetHandle() { advkit_dataset_free(p); }
};
struct ModelHandle {
    advkit_model* p = nullptr;
    ~ModelHandle() { advkit_model_free(p); }
};
struct ResultHandle {
    advkit_attack_result* p = nullptr;
    ~ResultHandle() { advkit_attack_result_free(p); }
};

int cmd_synth(const std::string& out, uint64_t seed, int classes, int64_t n, int channels,
              int samples, double fs, double snr_db, int subjects) {
    json spec{{"classes", classes}, {"n", n},        {"channels", channels},
              {"samples", samples}, {"fs", fs},      {"template_snr_db", snr_db},
              {"subjects", subjects}, {"seed", seed}};
    DatasetHandle set;
    if (auto s = advkit_dataset_synth(spec.dump().c_str(), &set.p); s != ADVKIT_OK)
        return status_to_exit(s);
    if (auto s = advkit_dataset_write(set.p, out.c_str()); s != ADVKIT_OK)
        return status_to_exit(s);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_train(const std::string& data_path, const std::string& arch, const std::string& out,
              uint64_t seed, const std::string& split, const std::string& config_path) {
    DatasetHandle data;
    if (auto s = advkit_dataset_read(data_path.c_str(), &data.p); s != ADVKIT_OK)
        return status_to_exit(s);
    StringOut info;
    if (auto s = advkit_dataset_info(data.p, &info.value); s != ADVKIT_OK)
        return status_to_exit(s);
    const json di = json::parse(info.str());

    const json plan{{"kind", split}};
    StringOut folds;
    if (auto s = advkit_dataset_split(data.p, plan.dump().c_str(), seed, &folds.value);
        s != ADVKIT_OK)
        return status_to_exit(s);
    const json fold = json::parse(folds.str())["folds"][0];

    auto select = [&](const char* name, DatasetHandle& out_set) -> advkit_status {
        const std::vector<int64_t> idx = fold[name].get<std::vector<int64_t>>();
        return advkit_dataset_select(data.p, idx.data(), idx.size(), &out_set.p);
    };
    DatasetHandle train_set, val_set, test_set;
    if (auto s = select("train", train_set); s != ADVKIT_OK) return status_to_exit(s);
    if (auto s = select("val", val_set); s != ADVKIT_OK) return status_to_exit(s);
    if (auto s = select("test", test_set); s != ADVKIT_OK) return status_to_exit(s);

    json arch_json{{"family", arch},
                   {"channels", di["channels"]},
                   {"samples", di["samples"]},
                   {"classes", di["classes"]},
                   {"fs", di["fs"]}};
    ModelHandle model;
    if (auto s = advkit_model_build(arch_json.dump().c_str(), seed, &model.p); s != ADVKIT_OK)
        return status_to_exit(s);

    json tcfg{{"seed", seed}};
    if (!config_path.empty()) tcfg = json::parse(read_file(config_path));
    StringOut history;
    if (auto s = advkit_model_train(model.p, train_set.p, val_set.p, tcfg.dump().c_str(),
                                    &history.value);
        s != ADVKIT_OK)
        return status_to_exit(s);

    if (auto s = advkit_model_save(model.p, out.c_str()); s != ADVKIT_OK)
        return status_to_exit(s);
    std::ofstream((fs::path(out) / "history.csv")) << history.str();

    StringOut metrics;
    if (auto s = advkit_model_evaluate(model.p, test_set.p, &metrics.value); s != ADVKIT_OK)
        return status_to_exit(s);
    std::cout << metrics.str() << "\n";
    return 0;
}

int cmd_attack(const std::string& config_path, std::string out_dir,
               const std::vector<double>& eps_override, const std::string& attack_override) {
    json cfg = json::parse(read_file(config_path));
    ModelHandle model;
    if (auto s = advkit_model_load(cfg.at("model").get<std::string>().c_str(), &model.p);
        s != ADVKIT_OK)
        return status_to_exit(s);
    DatasetHandle data;
    if (auto s = advkit_dataset_read(cfg.at("data").get<std::string>().c_str(), &data.p);
        s != ADVKIT_OK)
        return status_to_exit(s);
    DatasetHandle aux;
    if (cfg.contains("aux")) {
        if (auto s = advkit_dataset_read(cfg.at("aux").get<std::string>().c_str(), &aux.p);
            s != ADVKIT_OK)
            return status_to_exit(s);
    }
    json attack = cfg.value("attack", json{{"kind", "white"}, {"epsilon", 0.1}});
    if (!attack_override.empty()) attack["kind"] = attack_override;
    if (out_dir.empty()) out_dir = cfg.value("out", std::string("."));
    fs::create_directories(out_dir);

    std::vector<double> epsilons = eps_override;
    if (epsilons.empty()) epsilons = {attack.value("epsilon", 0.1)};
    for (double eps : epsilons) {
        attack["epsilon"] = eps;
        ResultHandle result;
        if (auto s = advkit_attack_run(model.p, data.p, aux.p, attack.dump().c_str(), &result.p);
            s != ADVKIT_OK)
            return status_to_exit(s);
        StringOut metrics;
        if (auto s = advkit_attack_result_metrics(result.p, &metrics.value); s != ADVKIT_OK)
            return status_to_exit(s);
        DatasetHandle adv;
        if (auto s = advkit_attack_result_dataset(result.p, &adv.p); s != ADVKIT_OK)
            return status_to_exit(s);
        char name[64];
        std::snprintf(name, sizeof(name), "adv_eps%g.eegb", eps);
        const std::string adv_path = (fs::path(out_dir) / name).string();
        if (auto s = advkit_dataset_write(adv.p, adv_path.c_str()); s != ADVKIT_OK)
            return status_to_exit(s);
        json line = json::parse(metrics.str());
        line["epsilon"] = eps;
        line["adversarial"] = adv_path;
        std::cout << line.dump() << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& model_dir, const std::string& data_path) {
    ModelHandle model;
    if (auto s = advkit_model_load(model_dir.c_str(), &model.p); s != ADVKIT_OK)
        return status_to_exit(s);
    DatasetHandle data;
    if (auto s = advkit_dataset_read(data_path.c_str(), &data.p); s != ADVKIT_OK)
        return status_to_exit(s);
    StringOut metrics;
    if (auto s = advkit_model_evaluate(model.p, data.p, &metrics.value); s != ADVKIT_OK)
        return status_to_exit(s);
    std::cout << metrics.str() << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir, uint64_t seed,
              bool seed_set, const std::vector<double>& eps_override, const std::string& arch,
              const std::string& attack) {
    json cfg = json::parse(read_file(config_path));
    if (seed_set) cfg["seed"] = seed;
    if (!eps_override.empty()) cfg["epsilons"] = eps_override;
    if (!arch.empty()) cfg["architectures"] = json::array({arch});
    if (!attack.empty()) cfg["attacks"] = json::array({json{{"kind", attack}}});
    StringOut csv;
    if (auto s = advkit_run_experiment(cfg.dump().c_str(),
                                       out_dir.empty() ? nullptr : out_dir.c_str(), &csv.value);
        s != ADVKIT_OK)
        return status_to_exit(s);
    std::cout << csv.str();
    return 0;
}

int cmd_report(const std::string& run_dir) {
    StringOut report;
    if (auto s = advkit_report_validate(run_dir.c_str(), &report.value); s != ADVKIT_OK)
        return status_to_exit(s);
    std::cout << report.str();
    std::cout << "all recorded metrics re-validated\n";
    return 0;
}

int cmd_gradcheck(const std::string& arch, int channels, int samples, int classes,
                  uint64_t seed) {
    json spec{{"arch", arch},
              {"channels", channels},
              {"samples", samples},
              {"classes", classes},
              {"seed", seed}};
    StringOut report;
    if (auto s = advkit_gradcheck(spec.dump().c_str(), &report.value); s != ADVKIT_OK)
        return status_to_exit(s);
    const json j = json::parse(report.str());
    for (const auto& c : j["checks"]) {
        std::printf("%-12s max_rel_err=%.3e (tol %.0e) %s\n",
                    c["check"].get<std::string>().c_str(), c["max_rel_err"].get<double>(),
                    c["tolerance"].get<double>(), c["pass"].get<bool>() ? "PASS" : "FAIL");
    }
    std::printf("max_rel_err=%.3e\n", j["max_rel_err"].get<double>());
    return j["pass"].get<bool>() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial-attack toolkit for EEG epoch classifiers"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic epoch container");
    std::string synth_out = "synth.eegb";
    uint64_t synth_seed = 0;
    int synth_classes = 2, synth_channels = 8, synth_samples = 128, synth_subjects = 8;
    int64_t synth_n = 2000;
    double synth_fs = 128.0, synth_snr = 0.0;
    synth->add_option("--out", synth_out, "output path");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--classes", synth_classes, "number of classes");
    synth->add_option("--n", synth_n, "number of epochs");
    synth->add_option("--channels", synth_channels, "EEG channels");
    synth->add_option("--samples", synth_samples, "samples per epoch");
    synth->add_option("--fs", synth_fs, "sampling rate (Hz)");
    synth->add_option("--snr-db", synth_snr, "template SNR (dB)");
    synth->add_option("--subjects", synth_subjects, "number of subjects");

    // train
    auto* train = app.add_subcommand("train", "train a classifier on a container");
    std::string train_data, train_arch = "eegnet", train_out = "model", train_split = "within";
    std::string train_config;
    uint64_t train_seed = 0;
    train->add_option("--data", train_data, "epoch container")->required();
    train->add_option("--arch", train_arch, "eegnet|deepcnn|shallowcnn|spectrocnn");
    train->add_option("--out", train_out, "model output directory");
    train->add_option("--seed", train_seed, "master seed");
    train->add_option("--split", train_split, "within|mixed|groupab");
    train->add_option("--config", train_config, "training config JSON");

    // attack
    auto* attack = app.add_subcommand("attack", "generate adversarial epochs");
    std::string attack_config, attack_out, attack_kind;
    std::vector<double> attack_eps;
    attack->add_option("--config", attack_config, "attack config JSON")->required();
    attack->add_option("--out", attack_out, "output directory");
    attack->add_option("--epsilon", attack_eps, "perturbation bound (repeatable)");
    attack->add_option("--attack", attack_kind, "override attack kind");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a model on a container");
    std::string eval_model, eval_data;
    eval->add_option("--model", eval_model, "model directory")->required();
    eval->add_option("--data", eval_data, "epoch container")->required();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "run a full experiment grid");
    std::string sweep_config, sweep_out, sweep_arch, sweep_attack;
    std::vector<double> sweep_eps;
    uint64_t sweep_seed = 0;
    sweep->add_option("--config", sweep_config, "experiment config JSON")->required();
    sweep->add_option("--out", sweep_out, "output directory");
    auto* sweep_seed_opt = sweep->add_option("--seed", sweep_seed, "master seed");
    sweep->add_option("--epsilon", sweep_eps, "epsilon list override (repeatable)");
    sweep->add_option("--arch", sweep_arch, "restrict to one architecture");
    sweep->add_option("--attack", sweep_attack, "restrict to one attack kind");

    // report
    auto* report = app.add_subcommand("report", "re-validate a finished run");
    std::string report_dir;
    report->add_option("--out", report_dir, "run directory (sweep output)")->required();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_arch = "all";
    int gc_channels = 8, gc_samples = 64, gc_classes = 2;
    uint64_t gc_seed = 0;
    gradcheck->add_option("--arch", gc_arch, "all or one family");
    gradcheck->add_option("--channels", gc_channels, "input channels");
    gradcheck->add_option("--samples", gc_samples, "input samples");
    gradcheck->add_option("--classes", gc_classes, "classes");
    gradcheck->add_option("--seed", gc_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_seed, synth_classes, synth_n, synth_channels,
                             synth_samples, synth_fs, synth_snr, synth_subjects);
        if (train->parsed())
            return cmd_train(train_data, train_arch, train_out, train_seed, train_split,
                             train_config);
        if (attack->parsed()) return cmd_attack(attack_config, attack_out, attack_eps, attack_kind);
        if (eval->parsed()) return cmd_eval(eval_model, eval_data);
        if (sweep->parsed())
            return cmd_sweep(sweep_config, sweep_out, sweep_seed, sweep_seed_opt->count() > 0,
                             sweep_eps, sweep_arch, sweep_attack);
        if (report->parsed()) return cmd_report(report_dir);
        if (gradcheck->parsed())
            return cmd_gradcheck(gc_arch, gc_channels, gc_samples, gc_classes, gc_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
