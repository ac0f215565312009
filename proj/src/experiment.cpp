#include "advkit/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "advkit/container.hpp"
#include "advkit/metrics.hpp"

namespace advkit::harness {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

SynthSpec synth_from_json(const json& j) {
    SynthSpec s;
    s.classes = j.value("classes", s.classes);
    s.n = j.value("n", s.n);
    s.channels = j.value("channels", s.channels);
    s.samples = j.value("samples", s.samples);
    s.fs = j.value("fs", s.fs);
    s.template_snr_db = j.value("template_snr_db", s.template_snr_db);
    s.subjects = j.value("subjects", s.subjects);
    s.seed = j.value("seed", s.seed);
    return s;
}

json synth_to_json(const SynthSpec& s) {
    return json{{"classes", s.classes},
                {"n", s.n},
                {"channels", s.channels},
                {"samples", s.samples},
                {"fs", s.fs},
                {"template_snr_db", s.template_snr_db},
                {"subjects", s.subjects},
                {"seed", s.seed}};
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    ExperimentConfig cfg;
    if (j.contains("dataset") && j["dataset"].contains("path")) {
        cfg.dataset_path = j["dataset"]["path"].get<std::string>();
        cfg.use_synth = false;
    } else if (j.contains("dataset") && j["dataset"].contains("synth")) {
        cfg.synth = synth_from_json(j["dataset"]["synth"]);
        cfg.use_synth = true;
    }
    cfg.architectures = j.value("architectures", std::vector<std::string>{"eegnet"});
    if (j.contains("split")) {
        const auto& s = j["split"];
        cfg.split.kind = train::split_kind_from_name(s.value("kind", std::string("within")));
        cfg.split.train_frac = s.value("train_frac", cfg.split.train_frac);
        cfg.split.val_frac = s.value("val_frac", cfg.split.val_frac);
        cfg.split.group_b_subjects = s.value("group_b_subjects", cfg.split.group_b_subjects);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        cfg.tcfg.learning_rate = t.value("learning_rate", cfg.tcfg.learning_rate);
        cfg.tcfg.batch_size = t.value("batch_size", cfg.tcfg.batch_size);
        cfg.tcfg.max_epochs = t.value("max_epochs", cfg.tcfg.max_epochs);
        cfg.tcfg.patience = t.value("patience", cfg.tcfg.patience);
        cfg.tcfg.class_weighting = t.value("class_weighting", cfg.tcfg.class_weighting);
    }
    for (const auto& a : j.value("attacks", json::array())) {
        AttackConfig ac;
        ac.kind = attack::kind_from_name(a.at("kind").get<std::string>());
        ac.substitute = a.value("substitute", std::string());
        ac.lambda = a.value("lambda", ac.lambda);
        ac.iterations = a.value("iterations", ac.iterations);
        cfg.attacks.push_back(ac);
    }
    cfg.epsilons = j.value("epsilons", std::vector<double>{0.1});
    cfg.out_dir = j.value("out_dir", std::string());
    cfg.master_seed = j.value("seed", uint64_t(0));
    return cfg;
}

std::string ExperimentConfig::to_json_text() const {
    json j;
    if (use_synth) j["dataset"] = {{"synth", synth_to_json(synth)}};
    else j["dataset"] = {{"path", dataset_path}};
    j["architectures"] = architectures;
    j["split"] = {{"kind", train::split_kind_name(split.kind)},
                  {"train_frac", split.train_frac},
                  {"val_frac", split.val_frac},
                  {"group_b_subjects", split.group_b_subjects}};
    j["train"] = {{"learning_rate", tcfg.learning_rate},
                  {"batch_size", tcfg.batch_size},
                  {"max_epochs", tcfg.max_epochs},
                  {"patience", tcfg.patience},
                  {"class_weighting", tcfg.class_weighting}};
    json attacks = json::array();
    for (const auto& a : this->attacks) {
        json aj{{"kind", attack::kind_name(a.kind)}};
        if (!a.substitute.empty()) aj["substitute"] = a.substitute;
        if (a.kind == attack::Kind::BlackBox) {
            aj["lambda"] = a.lambda;
            aj["iterations"] = a.iterations;
        }
        attacks.push_back(aj);
    }
    j["attacks"] = attacks;
    j["epsilons"] = epsilons;
    j["out_dir"] = out_dir;
    j["seed"] = master_seed;
    return j.dump(2);
}

void ExperimentConfig::validate() const {
    if (architectures.empty()) throw std::invalid_argument("experiment needs >= 1 architecture");
    if (attacks.empty()) throw std::invalid_argument("experiment needs >= 1 attack");
    for (double e : epsilons)
        if (e < 0.0) throw std::invalid_argument("experiment epsilon values must be >= 0");
    if (out_dir.empty()) throw std::invalid_argument("experiment needs an output directory");
}

namespace {

constexpr double kAttackEvalEpsZero = 0.0;

struct FoldContext {
    train::Split split;
    EpochSet train_set, val_set, test_set, attacker_set;
};

std::string eps_tag(double eps) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", eps);
    std::string s = buf;
    for (auto& ch : s)
        if (ch == '.') ch = 'p';
    return s;
}

json cell_to_json(const CellResult& c) {
    json j;
    j["arch"] = c.arch;
    j["fold"] = c.fold;
    j["attack"] = c.attack;
    j["epsilon"] = c.epsilon;
    j["status"] = c.status;
    if (c.status == "ok") {
        j["clean_rca"] = c.clean_rca;
        j["clean_bca"] = c.clean_bca;
        j["noisy_rca"] = c.noisy_rca;
        j["noisy_bca"] = c.noisy_bca;
        j["adv_rca"] = c.adv_rca;
        j["adv_bca"] = c.adv_bca;
        j["snr_db"] = std::isinf(c.snr_db) ? json("inf") : json(c.snr_db);
        j["model_dir"] = c.model_dir;
        j["adv_path"] = c.adv_path;
        j["test_path"] = c.test_path;
    }
    return j;
}

CellResult cell_from_json(const json& j) {
    CellResult c;
    c.arch = j.at("arch").get<std::string>();
    c.fold = j.at("fold").get<int>();
    c.attack = j.at("attack").get<std::string>();
    c.epsilon = j.at("epsilon").get<double>();
    c.status = j.at("status").get<std::string>();
    if (c.status == "ok") {
        c.clean_rca = j.at("clean_rca").get<double>();
        c.clean_bca = j.at("clean_bca").get<double>();
        c.noisy_rca = j.at("noisy_rca").get<double>();
        c.noisy_bca = j.at("noisy_bca").get<double>();
        c.adv_rca = j.at("adv_rca").get<double>();
        c.adv_bca = j.at("adv_bca").get<double>();
        c.snr_db = j.at("snr_db").is_string() ? std::numeric_limits<double>::infinity()
                                              : j.at("snr_db").get<double>();
        c.model_dir = j.at("model_dir").get<std::string>();
        c.adv_path = j.at("adv_path").get<std::string>();
        c.test_path = j.at("test_path").get<std::string>();
    }
    return c;
}

std::string assemble_csv(const std::vector<CellResult>& cells, const std::string& dataset,
                         const std::string& split_name) {
    std::string csv =
        "dataset,arch,split,attack,epsilon,clean_rca,clean_bca,noisy_rca,noisy_bca,adv_rca,"
        "adv_bca,snr_db\n";
    // Fold-average in first-appearance order.
    struct Acc {
        CellResult sum;
        int count = 0;
    };
    std::vector<std::pair<std::string, Acc>> rows;
    for (const auto& c : cells) {
        if (c.status != "ok") continue;
        const std::string key = c.arch + "|" + c.attack + "|" + fmt(c.epsilon);
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const auto& r) { return r.first == key; });
        if (it == rows.end()) {
            rows.push_back({key, {c, 1}});
        } else {
            auto& a = it->second;
            a.sum.clean_rca += c.clean_rca;
            a.sum.clean_bca += c.clean_bca;
            a.sum.noisy_rca += c.noisy_rca;
            a.sum.noisy_bca += c.noisy_bca;
            a.sum.adv_rca += c.adv_rca;
            a.sum.adv_bca += c.adv_bca;
            a.sum.snr_db += c.snr_db;
            ++a.count;
        }
    }
    for (const auto& [key, acc] : rows) {
        const double k = acc.count;
        const CellResult& c = acc.sum;
        csv += dataset + "," + c.arch + "," + split_name + "," + c.attack + "," + fmt(c.epsilon) +
               "," + fmt(c.clean_rca / k) + "," + fmt(c.clean_bca / k) + "," +
               fmt(c.noisy_rca / k) + "," + fmt(c.noisy_bca / k) + "," + fmt(c.adv_rca / k) + "," +
               fmt(c.adv_bca / k) + "," + fmt(c.snr_db / k) + "\n";
    }
    return csv;
}

}  // namespace

ReportBundle run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    fs::create_directories(fs::path(cfg.out_dir) / "datasets");
    fs::create_directories(fs::path(cfg.out_dir) / "models");
    fs::create_directories(fs::path(cfg.out_dir) / "adv");

    EpochSet data = cfg.use_synth ? synth_dataset(cfg.synth) : read_container(cfg.dataset_path);
    const std::string dataset_name =
        cfg.use_synth ? "synth" : fs::path(cfg.dataset_path).stem().string();
    write_container(data, (fs::path(cfg.out_dir) / "datasets" / "clean.eegb").string());

    const auto folds =
        train::make_splits(data, cfg.split, derive_seed(cfg.master_seed, "splits"));
    std::vector<FoldContext> contexts;
    for (size_t f = 0; f < folds.size(); ++f) {
        FoldContext ctx;
        ctx.split = folds[f];
        ctx.train_set = data.subset(folds[f].train);
        ctx.val_set = data.subset(folds[f].val);
        ctx.test_set = data.subset(folds[f].test);
        if (!folds[f].attacker.empty()) ctx.attacker_set = data.subset(folds[f].attacker);
        const std::string test_path =
            (fs::path(cfg.out_dir) / "datasets" / ("fold" + std::to_string(f) + "_test.eegb"))
                .string();
        write_container(ctx.test_set, test_path);
        contexts.push_back(std::move(ctx));
    }

    ReportBundle bundle;
    for (const std::string& arch_name : cfg.architectures) {
        models::ArchSpec arch;
        arch.family = models::family_from_name(arch_name);
        arch.channels = int(data.channels());
        arch.samples = int(data.samples());
        arch.classes = data.n_classes();
        arch.fs = data.fs;

        for (size_t f = 0; f < contexts.size(); ++f) {
            const FoldContext& ctx = contexts[f];
            const std::string test_path =
                (fs::path(cfg.out_dir) / "datasets" / ("fold" + std::to_string(f) + "_test.eegb"))
                    .string();
            const uint64_t fold_seed =
                derive_seed(cfg.master_seed, arch_name + "-fold" + std::to_string(f));

            models::Model target = models::build_model(arch, derive_seed(fold_seed, "target"));
            train::TrainConfig tcfg = cfg.tcfg;
            tcfg.seed = derive_seed(fold_seed, "target-train");
            std::string model_dir;
            try {
                train::train_model(target, ctx.train_set, ctx.val_set, tcfg);
                model_dir = (fs::path(cfg.out_dir) / "models" /
                             (arch_name + "_fold" + std::to_string(f)))
                                .string();
                models::save_model(target, model_dir);
            } catch (const std::exception& e) {
                CellResult cell;
                cell.arch = arch_name;
                cell.fold = int(f);
                cell.attack = "none";
                cell.status = std::string("error: ") + e.what();
                bundle.cells.push_back(cell);
                continue;
            }

            const auto clean_pred = models::predict(target, ctx.test_set);
            const double clean_rca = metrics::rca(clean_pred.labels, ctx.test_set.labels);
            const double clean_bca = metrics::bca(clean_pred.labels, ctx.test_set.labels);

            {
                CellResult base;
                base.arch = arch_name;
                base.fold = int(f);
                base.attack = "none";
                base.epsilon = kAttackEvalEpsZero;
                base.clean_rca = base.noisy_rca = base.adv_rca = clean_rca;
                base.clean_bca = base.noisy_bca = base.adv_bca = clean_bca;
                base.snr_db = std::numeric_limits<double>::infinity();
                base.model_dir = model_dir;
                base.adv_path = test_path;  // zero perturbation
                base.test_path = test_path;
                bundle.cells.push_back(base);
            }

            // Noise baselines per epsilon are shared across the attack cells.
            std::map<double, std::pair<double, double>> noisy_at;
            for (double eps : cfg.epsilons) {
                const auto noise = attack::random_noise(
                    target, ctx.test_set, eps, derive_seed(fold_seed, "noise-" + eps_tag(eps)));
                noisy_at[eps] = {noise.adv_rca, noise.adv_bca};
            }

            for (const AttackConfig& ac : cfg.attacks) {
                for (double eps : cfg.epsilons) {
                    CellResult cell;
                    cell.arch = arch_name;
                    cell.fold = int(f);
                    cell.attack = attack::kind_name(ac.kind) +
                                  (ac.substitute.empty() ? "" : ":" + ac.substitute);
                    cell.epsilon = eps;
                    cell.model_dir = model_dir;
                    cell.test_path = test_path;
                    try {
                        models::ArchSpec sub_arch = arch;
                        if (!ac.substitute.empty())
                            sub_arch.family = models::family_from_name(ac.substitute);
                        const uint64_t cell_seed = derive_seed(
                            fold_seed, cell.attack + "-eps" + eps_tag(eps));
                        attack::AttackResult res;
                        switch (ac.kind) {
                            case attack::Kind::WhiteBox:
                                res = attack::ufgsm_whitebox(target, ctx.test_set, eps);
                                break;
                            case attack::Kind::GrayBox:
                                res = attack::ufgsm_graybox(ctx.train_set, sub_arch, target,
                                                            ctx.test_set, eps, cfg.tcfg,
                                                            cell_seed);
                                break;
                            case attack::Kind::BlackBox: {
                                if (ctx.attacker_set.n() == 0)
                                    throw std::runtime_error(
                                        "black-box attack needs a groupab split (attacker seed "
                                        "epochs)");
                                res = attack::ufgsm_blackbox(target, ctx.attacker_set, sub_arch,
                                                             ac.lambda, ac.iterations, eps,
                                                             ctx.test_set, cfg.tcfg, cell_seed);
                                break;
                            }
                            case attack::Kind::RandomNoise:
                                res = attack::random_noise(target, ctx.test_set, eps, cell_seed);
                                break;
                        }
                        cell.clean_rca = res.clean_rca;
                        cell.clean_bca = res.clean_bca;
                        cell.noisy_rca = noisy_at[eps].first;
                        cell.noisy_bca = noisy_at[eps].second;
                        cell.adv_rca = res.adv_rca;
                        cell.adv_bca = res.adv_bca;
                        cell.snr_db = res.snr_db;
                        const std::string adv_path =
                            (fs::path(cfg.out_dir) / "adv" /
                             (arch_name + "_fold" + std::to_string(f) + "_" +
                              attack::kind_name(ac.kind) +
                              (ac.substitute.empty() ? "" : "_" + ac.substitute) + "_eps" +
                              eps_tag(eps) + ".eegb"))
                                .string();
                        EpochSet adv = res.adversarial;
                        adv.provenance = res.provenance;
                        write_container(adv, adv_path);
                        cell.adv_path = adv_path;
                    } catch (const std::exception& e) {
                        cell.status = std::string("error: ") + e.what();
                    }
                    bundle.cells.push_back(cell);
                }
            }
        }
    }

    bundle.csv = assemble_csv(bundle.cells, dataset_name, train::split_kind_name(cfg.split.kind));

    json manifest;
    manifest["config"] = json::parse(cfg.to_json_text());
    manifest["dataset"] = dataset_name;
    manifest["master_seed"] = cfg.master_seed;
    manifest["seed_derivation"] = "fnv1a(role) folded into master, splitmix64 finisher";
    manifest["folds"] = folds.size();
    json cells = json::array();
    for (const auto& c : bundle.cells) cells.push_back(cell_to_json(c));
    manifest["cells"] = cells;
    bundle.manifest_json = manifest.dump(2);

    std::ofstream(fs::path(cfg.out_dir) / "report.csv") << bundle.csv;
    std::ofstream(fs::path(cfg.out_dir) / "manifest.json") << bundle.manifest_json << "\n";
    return bundle;
}

std::string validate_run(const std::string& out_dir) {
    std::ifstream is(fs::path(out_dir) / "manifest.json");
    if (!is) throw std::runtime_error("no manifest.json under " + out_dir);
    const json manifest = json::parse(is);
    const double tol = 1e-6;
    std::string report = "arch,fold,attack,epsilon,recorded_adv_rca,recomputed_adv_rca,status\n";
    int checked = 0;
    for (const auto& cj : manifest.at("cells")) {
        const CellResult cell = cell_from_json(cj);
        if (cell.status != "ok") continue;
        const models::Model model = models::load_model(cell.model_dir);
        const EpochSet test = read_container(cell.test_path);
        const EpochSet adv = read_container(cell.adv_path);

        const auto clean_pred = models::predict(model, test);
        const double clean_rca = metrics::rca(clean_pred.labels, test.labels);
        const auto adv_pred = models::predict(model, adv);
        const double adv_rca = metrics::rca(adv_pred.labels, test.labels);
        const double adv_bca = metrics::bca(adv_pred.labels, test.labels);
        const double snr = metrics::snr_db(test, adv);

        const bool ok = std::abs(clean_rca - cell.clean_rca) <= tol &&
                        std::abs(adv_rca - cell.adv_rca) <= tol &&
                        std::abs(adv_bca - cell.adv_bca) <= tol &&
                        (std::isinf(snr) ? std::isinf(cell.snr_db)
                                         : std::abs(snr - cell.snr_db) <= tol);
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%d,%s,%s,%s,%s,%s\n", cell.arch.c_str(), cell.fold,
                      cell.attack.c_str(), fmt(cell.epsilon).c_str(), fmt(cell.adv_rca).c_str(),
                      fmt(adv_rca).c_str(), ok ? "ok" : "MISMATCH");
        report += line;
        ++checked;
        if (!ok)
            throw std::runtime_error("re-validation mismatch for " + cell.arch + "/" +
                                     cell.attack + " eps=" + fmt(cell.epsilon) + "\n" + report);
    }
    if (checked == 0) throw std::runtime_error("run has no validatable cells");
    return report;
}

}  // namespace advkit::harness
