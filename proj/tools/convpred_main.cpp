#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

#include "convpred/pipeline.hpp"

using namespace convpred;

namespace {

// one machine-parsable line on stderr, nonzero exit
int fail(const std::string& command, const std::exception& e) {
    nlohmann::json j;
    j["error"] = e.what();
    j["command"] = command;
    std::cerr << j.dump() << "\n";
    return 1;
}

config::ExperimentConfig load(const std::string& config_path, std::optional<uint64_t> seed,
                              bool check_paths) {
    auto cfg = config::load_config(config_path, seed);
    config::validate_config(cfg, check_paths);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MCI-to-AD conversion prediction pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // allow --config/--seed after the subcommand name

    std::string config_path;
    std::optional<uint64_t> seed_override;
    uint64_t seed_value = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "experiment config file (JSON)");
    app.add_option("--seed", seed_value, "override every configured seed")
        ->each([&](const std::string&) { seed_set = true; });

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic workspace");
    std::string synth_out = "synth_workspace";
    synthgen::SynthConfig synth_defaults;
    int synth_subjects = synth_defaults.n_subjects;
    int synth_dim = synth_defaults.volume_shape[0];
    synth->add_option("--out", synth_out, "output workspace directory");
    synth->add_option("--subjects", synth_subjects, "number of subjects");
    synth->add_option("--volume-dim", synth_dim, "cubic raw volume edge length");

    auto* preprocess = app.add_subcommand("preprocess", "reorient, crop, downsample, normalize");
    auto* build_cohort = app.add_subcommand("build-cohort", "label the conversion dataset");
    auto* train_cnn = app.add_subcommand("train-cnn", "train a conversion classifier");
    std::string arch = "resnet3d";
    int fold_index = 0;
    train_cnn->add_option("--arch", arch, "voxcnn | resnet3d");
    train_cnn->add_option("--fold", fold_index, "cross-validation fold to train");
    auto* train_embedding = app.add_subcommand("train-embedding", "train the similarity embedding");
    auto* extract = app.add_subcommand("extract-embeddings", "embed every preprocessed volume");
    auto* train_tabular = app.add_subcommand("train-tabular", "fit a tabular model with tuning");
    std::string data_source = "clinical";
    std::string kind = "logreg";
    train_tabular->add_option("--data", data_source, "clinical | embedding | clinical+embedding");
    train_tabular->add_option("--model", kind, "logreg | gbt");
    auto* evaluate = app.add_subcommand("evaluate", "run the grouped-CV experiment matrix");
    auto* visualize = app.add_subcommand("visualize", "t-SNE scatter and KDE figures");
    auto* report = app.add_subcommand("report", "compare results against reference expectations");
    std::string reference_path = "data/reference_expectations.json";
    report->add_option("--reference", reference_path, "reference expectations JSON");

    CLI11_PARSE(app, argc, argv);
    if (seed_set) seed_override = seed_value;

    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    try {
        if (sub == synth) {
            synthgen::SynthConfig scfg;
            if (!config_path.empty()) {
                scfg = load(config_path, seed_override, false).synth;
            }
            if (synth->count("--subjects")) scfg.n_subjects = synth_subjects;
            if (synth->count("--volume-dim")) scfg.volume_shape = {synth_dim, synth_dim, synth_dim};
            if (seed_override) scfg.seed = *seed_override;
            pipeline::run_synth(scfg, synth_out);
            std::cout << "synth: wrote workspace to " << synth_out << "\n";
            return 0;
        }

        if (config_path.empty())
            throw ConfigError("--config FILE is required for this subcommand");

        if (sub == preprocess) {
            pipeline::run_preprocess(load(config_path, seed_override, true));
            std::cout << "preprocess: done\n";
        } else if (sub == build_cohort) {
            auto stats = pipeline::run_build_cohort(load(config_path, seed_override, true));
            std::cout << "build-cohort: " << stats.subjects_stable << " stable / "
                      << stats.subjects_converged << " converged subjects, "
                      << stats.samples_stable << "/" << stats.samples_converged << " samples\n";
        } else if (sub == train_cnn) {
            pipeline::run_train_cnn(load(config_path, seed_override, false), arch, fold_index);
            std::cout << "train-cnn: " << arch << " fold " << fold_index << " done\n";
        } else if (sub == train_embedding) {
            pipeline::run_train_embedding(load(config_path, seed_override, true));
            std::cout << "train-embedding: done\n";
        } else if (sub == extract) {
            pipeline::run_extract_embeddings(load(config_path, seed_override, false));
            std::cout << "extract-embeddings: done\n";
        } else if (sub == train_tabular) {
            pipeline::run_train_tabular(load(config_path, seed_override, false), data_source, kind);
            std::cout << "train-tabular: " << data_source << "/" << kind << " done\n";
        } else if (sub == evaluate) {
            pipeline::run_evaluate(load(config_path, seed_override, false));
            std::cout << "evaluate: wrote results\n";
        } else if (sub == visualize) {
            pipeline::run_visualize(load(config_path, seed_override, true));
            std::cout << "visualize: wrote figures\n";
        } else if (sub == report) {
            auto text = pipeline::run_report(load(config_path, seed_override, false),
                                             reference_path);
            std::cout << text;
        }
        return 0;
    } catch (const std::exception& e) {
        return fail(name, e);
    }
}
