#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "convpred/cohort.hpp"
#include "convpred/embedding.hpp"
#include "convpred/evalcv.hpp"
#include "convpred/nets.hpp"
#include "convpred/synthgen.hpp"
#include "convpred/trainer.hpp"
#include "convpred/viz.hpp"

namespace convpred::config {

struct PathsConfig {
    std::string visit_table = "visits.csv";
    std::string volume_manifest = "manifest.csv";
    std::string work_dir = ".";
};

struct PreprocessConfig {
    double threshold = 0.0;
    double smooth_sigma = 0.0;
    bool normalize = true;
    // verified against the post-downsample shape when set
    std::optional<std::array<int, 3>> expected_shape;
};

struct CvConfig {
    int k = 5;
    double val_fraction = 0.2;
    uint64_t seed = 17;
    int repeats = 1;
};

struct VizSettings {
    double perplexity = 20.0;
    uint64_t seed = 5;
    int n_iter = 1000;
    int grid_n = 64;
    double bandwidth_scale = 1.0;
};

struct TabularGrids {
    std::vector<double> logreg_c = {0.01, 0.1, 1.0, 10.0, 100.0};
    std::vector<int> gbt_depth = {2, 3, 4};
    std::vector<int> gbt_trees = {100, 300};
    std::vector<double> gbt_learning_rate = {0.05, 0.1};
    int inner_folds = 3;
};

// The single experiment-config file consumed by every subcommand.
// Net input shapes of {0,0,0} mean "derive from the preprocessed volumes".
struct ExperimentConfig {
    int schema_version = 1;
    PathsConfig paths;
    cohort::CohortConfig cohort;
    PreprocessConfig preprocess;
    nets::NetConfig voxcnn;
    nets::NetConfig resnet3d;
    nets::NetConfig embedding_net;  // resnet trunk + embedding head
    trainer::TrainConfig cnn_train;
    int voxcnn_batch_size = 512;
    int resnet_batch_size = 128;
    trainer::TrainConfig embed_train;
    embedding::HistLossConfig histloss;
    double embed_holdout_fraction = 0.1;
    TabularGrids tabular;
    CvConfig cv;
    VizSettings viz;
    std::string mode = "leakage_safe";  // | "paper_faithful"
    std::vector<evalcv::ExperimentRow> rows;  // empty -> all 8 families
    synthgen::SynthConfig synth;

    std::filesystem::path work_dir() const { return paths.work_dir; }
};

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

// Reads and validates a config file. Relative paths resolve against the
// config file's directory; CONVPRED_WORK_DIR overrides the work dir and a
// seed override (from --seed) reseeds every stochastic stage.
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<uint64_t> seed_override = std::nullopt);

void validate_config(const ExperimentConfig& cfg, bool check_paths);

tabular::TabularModelSpec logreg_spec(const ExperimentConfig& cfg);
tabular::TabularModelSpec gbt_spec(const ExperimentConfig& cfg);
evalcv::ExperimentSettings experiment_settings(const ExperimentConfig& cfg);

}  // namespace convpred::config
