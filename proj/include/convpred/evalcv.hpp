#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "convpred/audit.hpp"
#include "convpred/cohort.hpp"
#include "convpred/embedding.hpp"
#include "convpred/metrics.hpp"
#include "convpred/tabular.hpp"
#include "convpred/trainer.hpp"

namespace convpred::evalcv {

struct Fold {
    std::set<std::string> train;
    std::set<std::string> val;
    std::set<std::string> test;
};

// Subject-level partition: test sets are pairwise disjoint and cover the
// universe; within a fold the three sides never share a subject.
struct FoldPlan {
    int k = 5;
    uint64_t seed = 0;
    std::vector<Fold> folds;

    void check_invariants(const std::vector<std::string>& universe) const;
    std::string to_json() const;
};

// Shuffles subjects by seed, deals them into k test folds, then carves
// val_fraction of the remaining subjects into a validation set per fold.
FoldPlan group_kfold(const std::vector<std::string>& subject_ids, int k, double val_fraction,
                     uint64_t seed);

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

struct ExperimentRow {
    std::string data_source;  // clinical | neuroimaging | embedding | clinical+embedding
    std::string method;       // logreg | gbt | voxcnn | resnet3d

    std::string key() const { return data_source + "/" + method; }
};

void validate_row(const ExperimentRow& row);
// The four data/method families: clinical, neuroimaging, embedding and
// fused features, each with its two methods.
std::vector<ExperimentRow> default_experiment_rows();

struct ExperimentSettings {
    int k = 5;
    double val_fraction = 0.2;
    uint64_t seed = 17;
    int repeats = 1;
    // leakage-safe retrains the embedding per fold without the test
    // subjects; the alternative scores a single whole-corpus embedding.
    bool leakage_safe = true;

    nets::NetConfig voxcnn_cfg;
    nets::NetConfig resnet_cfg;
    nets::NetConfig embed_cfg;
    trainer::TrainConfig cnn_train;
    int voxcnn_batch_size = 512;
    int resnet_batch_size = 128;
    trainer::TrainConfig embed_train;
    embedding::HistLossConfig histloss;
    double embed_holdout_fraction = 0.1;
    tabular::TabularModelSpec logreg_spec = tabular::TabularModelSpec::default_logreg();
    tabular::TabularModelSpec gbt_spec = tabular::TabularModelSpec::default_gbt();
    int score_batch_size = 32;
    double threshold = 0.5;
};

struct ExperimentInputs {
    const cohort::ConversionDataset* dataset = nullptr;
    // preprocessed volumes keyed by (subject_id, month); required for
    // neuroimaging rows and leakage-safe embedding rows
    const std::map<tabular::Key, const volumes::Volume*>* volumes = nullptr;
    // the whole imaging corpus with diagnosis labels (embedding training)
    const std::vector<embedding::CorpusSample>* embed_corpus = nullptr;
    // pre-extracted table used when leakage_safe is off
    const embedding::EmbeddingTable* embed_table = nullptr;
};

struct SampleScore {
    std::string data_source;
    std::string method;
    std::string subject_id;
    int month = 0;
    int repeat_idx = 0;
    int fold = 0;
    int label = 0;
    double score = 0.0;
};

struct ExperimentResult {
    std::vector<metrics::MetricsReport> reports;  // one per requested row
    std::vector<SampleScore> scores;
    // per-row fitted-model digests, one per (repeat, fold) — the hook for
    // leakage probes
    std::map<std::string, std::vector<std::string>> model_digests;
    std::vector<FoldPlan> plans;  // one per repeat
    AuditLog audit;
};

// Runs every row over the same grouped fold plans: tabular rows fit with
// nested tuning on the fold's train+val subjects, CNN rows train with
// validation checkpointing; test samples are scored exactly once per repeat.
ExperimentResult run_experiment(const std::vector<ExperimentRow>& rows,
                                const ExperimentInputs& inputs,
                                const ExperimentSettings& settings);

}  // namespace convpred::evalcv
