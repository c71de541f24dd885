#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

#include "convpred/nets.hpp"
#include "convpred/trainer.hpp"
#include "convpred/volumes.hpp"

namespace convpred::embedding {

struct HistLossConfig {
    // Nodes t_r = -1 + (r-1) * delta, r = 1..n_bins, delta = 2/(n_bins-1),
    // spanning the cosine-similarity range [-1, 1].
    int n_bins = 100;
};

// Similarity-histogram overlap loss over one batch of unit-norm embeddings.
//
// Pairs i<j with equal labels are matching; pairs with different labels are
// non-matching unless they share a subject id (a subject's own progression
// pair is neither). Each pair's similarity is soft-assigned to its two
// flanking nodes with triangular weights; the two histograms are normalized
// to unit mass and the loss is sum_r hneg_r * cumsum(hpos)_r — the estimated
// probability that a random non-matching pair is at least as similar as a
// random matching pair. Always in [0, 1].
//
// When `grad` is non-null it receives d(loss)/d(embeddings), same shape.
// Throws DataError when either pair set is empty.
double histogram_loss(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                      const std::vector<std::string>& subject_ids, const HistLossConfig& cfg,
                      Eigen::MatrixXd* grad = nullptr);

struct CorpusSample {
    std::string subject_id;
    int month = 0;
    int class_label = 0;  // diagnosis index (NC/MCI/AD) during training
    const volumes::Volume* volume = nullptr;
};

struct EmbeddingEpoch {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double holdout_loss = 0.0;
};

struct EmbeddingTrainHistory {
    std::vector<EmbeddingEpoch> epochs;
    int best_epoch = -1;
    std::string best_weights_digest;
    std::vector<std::string> holdout_subjects;

    std::string to_csv() const;
};

// Minimizes histogram_loss with the trainer's Nesterov/schedule settings.
// Batches are drawn by a class-balanced sampler that guarantees at least two
// classes (hence >= 1 matching and >= 1 non-matching pair) per batch. A
// subject-level holdout (holdout_fraction of subjects) is monitored after
// each epoch; the best-holdout-loss weights are restored at the end.
EmbeddingTrainHistory train_embedding(nets::ModelHandle& model,
                                      const std::vector<CorpusSample>& corpus,
                                      const trainer::TrainConfig& tcfg,
                                      const HistLossConfig& hcfg,
                                      double holdout_fraction = 0.1);

struct EmbeddingTable {
    std::vector<std::string> subject_ids;
    std::vector<int> months;
    int dim = 0;
    std::vector<std::vector<float>> values;  // one row per (subject, month)

    int find(const std::string& subject_id, int month) const;  // -1 if absent
    std::string to_csv() const;
    static EmbeddingTable from_csv_text(const std::string& text);
};

// Eval-mode propagation of every volume; rows are unit-norm.
EmbeddingTable extract_embeddings(const nets::ModelHandle& model,
                                  const std::vector<CorpusSample>& samples, int batch_size);

}  // namespace convpred::embedding
