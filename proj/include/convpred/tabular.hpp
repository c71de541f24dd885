#pragma once

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "convpred/audit.hpp"
#include "convpred/embedding.hpp"

namespace convpred::tabular {

using Key = std::pair<std::string, int>;  // (subject_id, month)

struct FeatureMatrix {
    std::vector<Key> keys;
    std::vector<std::string> columns;
    std::vector<std::string> provenance;  // "clinical" | "embedding" per column
    Eigen::MatrixXd X;

    std::string manifest_json() const;
};

// Raw clinical cells, one row per (subject, month); values are strings and
// may be missing ("", "NA", "NaN", "?").
struct RawTable {
    std::vector<Key> keys;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> cells;
};

bool is_missing_cell(const std::string& cell);

// Median imputation with missing indicators, one-hot encoding, and
// standardization — all statistics fitted on the training rows only.
class ClinicalTransform {
public:
    static ClinicalTransform fit(const RawTable& raw, const std::vector<char>& train_mask,
                                 AuditLog* audit = nullptr);
    FeatureMatrix apply(const RawTable& raw, AuditLog* audit = nullptr) const;

    std::string to_json() const;
    static ClinicalTransform from_json(const std::string& text);

private:
    struct Column {
        std::string name;
        enum Kind { kNumeric, kCategorical, kDropped } kind = kNumeric;
        double median = 0.0;
        double mean = 0.0;
        double stddev = 1.0;
        bool indicator = false;              // emit a missing-indicator column
        std::vector<std::string> categories;  // categorical levels, sorted
    };
    std::vector<Column> cols_;
};

// Column-wise concatenation keyed by (subject, month); clinical rows without
// an embedding are dropped with an audit note.
FeatureMatrix fuse_features(const FeatureMatrix& clinical, const embedding::EmbeddingTable& emb,
                            AuditLog* audit = nullptr);

// Embedding table as a standalone feature matrix (columns e0..e{d-1}).
FeatureMatrix matrix_from_embeddings(const embedding::EmbeddingTable& emb);

// Row subset by position.
FeatureMatrix submatrix(const FeatureMatrix& m, const std::vector<size_t>& rows);

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

struct LogRegModel {
    Eigen::VectorXd coef;
    double intercept = 0.0;
};

// Weighted L2-regularized logistic regression via Newton iterations; the
// intercept is not penalized.
LogRegModel fit_logreg(const Eigen::MatrixXd& X, const std::vector<int>& y,
                       const std::vector<double>& sample_weight, double l2_lambda);
Eigen::VectorXd predict_logreg(const LogRegModel& m, const Eigen::MatrixXd& X);

struct GbtParams {
    int max_depth = 3;
    int n_trees = 100;
    double learning_rate = 0.1;
    double reg_lambda = 1.0;
    double min_child_weight = 1e-3;
};

struct GbtNode {
    int feature = -1;  // -1: leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
};

struct GbtTree {
    std::vector<GbtNode> nodes;
    double predict(const Eigen::VectorXd& x) const;
};

struct GbtModel {
    GbtParams params;
    double base_score = 0.0;  // log-odds prior
    std::vector<GbtTree> trees;
};

// Second-order gradient boosting on the logistic loss with exact greedy
// splits; gains and leaf values follow the usual G/(H + lambda) form.
GbtModel fit_gbt(const Eigen::MatrixXd& X, const std::vector<int>& y,
                 const std::vector<double>& sample_weight, const GbtParams& params);
Eigen::VectorXd predict_gbt(const GbtModel& m, const Eigen::MatrixXd& X);

// ---------------------------------------------------------------------------
// Hyperparameter search over an inner grouped CV
// ---------------------------------------------------------------------------

struct TabularModelSpec {
    std::string kind;  // "logreg" | "gbt"
    std::vector<std::map<std::string, double>> grid;
    int inner_folds = 3;
    uint64_t seed = 1;

    static TabularModelSpec default_logreg();
    static TabularModelSpec default_gbt();
};

struct FittedTabular {
    std::string kind;
    std::map<std::string, double> chosen_params;
    double inner_cv_auc = 0.0;
    std::vector<std::string> columns;  // fitted manifest
    std::optional<LogRegModel> logreg;
    std::optional<GbtModel> gbt;

    std::string to_json() const;
    static FittedTabular from_json(const std::string& text);
    std::string digest() const;
};

// Grid search scored by inner group-CV ROC AUC, refit on everything with
// balanced sample weights. Degenerate inner splits are skipped with an
// audit note; a single-class y is an error.
FittedTabular fit_tabular(const TabularModelSpec& spec, const FeatureMatrix& X,
                          const std::vector<int>& y, const std::vector<std::string>& groups,
                          AuditLog* audit = nullptr);

// Per-row probability of class 1. The matrix columns must match the fitted
// manifest exactly; mismatches list the missing/extra names.
Eigen::VectorXd predict_scores(const FittedTabular& model, const FeatureMatrix& X);

}  // namespace convpred::tabular
