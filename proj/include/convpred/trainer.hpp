#pragma once

#include <optional>
#include <string>
#include <vector>

#include "convpred/metrics.hpp"
#include "convpred/nets.hpp"
#include "convpred/volumes.hpp"

namespace convpred::trainer {

struct TrainConfig {
    double lr0 = 1e-3;
    std::vector<int> lr_drop_epochs = {30, 50};
    double lr_drop_factor = 0.1;
    double momentum = 0.9;  // Nesterov
    double weight_decay = 0.0;
    int epochs = 70;
    int batch_size = 128;  // resnet3d default; voxcnn runs use 512
    uint64_t seed = 1;
    double prob_clamp = 1e-7;
};

void validate_train_config(const TrainConfig& cfg);

struct ClassWeights {
    double w0 = 1.0;
    double w1 = 1.0;
};

// w_c = (n0 + n1) / (2 * n_c), so w0*n0 == w1*n1.
ClassWeights balanced_weights(int64_t n0, int64_t n1);

// Mean over samples of -w_{y_i} * log p_i(y_i); probabilities clamped at eps.
double weighted_bce(const std::vector<double>& prob_class1, const std::vector<int>& labels,
                    const ClassWeights& w, double eps = 1e-7);
double weighted_bce(const nn::Tensor& probs, const std::vector<int>& labels,
                    const ClassWeights& w, double eps = 1e-7);

// d(weighted_bce)/d(prob_class1), for gradient checks against the logits path.
std::vector<double> weighted_bce_grad_p1(const std::vector<double>& prob_class1,
                                         const std::vector<int>& labels, const ClassWeights& w,
                                         double eps = 1e-7);

// lr0 * factor^(number of drop epochs <= epoch)
double lr_schedule(int epoch, const TrainConfig& cfg);

struct TrainSample {
    std::string subject_id;
    int month = 0;
    int label = 0;
    const volumes::Volume* volume = nullptr;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::optional<double> val_auc;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    std::string best_weights_digest;

    std::string to_csv() const;
};

// Runs the fixed-schedule loop, evaluating the validation split after each
// epoch and restoring the best-epoch weights at the end (keep-best
// checkpointing). Throws on single-class training data and on non-finite
// losses (with a diagnostic snapshot in the message).
TrainHistory train_classifier(nets::ModelHandle& model, const std::vector<TrainSample>& train,
                              const std::vector<TrainSample>& val, const TrainConfig& cfg);

// Stacks volumes into a (N,1,S0,S1,S2) batch; all shapes must match.
nn::Tensor make_batch(const std::vector<const volumes::Volume*>& vols);

// Eval-mode class-1 probabilities, batched.
std::vector<double> score_samples(const nets::ModelHandle& model,
                                  const std::vector<TrainSample>& samples, int batch_size);

}  // namespace convpred::trainer
