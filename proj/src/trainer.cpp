#include "convpred/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace convpred::trainer {

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (!(cfg.lr_drop_factor > 0.0 && cfg.lr_drop_factor < 1.0))
        throw ConfigError("lr_drop_factor must be in (0,1)");
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    int prev = -1;
    for (int e : cfg.lr_drop_epochs) {
        if (e <= prev || e >= cfg.epochs)
            throw ConfigError("lr_drop_epochs must be strictly increasing and < epochs");
        prev = e;
    }
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
        throw ConfigError("momentum must be in [0,1)");
}

ClassWeights balanced_weights(int64_t n0, int64_t n1) {
    if (n0 <= 0 || n1 <= 0)
        throw DataError("balanced_weights: both class counts must be positive (got " +
                        std::to_string(n0) + ", " + std::to_string(n1) + ")");
    double total = static_cast<double>(n0 + n1);
    return {total / (2.0 * static_cast<double>(n0)), total / (2.0 * static_cast<double>(n1))};
}

double weighted_bce(const std::vector<double>& prob_class1, const std::vector<int>& labels,
                    const ClassWeights& w, double eps) {
    if (prob_class1.size() != labels.size()) throw DataError("weighted_bce: size mismatch");
    if (prob_class1.empty()) throw DataError("weighted_bce: empty batch");
    double sum = 0.0;
    for (size_t i = 0; i < prob_class1.size(); ++i) {
        double p_true = labels[i] == 1 ? prob_class1[i] : 1.0 - prob_class1[i];
        p_true = std::clamp(p_true, eps, 1.0);
        double wi = labels[i] == 1 ? w.w1 : w.w0;
        sum += -wi * std::log(p_true);
    }
    return sum / static_cast<double>(prob_class1.size());
}

double weighted_bce(const nn::Tensor& probs, const std::vector<int>& labels,
                    const ClassWeights& w, double eps) {
    if (probs.rank() != 2 || probs.dim(1) != 2)
        throw DataError("weighted_bce: expected (N,2) probabilities, got " + probs.shape_str());
    if (static_cast<size_t>(probs.dim(0)) != labels.size())
        throw DataError("weighted_bce: size mismatch");
    std::vector<double> p1(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) p1[i] = probs.data[2 * i + 1];
    return weighted_bce(p1, labels, w, eps);
}

std::vector<double> weighted_bce_grad_p1(const std::vector<double>& prob_class1,
                                         const std::vector<int>& labels, const ClassWeights& w,
                                         double eps) {
    const double n = static_cast<double>(prob_class1.size());
    std::vector<double> g(prob_class1.size(), 0.0);
    for (size_t i = 0; i < prob_class1.size(); ++i) {
        double wi = labels[i] == 1 ? w.w1 : w.w0;
        if (labels[i] == 1) {
            double p = std::clamp(prob_class1[i], eps, 1.0);
            g[i] = (prob_class1[i] > eps && prob_class1[i] < 1.0) ? -wi / (p * n) : 0.0;
            if (prob_class1[i] >= 1.0) g[i] = -wi / n;  // derivative of -w log(p) at p=1
        } else {
            double q = std::clamp(1.0 - prob_class1[i], eps, 1.0);
            g[i] = (q > eps && q < 1.0) ? wi / (q * n) : 0.0;
            if (prob_class1[i] <= 0.0) g[i] = wi / n;
        }
    }
    return g;
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw ConfigError("lr_schedule: epoch out of range");
    int drops = 0;
    for (int e : cfg.lr_drop_epochs)
        if (e <= epoch) ++drops;
    return cfg.lr0 * std::pow(cfg.lr_drop_factor, drops);
}

nn::Tensor make_batch(const std::vector<const volumes::Volume*>& vols) {
    if (vols.empty()) throw DataError("make_batch: empty batch");
    auto shape = vols.front()->meta.shape;
    nn::Tensor t({static_cast<int>(vols.size()), 1, shape[0], shape[1], shape[2]});
    int64_t block = static_cast<int64_t>(shape[0]) * shape[1] * shape[2];
    for (size_t i = 0; i < vols.size(); ++i) {
        if (vols[i]->meta.shape != shape)
            throw DataError("make_batch: volume shape mismatch");
        std::copy(vols[i]->data.begin(), vols[i]->data.end(),
                  t.data.begin() + static_cast<int64_t>(i) * block);
    }
    return t;
}

std::vector<double> score_samples(const nets::ModelHandle& model,
                                  const std::vector<TrainSample>& samples, int batch_size) {
    std::vector<double> scores;
    scores.reserve(samples.size());
    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
        std::vector<const volumes::Volume*> vols;
        for (size_t i = start; i < end; ++i) vols.push_back(samples[i].volume);
        auto probs = model.forward(make_batch(vols), false);
        for (size_t i = 0; i < end - start; ++i)
            scores.push_back(probs.data[2 * i + 1]);
    }
    return scores;
}

namespace {

struct WeightSnapshot {
    std::vector<std::vector<float>> tensors;
    void capture(nn::Net& net) {
        tensors.clear();
        for (auto* p : net.state()) tensors.push_back(p->value.data);
    }
    void restore(nn::Net& net) const {
        auto st = net.state();
        for (size_t i = 0; i < st.size(); ++i) st[i]->value.data = tensors[i];
    }
    bool empty() const { return tensors.empty(); }
};

}  // namespace

std::string TrainHistory::to_csv() const {
    std::ostringstream os;
    os << "epoch,lr,train_loss,val_loss,val_auc,is_best\n";
    for (const auto& r : epochs) {
        os << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.val_loss << ",";
        if (r.val_auc) os << *r.val_auc;
        os << "," << (r.epoch == best_epoch ? 1 : 0) << "\n";
    }
    return os.str();
}

TrainHistory train_classifier(nets::ModelHandle& model, const std::vector<TrainSample>& train,
                              const std::vector<TrainSample>& val, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (train.empty()) throw DataError("train_classifier: empty training stream");

    int64_t n0 = 0, n1 = 0;
    for (const auto& s : train) (s.label == 1 ? n1 : n0)++;
    if (n0 == 0 || n1 == 0)
        throw DataError("train_classifier: training stream has a single class (n0=" +
                        std::to_string(n0) + ", n1=" + std::to_string(n1) + ")");
    ClassWeights weights = balanced_weights(n0, n1);

    nn::NesterovSgd opt(cfg.momentum, cfg.weight_decay);
    auto params = model.net->params();

    TrainHistory hist;
    WeightSnapshot best;
    double best_metric = -std::numeric_limits<double>::infinity();

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = lr_schedule(epoch, cfg);
        Rng shuffle_rng(cfg.seed, 0x45504f43ULL + static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            size_t bs = end - start;
            std::vector<const volumes::Volume*> vols(bs);
            std::vector<int> labels(bs);
            for (size_t i = 0; i < bs; ++i) {
                vols[i] = train[order[start + i]].volume;
                labels[i] = train[order[start + i]].label;
            }
            auto batch = make_batch(vols);
            auto probs = model.forward(batch, true);
            double loss = weighted_bce(probs, labels, weights, cfg.prob_clamp);
            if (!std::isfinite(loss)) {
                std::ostringstream snap;
                snap << "train_classifier: non-finite loss at epoch " << epoch << ", batch start "
                     << start << " (lr=" << lr << ", batch loss=" << loss << ")";
                throw DataError(snap.str());
            }
            loss_sum += loss * static_cast<double>(bs);
            seen += static_cast<int64_t>(bs);

            // d(loss)/d(logit_{i,k}) = w_{y_i} (p_{i,k} - [k == y_i]) / B
            nn::Tensor dlogits(probs.shape);
            for (size_t i = 0; i < bs; ++i) {
                double wi = labels[i] == 1 ? weights.w1 : weights.w0;
                for (int k = 0; k < 2; ++k) {
                    double p = probs.data[2 * i + static_cast<size_t>(k)];
                    double target = (k == labels[i]) ? 1.0 : 0.0;
                    dlogits.data[2 * i + static_cast<size_t>(k)] =
                        static_cast<float>(wi * (p - target) / static_cast<double>(bs));
                }
            }
            nn::NesterovSgd::zero_grad(params);
            model.net->backward(dlogits);
            opt.step(params, lr);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(seen);

        if (!val.empty()) {
            auto val_scores = score_samples(model, val, cfg.batch_size);
            std::vector<int> val_labels(val.size());
            for (size_t i = 0; i < val.size(); ++i) val_labels[i] = val[i].label;
            rec.val_loss = weighted_bce(val_scores, val_labels, weights, cfg.prob_clamp);
            rec.val_auc = metrics::roc_auc(val_scores, val_labels);
        } else {
            rec.val_loss = rec.train_loss;
        }

        double metric = rec.val_auc ? *rec.val_auc : -rec.val_loss;
        if (metric > best_metric) {
            best_metric = metric;
            hist.best_epoch = epoch;
            best.capture(*model.net);
        }
        hist.epochs.push_back(rec);
    }

    if (!best.empty()) best.restore(*model.net);
    hist.best_weights_digest = model.net->weights_digest();
    return hist;
}

}  // namespace convpred::trainer
