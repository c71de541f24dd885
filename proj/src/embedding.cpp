#include "convpred/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "convpred/csv.hpp"

namespace convpred::embedding {

double histogram_loss(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                      const std::vector<std::string>& subject_ids, const HistLossConfig& cfg,
                      Eigen::MatrixXd* grad) {
    const int n = static_cast<int>(embeddings.rows());
    if (static_cast<size_t>(n) != labels.size())
        throw DataError("histogram_loss: labels size mismatch");
    if (!subject_ids.empty() && subject_ids.size() != static_cast<size_t>(n))
        throw DataError("histogram_loss: subject_ids size mismatch");
    const int bins = cfg.n_bins;
    if (bins < 2) throw ConfigError("histogram_loss: n_bins must be >= 2");
    const double delta = 2.0 / (bins - 1);

    Eigen::MatrixXd gram = embeddings * embeddings.transpose();

    // pair kind: +1 matching, -1 non-matching, 0 skipped (same subject,
    // different label)
    auto pair_kind = [&](int i, int j) -> int {
        if (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)]) return +1;
        if (!subject_ids.empty() &&
            subject_ids[static_cast<size_t>(i)] == subject_ids[static_cast<size_t>(j)])
            return 0;
        return -1;
    };

    Eigen::VectorXd hpos = Eigen::VectorXd::Zero(bins);
    Eigen::VectorXd hneg = Eigen::VectorXd::Zero(bins);
    int64_t npos = 0, nneg = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            int kind = pair_kind(i, j);
            if (kind == 0) continue;
            double s = std::clamp(gram(i, j), -1.0, 1.0);
            double u = (s + 1.0) / delta;
            int r = std::min(static_cast<int>(std::floor(u)), bins - 2);
            double w_hi = u - r;
            auto& h = kind > 0 ? hpos : hneg;
            h[r] += 1.0 - w_hi;
            h[r + 1] += w_hi;
            (kind > 0 ? npos : nneg)++;
        }
    if (npos == 0) throw DataError("histogram_loss: batch has no matching pairs");
    if (nneg == 0) throw DataError("histogram_loss: batch has no non-matching pairs");
    hpos /= static_cast<double>(npos);
    hneg /= static_cast<double>(nneg);

    // phi_r = sum_{q<=r} hpos_q; psi_r = sum_{q>=r} hneg_q
    Eigen::VectorXd phi(bins), psi(bins);
    double acc = 0.0;
    for (int r = 0; r < bins; ++r) {
        acc += hpos[r];
        phi[r] = acc;
    }
    acc = 0.0;
    for (int r = bins - 1; r >= 0; --r) {
        acc += hneg[r];
        psi[r] = acc;
    }

    double loss = hneg.dot(phi);

    if (grad) {
        // d(loss)/d(s_pair): matching pairs move mass across psi, non-matching
        // across phi; triangular weights make both piecewise linear in s.
        Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                int kind = pair_kind(i, j);
                if (kind == 0) continue;
                double s_raw = gram(i, j);
                if (s_raw <= -1.0 || s_raw >= 1.0) continue;  // clamped: flat
                double u = (s_raw + 1.0) / delta;
                int r = std::min(static_cast<int>(std::floor(u)), bins - 2);
                double c;
                if (kind > 0)
                    c = (psi[r + 1] - psi[r]) / (delta * static_cast<double>(npos));
                else
                    c = (phi[r + 1] - phi[r]) / (delta * static_cast<double>(nneg));
                coeff(i, j) = c;
                coeff(j, i) = c;
            }
        *grad = coeff * embeddings;
    }
    return loss;
}

namespace {

// Round-robin over shuffled per-class queues; every batch takes at least two
// samples from each of at least two classes. A cross-label pair only counts
// as non-matching when the subjects differ, so batches are patched when all
// drawn samples happen to share one subject.
class BalancedBatchSampler {
public:
    BalancedBatchSampler(const std::vector<int>& labels, const std::vector<std::string>& subjects,
                         const std::vector<size_t>& pool, int batch_size, Rng& rng)
        : labels_(labels), subjects_(subjects), batch_size_(std::max(batch_size, 4)) {
        std::map<int, std::vector<size_t>> by_class;
        for (size_t idx : pool) by_class[labels[idx]].push_back(idx);
        for (auto& [label, members] : by_class) {
            if (members.size() < 2) continue;  // cannot form a matching pair
            rng.shuffle(members);
            classes_.push_back(label);
            queues_.push_back(std::move(members));
        }
        if (classes_.size() < 2)
            throw DataError("embedding sampler: need at least two classes with two samples each");
        n_batches_ = static_cast<int>((pool.size() + static_cast<size_t>(batch_size_) - 1) /
                                      static_cast<size_t>(batch_size_));
        cursors_.assign(queues_.size(), 0);
    }

    int n_batches() const { return n_batches_; }

    std::vector<size_t> batch(int b) {
        // two classes per batch, rotating with the batch index
        size_t c1 = static_cast<size_t>(b) % classes_.size();
        size_t c2 = (static_cast<size_t>(b) + 1) % classes_.size();
        std::vector<size_t> out;
        int half = batch_size_ / 2;
        for (int i = 0; i < half; ++i) out.push_back(next_from(c1));
        for (int i = 0; i < batch_size_ - half; ++i) out.push_back(next_from(c2));

        if (!has_cross_subject_negative(out)) {
            // every drawn sample shares one subject; swap in the first
            // sample from either queue owned by someone else
            const std::string& lone = subjects_[out.front()];
            for (size_t qi : {c2, c1}) {
                for (size_t idx : queues_[qi]) {
                    if (subjects_[idx] != lone) {
                        out.back() = idx;
                        if (has_cross_subject_negative(out)) return out;
                    }
                }
            }
            throw DataError(
                "embedding sampler: pool cannot form a cross-subject non-matching pair");
        }
        return out;
    }

private:
    bool has_cross_subject_negative(const std::vector<size_t>& batch) const {
        for (size_t a = 0; a < batch.size(); ++a)
            for (size_t b = a + 1; b < batch.size(); ++b)
                if (labels_[batch[a]] != labels_[batch[b]] &&
                    subjects_[batch[a]] != subjects_[batch[b]])
                    return true;
        return false;
    }

    size_t next_from(size_t qi) {
        auto& q = queues_[qi];
        size_t idx = q[cursors_[qi] % q.size()];
        cursors_[qi]++;
        return idx;
    }

    const std::vector<int>& labels_;
    const std::vector<std::string>& subjects_;
    int batch_size_;
    int n_batches_ = 0;
    std::vector<int> classes_;
    std::vector<std::vector<size_t>> queues_;
    std::vector<size_t> cursors_;
};

Eigen::MatrixXd embed_batch(nets::ModelHandle& model, const std::vector<CorpusSample>& corpus,
                            const std::vector<size_t>& idx, bool training) {
    std::vector<const volumes::Volume*> vols;
    vols.reserve(idx.size());
    for (size_t i : idx) vols.push_back(corpus[i].volume);
    nn::Tensor out = model.forward(trainer::make_batch(vols), training);
    Eigen::MatrixXd e(static_cast<int>(idx.size()), out.dim(1));
    for (int r = 0; r < e.rows(); ++r)
        for (int c = 0; c < e.cols(); ++c)
            e(r, c) = out.data[static_cast<size_t>(r) * out.dim(1) + static_cast<size_t>(c)];
    return e;
}

double holdout_histogram_loss(nets::ModelHandle& model, const std::vector<CorpusSample>& corpus,
                              const std::vector<size_t>& idx, const HistLossConfig& hcfg,
                              int batch_size) {
    // embed in chunks, evaluate the loss over the full holdout pair set
    Eigen::MatrixXd all(static_cast<int>(idx.size()), 0);
    std::vector<int> labels;
    std::vector<std::string> subjects;
    int row = 0;
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(idx.size(), start + static_cast<size_t>(batch_size));
        std::vector<size_t> chunk(idx.begin() + static_cast<int64_t>(start),
                                  idx.begin() + static_cast<int64_t>(end));
        Eigen::MatrixXd e = embed_batch(model, corpus, chunk, false);
        if (all.cols() == 0) all.resize(static_cast<int>(idx.size()), e.cols());
        all.middleRows(row, e.rows()) = e;
        row += static_cast<int>(e.rows());
    }
    for (size_t i : idx) {
        labels.push_back(corpus[i].class_label);
        subjects.push_back(corpus[i].subject_id);
    }
    return histogram_loss(all, labels, subjects, hcfg, nullptr);
}

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

std::string EmbeddingTrainHistory::to_csv() const {
    std::ostringstream os;
    os << "epoch,lr,train_loss,holdout_loss,is_best\n";
    for (const auto& r : epochs)
        os << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.holdout_loss << ","
           << (r.epoch == best_epoch ? 1 : 0) << "\n";
    return os.str();
}

EmbeddingTrainHistory train_embedding(nets::ModelHandle& model,
                                      const std::vector<CorpusSample>& corpus,
                                      const trainer::TrainConfig& tcfg,
                                      const HistLossConfig& hcfg, double holdout_fraction) {
    trainer::validate_train_config(tcfg);
    if (corpus.empty()) throw DataError("train_embedding: empty corpus");
    std::set<int> distinct;
    for (const auto& s : corpus) distinct.insert(s.class_label);
    if (distinct.size() < 2)
        throw DataError("train_embedding: corpus has a single diagnosis class");

    // subject-level holdout for monitoring
    std::set<std::string> subject_set;
    for (const auto& s : corpus) subject_set.insert(s.subject_id);
    std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
    Rng holdout_rng(tcfg.seed, 0x484f4c44ULL);
    holdout_rng.shuffle(subjects);
    size_t n_holdout = static_cast<size_t>(std::floor(holdout_fraction *
                                                      static_cast<double>(subjects.size())));
    std::set<std::string> holdout_subjects(subjects.begin(),
                                           subjects.begin() + static_cast<int64_t>(n_holdout));

    std::vector<size_t> train_idx, holdout_idx;
    for (size_t i = 0; i < corpus.size(); ++i)
        (holdout_subjects.count(corpus[i].subject_id) ? holdout_idx : train_idx).push_back(i);

    // a split is monitorable only if it can form both pair kinds; matching
    // pairs may share a subject, non-matching pairs must not
    auto pairs_ok = [&](const std::vector<size_t>& idx) {
        bool matching = false, non_matching = false;
        for (size_t a = 0; a < idx.size() && !(matching && non_matching); ++a)
            for (size_t b = a + 1; b < idx.size(); ++b) {
                const auto& sa = corpus[idx[a]];
                const auto& sb = corpus[idx[b]];
                if (sa.class_label == sb.class_label)
                    matching = true;
                else if (sa.subject_id != sb.subject_id)
                    non_matching = true;
            }
        return matching && non_matching;
    };
    bool monitor_holdout = !holdout_idx.empty() && pairs_ok(holdout_idx);
    if (!pairs_ok(train_idx))
        throw DataError("train_embedding: training split cannot form matching and non-matching pairs");

    nn::NesterovSgd opt(tcfg.momentum, tcfg.weight_decay);
    auto params = model.net->params();

    EmbeddingTrainHistory hist;
    hist.holdout_subjects.assign(holdout_subjects.begin(), holdout_subjects.end());
    WeightSnapshot best;
    double best_loss = std::numeric_limits<double>::infinity();

    std::vector<int> all_labels(corpus.size());
    std::vector<std::string> all_subjects(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        all_labels[i] = corpus[i].class_label;
        all_subjects[i] = corpus[i].subject_id;
    }

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        double lr = trainer::lr_schedule(epoch, tcfg);
        Rng epoch_rng(tcfg.seed, 0x53414d50ULL + static_cast<uint64_t>(epoch));
        BalancedBatchSampler sampler(all_labels, all_subjects, train_idx, tcfg.batch_size,
                                     epoch_rng);

        double loss_sum = 0.0;
        for (int b = 0; b < sampler.n_batches(); ++b) {
            auto idx = sampler.batch(b);
            Eigen::MatrixXd emb = embed_batch(model, corpus, idx, true);
            std::vector<int> labels;
            std::vector<std::string> subs;
            for (size_t i : idx) {
                labels.push_back(corpus[i].class_label);
                subs.push_back(corpus[i].subject_id);
            }
            Eigen::MatrixXd dEmb;
            double loss = histogram_loss(emb, labels, subs, hcfg, &dEmb);
            if (!std::isfinite(loss))
                throw DataError("train_embedding: non-finite loss at epoch " +
                                std::to_string(epoch) + ", batch " + std::to_string(b));
            loss_sum += loss;

            nn::Tensor grad({static_cast<int>(idx.size()), static_cast<int>(dEmb.cols())});
            for (int r = 0; r < dEmb.rows(); ++r)
                for (int c = 0; c < dEmb.cols(); ++c)
                    grad.data[static_cast<size_t>(r) * static_cast<size_t>(dEmb.cols()) +
                              static_cast<size_t>(c)] = static_cast<float>(dEmb(r, c));
            nn::NesterovSgd::zero_grad(params);
            model.net->backward(grad);
            opt.step(params, lr);
        }

        EmbeddingEpoch rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / std::max(1, sampler.n_batches());
        rec.holdout_loss = monitor_holdout
                               ? holdout_histogram_loss(model, corpus, holdout_idx, hcfg,
                                                        tcfg.batch_size)
                               : rec.train_loss;
        if (rec.holdout_loss < best_loss) {
            best_loss = rec.holdout_loss;
            hist.best_epoch = epoch;
            best.capture(*model.net);
        }
        hist.epochs.push_back(rec);
    }

    if (!best.empty()) best.restore(*model.net);
    hist.best_weights_digest = model.net->weights_digest();
    return hist;
}

int EmbeddingTable::find(const std::string& subject_id, int month) const {
    for (size_t i = 0; i < subject_ids.size(); ++i)
        if (subject_ids[i] == subject_id && months[i] == month) return static_cast<int>(i);
    return -1;
}

std::string EmbeddingTable::to_csv() const {
    CsvTable t;
    t.header = {"subject_id", "month"};
    for (int i = 0; i < dim; ++i) t.header.push_back("e" + std::to_string(i));
    for (size_t r = 0; r < values.size(); ++r) {
        std::vector<std::string> row = {subject_ids[r], std::to_string(months[r])};
        for (float v : values[r]) {
            std::ostringstream os;
            os.precision(9);
            os << v;
            row.push_back(os.str());
        }
        t.rows.push_back(std::move(row));
    }
    return convpred::to_csv(t);
}

EmbeddingTable EmbeddingTable::from_csv_text(const std::string& text) {
    CsvTable t = parse_csv(text);
    int c_subject = t.require_column("subject_id");
    int c_month = t.require_column("month");
    EmbeddingTable out;
    out.dim = static_cast<int>(t.header.size()) - 2;
    if (out.dim < 1) throw DataError("embedding table has no feature columns");
    for (const auto& row : t.rows) {
        out.subject_ids.push_back(row[static_cast<size_t>(c_subject)]);
        long long m;
        if (!parse_int(row[static_cast<size_t>(c_month)], m))
            throw DataError("embedding table: bad month '" + row[static_cast<size_t>(c_month)] + "'");
        out.months.push_back(static_cast<int>(m));
        std::vector<float> vals;
        for (size_t c = 0; c < t.header.size(); ++c) {
            if (static_cast<int>(c) == c_subject || static_cast<int>(c) == c_month) continue;
            double v;
            if (!parse_double(row[c], v))
                throw DataError("embedding table: bad value '" + row[c] + "'");
            vals.push_back(static_cast<float>(v));
        }
        out.values.push_back(std::move(vals));
    }
    return out;
}

EmbeddingTable extract_embeddings(const nets::ModelHandle& model,
                                  const std::vector<CorpusSample>& samples, int batch_size) {
    EmbeddingTable out;
    out.dim = model.cfg.embedding_dim;
    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
        std::vector<const volumes::Volume*> vols;
        for (size_t i = start; i < end; ++i) vols.push_back(samples[i].volume);
        nn::Tensor e = model.forward(trainer::make_batch(vols), false);
        if (e.dim(1) != out.dim)
            throw DataError("extract_embeddings: model emits dim " + std::to_string(e.dim(1)));
        for (size_t i = start; i < end; ++i) {
            out.subject_ids.push_back(samples[i].subject_id);
            out.months.push_back(samples[i].month);
            std::vector<float> row(static_cast<size_t>(out.dim));
            for (int c = 0; c < out.dim; ++c)
                row[static_cast<size_t>(c)] =
                    e.data[(i - start) * static_cast<size_t>(out.dim) + static_cast<size_t>(c)];
            out.values.push_back(std::move(row));
        }
    }
    return out;
}

}  // namespace convpred::embedding
