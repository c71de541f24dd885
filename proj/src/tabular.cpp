#include "convpred/tabular.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "convpred/evalcv.hpp"
#include "convpred/trainer.hpp"

namespace convpred::tabular {

using nlohmann::json;

bool is_missing_cell(const std::string& cell) {
    std::string t = lower(trim(cell));
    return t.empty() || t == "na" || t == "nan" || t == "?";
}

std::string FeatureMatrix::manifest_json() const {
    json j = json::array();
    for (size_t i = 0; i < columns.size(); ++i)
        j.push_back({{"name", columns[i]},
                     {"provenance", i < provenance.size() ? provenance[i] : "clinical"}});
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// ClinicalTransform
// ---------------------------------------------------------------------------

ClinicalTransform ClinicalTransform::fit(const RawTable& raw, const std::vector<char>& train_mask,
                                         AuditLog* audit) {
    if (train_mask.size() != raw.keys.size())
        throw DataError("clinical transform: train mask size mismatch");
    ClinicalTransform t;
    for (size_t c = 0; c < raw.columns.size(); ++c) {
        Column col;
        col.name = raw.columns[c];

        std::vector<std::string> train_cells;
        for (size_t r = 0; r < raw.cells.size(); ++r)
            if (train_mask[r] && !is_missing_cell(raw.cells[r][c]))
                train_cells.push_back(trim(raw.cells[r][c]));

        if (train_cells.empty()) {
            col.kind = Column::kDropped;
            if (audit) audit->note("column_dropped", {{"column", col.name},
                                                      {"reason", "entirely missing in training"}});
            t.cols_.push_back(std::move(col));
            continue;
        }

        bool numeric = true;
        std::vector<double> values;
        for (const auto& cell : train_cells) {
            double v;
            if (!parse_double(cell, v)) {
                numeric = false;
                break;
            }
            values.push_back(v);
        }

        if (numeric) {
            col.kind = Column::kNumeric;
            std::sort(values.begin(), values.end());
            size_t n = values.size();
            col.median = (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);

            size_t n_train = 0, n_missing = 0;
            double sum = 0.0;
            std::vector<double> imputed;
            for (size_t r = 0; r < raw.cells.size(); ++r) {
                if (!train_mask[r]) continue;
                ++n_train;
                double v;
                if (is_missing_cell(raw.cells[r][c]) || !parse_double(raw.cells[r][c], v)) {
                    v = col.median;
                    ++n_missing;
                }
                imputed.push_back(v);
                sum += v;
            }
            col.indicator = n_missing > 0;
            col.mean = sum / static_cast<double>(n_train);
            double ss = 0.0;
            for (double v : imputed) ss += (v - col.mean) * (v - col.mean);
            col.stddev = std::sqrt(ss / static_cast<double>(n_train));
            if (col.stddev < 1e-12) col.stddev = 1.0;  // constant column
        } else {
            col.kind = Column::kCategorical;
            std::set<std::string> cats(train_cells.begin(), train_cells.end());
            col.categories.assign(cats.begin(), cats.end());
        }
        t.cols_.push_back(std::move(col));
    }
    return t;
}

FeatureMatrix ClinicalTransform::apply(const RawTable& raw, AuditLog* audit) const {
    if (raw.columns.size() != cols_.size())
        throw DataError("clinical transform: column count mismatch");
    FeatureMatrix out;
    out.keys = raw.keys;
    for (const auto& col : cols_) {
        switch (col.kind) {
            case Column::kNumeric:
                out.columns.push_back(col.name);
                if (col.indicator) out.columns.push_back(col.name + "__missing");
                break;
            case Column::kCategorical:
                for (const auto& cat : col.categories)
                    out.columns.push_back(col.name + "=" + cat);
                break;
            case Column::kDropped:
                break;
        }
    }
    out.provenance.assign(out.columns.size(), "clinical");
    out.X.resize(static_cast<int64_t>(raw.keys.size()), static_cast<int64_t>(out.columns.size()));

    for (size_t r = 0; r < raw.cells.size(); ++r) {
        int64_t f = 0;
        for (size_t c = 0; c < cols_.size(); ++c) {
            const Column& col = cols_[c];
            const std::string& cell = raw.cells[r][c];
            if (col.kind == Column::kDropped) continue;
            if (col.kind == Column::kNumeric) {
                double v;
                bool missing = is_missing_cell(cell) || !parse_double(cell, v);
                if (missing) v = col.median;
                out.X(static_cast<int64_t>(r), f++) = (v - col.mean) / col.stddev;
                if (col.indicator)
                    out.X(static_cast<int64_t>(r), f++) = missing ? 1.0 : 0.0;
            } else {
                std::string val = trim(cell);
                bool found = false;
                for (size_t k = 0; k < col.categories.size(); ++k) {
                    bool hit = !is_missing_cell(cell) && col.categories[k] == val;
                    out.X(static_cast<int64_t>(r), f++) = hit ? 1.0 : 0.0;
                    if (hit) found = true;
                }
                if (!found && !is_missing_cell(cell) && audit)
                    audit->note("unseen_category", {{"column", col.name}, {"value", val}});
            }
        }
    }
    return out;
}

std::string ClinicalTransform::to_json() const {
    json arr = json::array();
    for (const auto& col : cols_) {
        json j;
        j["name"] = col.name;
        j["kind"] = col.kind == Column::kNumeric ? "numeric"
                    : col.kind == Column::kCategorical ? "categorical"
                                                       : "dropped";
        if (col.kind == Column::kNumeric) {
            j["median"] = col.median;
            j["mean"] = col.mean;
            j["stddev"] = col.stddev;
            j["indicator"] = col.indicator;
        } else if (col.kind == Column::kCategorical) {
            j["categories"] = col.categories;
        }
        arr.push_back(j);
    }
    return arr.dump(2);
}

ClinicalTransform ClinicalTransform::from_json(const std::string& text) {
    ClinicalTransform t;
    for (const auto& j : json::parse(text)) {
        Column col;
        col.name = j.at("name").get<std::string>();
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "numeric") {
            col.kind = Column::kNumeric;
            col.median = j.at("median").get<double>();
            col.mean = j.at("mean").get<double>();
            col.stddev = j.at("stddev").get<double>();
            col.indicator = j.at("indicator").get<bool>();
        } else if (kind == "categorical") {
            col.kind = Column::kCategorical;
            col.categories = j.at("categories").get<std::vector<std::string>>();
        } else {
            col.kind = Column::kDropped;
        }
        t.cols_.push_back(std::move(col));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

FeatureMatrix fuse_features(const FeatureMatrix& clinical, const embedding::EmbeddingTable& emb,
                            AuditLog* audit) {
    {
        std::set<Key> seen;
        for (const auto& k : clinical.keys)
            if (!seen.insert(k).second)
                throw DataError("fuse_features: duplicate key " + k.first + "/" +
                                std::to_string(k.second));
        std::set<Key> eseen;
        for (size_t i = 0; i < emb.subject_ids.size(); ++i)
            if (!eseen.insert({emb.subject_ids[i], emb.months[i]}).second)
                throw DataError("fuse_features: duplicate embedding key " + emb.subject_ids[i] +
                                "/" + std::to_string(emb.months[i]));
    }
    std::map<Key, size_t> emb_index;
    for (size_t i = 0; i < emb.subject_ids.size(); ++i)
        emb_index[{emb.subject_ids[i], emb.months[i]}] = i;

    std::vector<size_t> keep;
    for (size_t r = 0; r < clinical.keys.size(); ++r) {
        if (emb_index.count(clinical.keys[r])) {
            keep.push_back(r);
        } else if (audit) {
            audit->note("row_dropped_no_embedding",
                        {{"subject_id", clinical.keys[r].first},
                         {"month", std::to_string(clinical.keys[r].second)}});
        }
    }

    FeatureMatrix out;
    out.columns = clinical.columns;
    out.provenance = clinical.provenance;
    for (int i = 0; i < emb.dim; ++i) {
        out.columns.push_back("e" + std::to_string(i));
        out.provenance.push_back("embedding");
    }
    out.X.resize(static_cast<int64_t>(keep.size()), static_cast<int64_t>(out.columns.size()));
    for (size_t i = 0; i < keep.size(); ++i) {
        size_t r = keep[i];
        out.keys.push_back(clinical.keys[r]);
        int64_t nc = clinical.X.cols();
        out.X.block(static_cast<int64_t>(i), 0, 1, nc) = clinical.X.row(static_cast<int64_t>(r));
        size_t e = emb_index.at(clinical.keys[r]);
        for (int c = 0; c < emb.dim; ++c)
            out.X(static_cast<int64_t>(i), nc + c) = emb.values[e][static_cast<size_t>(c)];
    }
    return out;
}

FeatureMatrix matrix_from_embeddings(const embedding::EmbeddingTable& emb) {
    FeatureMatrix out;
    for (int i = 0; i < emb.dim; ++i) {
        out.columns.push_back("e" + std::to_string(i));
        out.provenance.push_back("embedding");
    }
    out.X.resize(static_cast<int64_t>(emb.values.size()), emb.dim);
    for (size_t r = 0; r < emb.values.size(); ++r) {
        out.keys.push_back({emb.subject_ids[r], emb.months[r]});
        for (int c = 0; c < emb.dim; ++c)
            out.X(static_cast<int64_t>(r), c) = emb.values[r][static_cast<size_t>(c)];
    }
    return out;
}

FeatureMatrix submatrix(const FeatureMatrix& m, const std::vector<size_t>& rows) {
    FeatureMatrix out;
    out.columns = m.columns;
    out.provenance = m.provenance;
    out.X.resize(static_cast<int64_t>(rows.size()), m.X.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        out.keys.push_back(m.keys[rows[i]]);
        out.X.row(static_cast<int64_t>(i)) = m.X.row(static_cast<int64_t>(rows[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Logistic regression (Newton / IRLS)
// ---------------------------------------------------------------------------

LogRegModel fit_logreg(const Eigen::MatrixXd& X, const std::vector<int>& y,
                       const std::vector<double>& sample_weight, double l2_lambda) {
    const int64_t n = X.rows(), d = X.cols();
    if (static_cast<size_t>(n) != y.size() || y.size() != sample_weight.size())
        throw DataError("fit_logreg: size mismatch");

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);  // [intercept, coef]
    Eigen::MatrixXd Xa(n, d + 1);
    Xa.col(0).setOnes();
    Xa.rightCols(d) = X;

    for (int iter = 0; iter < 50; ++iter) {
        Eigen::VectorXd eta = Xa * beta;
        Eigen::VectorXd p(n), s(n), r(n);
        for (int64_t i = 0; i < n; ++i) {
            double pi = 1.0 / (1.0 + std::exp(-eta[i]));
            p[i] = pi;
            s[i] = sample_weight[static_cast<size_t>(i)] * std::max(pi * (1.0 - pi), 1e-10);
            r[i] = sample_weight[static_cast<size_t>(i)] *
                   (pi - static_cast<double>(y[static_cast<size_t>(i)]));
        }
        Eigen::VectorXd grad = Xa.transpose() * r;
        grad.tail(d) += l2_lambda * beta.tail(d);
        if (grad.norm() < 1e-8 * static_cast<double>(n)) break;

        Eigen::MatrixXd H = Xa.transpose() * s.asDiagonal() * Xa;
        for (int64_t j = 1; j <= d; ++j) H(j, j) += l2_lambda;
        H.diagonal().array() += 1e-10;
        Eigen::VectorXd step = H.ldlt().solve(grad);
        beta -= step;
        if (step.norm() < 1e-10) break;
    }

    LogRegModel m;
    m.intercept = beta[0];
    m.coef = beta.tail(d);
    return m;
}

Eigen::VectorXd predict_logreg(const LogRegModel& m, const Eigen::MatrixXd& X) {
    Eigen::VectorXd eta = X * m.coef;
    eta.array() += m.intercept;
    return eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees
// ---------------------------------------------------------------------------

double GbtTree::predict(const Eigen::VectorXd& x) const {
    int node = 0;
    while (nodes[static_cast<size_t>(node)].feature >= 0) {
        const auto& nd = nodes[static_cast<size_t>(node)];
        node = x[nd.feature] < nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<size_t>(node)].value;
}

namespace {

struct TreeBuilder {
    const Eigen::MatrixXd& X;
    const Eigen::VectorXd& grad;
    const Eigen::VectorXd& hess;
    const GbtParams& params;
    GbtTree tree;

    int build(std::vector<int64_t> members, int depth) {
        double g_sum = 0.0, h_sum = 0.0;
        for (int64_t i : members) {
            g_sum += grad[i];
            h_sum += hess[i];
        }

        int best_feature = -1;
        double best_threshold = 0.0, best_gain = 1e-12;
        double parent_score = g_sum * g_sum / (h_sum + params.reg_lambda);

        if (depth < params.max_depth && members.size() >= 2) {
            for (int64_t f = 0; f < X.cols(); ++f) {
                std::vector<int64_t> order = members;
                std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
                    if (X(a, f) != X(b, f)) return X(a, f) < X(b, f);
                    return a < b;
                });
                double gl = 0.0, hl = 0.0;
                for (size_t i = 0; i + 1 < order.size(); ++i) {
                    gl += grad[order[i]];
                    hl += hess[order[i]];
                    if (X(order[i], f) == X(order[i + 1], f)) continue;  // no split between ties
                    double gr = g_sum - gl, hr = h_sum - hl;
                    if (hl < params.min_child_weight || hr < params.min_child_weight) continue;
                    double gain = gl * gl / (hl + params.reg_lambda) +
                                  gr * gr / (hr + params.reg_lambda) - parent_score;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_feature = static_cast<int>(f);
                        best_threshold = 0.5 * (X(order[i], f) + X(order[i + 1], f));
                    }
                }
            }
        }

        int idx = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        if (best_feature < 0) {
            tree.nodes[static_cast<size_t>(idx)].value =
                -g_sum / (h_sum + params.reg_lambda);
            return idx;
        }
        std::vector<int64_t> left, right;
        for (int64_t i : members)
            (X(i, best_feature) < best_threshold ? left : right).push_back(i);
        tree.nodes[static_cast<size_t>(idx)].feature = best_feature;
        tree.nodes[static_cast<size_t>(idx)].threshold = best_threshold;
        int l = build(std::move(left), depth + 1);
        int r = build(std::move(right), depth + 1);
        tree.nodes[static_cast<size_t>(idx)].left = l;
        tree.nodes[static_cast<size_t>(idx)].right = r;
        return idx;
    }
};

}  // namespace

GbtModel fit_gbt(const Eigen::MatrixXd& X, const std::vector<int>& y,
                 const std::vector<double>& sample_weight, const GbtParams& params) {
    const int64_t n = X.rows();
    if (static_cast<size_t>(n) != y.size() || y.size() != sample_weight.size())
        throw DataError("fit_gbt: size mismatch");

    GbtModel model;
    model.params = params;

    double wp = 0.0, wt = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        wt += sample_weight[static_cast<size_t>(i)];
        if (y[static_cast<size_t>(i)] == 1) wp += sample_weight[static_cast<size_t>(i)];
    }
    double prior = std::clamp(wp / wt, 1e-6, 1.0 - 1e-6);
    model.base_score = std::log(prior / (1.0 - prior));

    Eigen::VectorXd f = Eigen::VectorXd::Constant(n, model.base_score);
    std::vector<int64_t> all(static_cast<size_t>(n));
    std::iota(all.begin(), all.end(), int64_t{0});

    for (int t = 0; t < params.n_trees; ++t) {
        Eigen::VectorXd grad(n), hess(n);
        for (int64_t i = 0; i < n; ++i) {
            double p = 1.0 / (1.0 + std::exp(-f[i]));
            double w = sample_weight[static_cast<size_t>(i)];
            grad[i] = w * (p - static_cast<double>(y[static_cast<size_t>(i)]));
            hess[i] = w * std::max(p * (1.0 - p), 1e-10);
        }
        TreeBuilder builder{X, grad, hess, params, {}};
        builder.build(all, 0);
        for (int64_t i = 0; i < n; ++i)
            f[i] += params.learning_rate * builder.tree.predict(X.row(i).transpose());
        model.trees.push_back(std::move(builder.tree));
    }
    return model;
}

Eigen::VectorXd predict_gbt(const GbtModel& m, const Eigen::MatrixXd& X) {
    Eigen::VectorXd f = Eigen::VectorXd::Constant(X.rows(), m.base_score);
    for (const auto& tree : m.trees)
        for (int64_t i = 0; i < X.rows(); ++i) f[i] += m.params.learning_rate * tree.predict(X.row(i).transpose());
    return f.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
}

// ---------------------------------------------------------------------------
// Grid search with inner grouped CV
// ---------------------------------------------------------------------------

TabularModelSpec TabularModelSpec::default_logreg() {
    TabularModelSpec spec;
    spec.kind = "logreg";
    for (double c : {0.01, 0.1, 1.0, 10.0, 100.0}) spec.grid.push_back({{"C", c}});
    return spec;
}

TabularModelSpec TabularModelSpec::default_gbt() {
    TabularModelSpec spec;
    spec.kind = "gbt";
    for (int depth : {2, 3, 4})
        for (int trees : {100, 300})
            for (double lr : {0.05, 0.1})
                spec.grid.push_back({{"depth", static_cast<double>(depth)},
                                     {"trees", static_cast<double>(trees)},
                                     {"learning_rate", lr}});
    return spec;
}

namespace {

std::vector<double> balanced_sample_weights(const std::vector<int>& y) {
    int64_t n0 = 0, n1 = 0;
    for (int v : y) (v == 1 ? n1 : n0)++;
    auto w = trainer::balanced_weights(n0, n1);
    std::vector<double> out(y.size());
    for (size_t i = 0; i < y.size(); ++i) out[i] = y[i] == 1 ? w.w1 : w.w0;
    return out;
}

struct AnyModel {
    std::optional<LogRegModel> logreg;
    std::optional<GbtModel> gbt;
};

AnyModel fit_one(const std::string& kind, const std::map<std::string, double>& params,
                 const Eigen::MatrixXd& X, const std::vector<int>& y,
                 const std::vector<double>& w) {
    AnyModel m;
    if (kind == "logreg") {
        double c = params.at("C");
        m.logreg = fit_logreg(X, y, w, 1.0 / c);
    } else if (kind == "gbt") {
        GbtParams gp;
        gp.max_depth = static_cast<int>(params.at("depth"));
        gp.n_trees = static_cast<int>(params.at("trees"));
        gp.learning_rate = params.at("learning_rate");
        m.gbt = fit_gbt(X, y, w, gp);
    } else {
        throw ConfigError("unknown tabular model kind '" + kind + "'");
    }
    return m;
}

Eigen::VectorXd predict_one(const AnyModel& m, const Eigen::MatrixXd& X) {
    if (m.logreg) return predict_logreg(*m.logreg, X);
    return predict_gbt(*m.gbt, X);
}

}  // namespace

FittedTabular fit_tabular(const TabularModelSpec& spec, const FeatureMatrix& X,
                          const std::vector<int>& y, const std::vector<std::string>& groups,
                          AuditLog* audit) {
    if (spec.grid.empty()) throw ConfigError("fit_tabular: empty hyperparameter grid");
    if (X.keys.size() != y.size() || y.size() != groups.size())
        throw DataError("fit_tabular: size mismatch");
    {
        int64_t n0 = 0, n1 = 0;
        for (int v : y) (v == 1 ? n1 : n0)++;
        if (n0 == 0 || n1 == 0) throw DataError("fit_tabular: single-class training data");
    }

    // inner grouped folds over the training universe
    std::vector<std::string> subject_ids(groups);
    evalcv::FoldPlan inner = evalcv::group_kfold(subject_ids, spec.inner_folds, 0.0, spec.seed);

    double best_auc = -1.0;
    size_t best_idx = 0;
    for (size_t gi = 0; gi < spec.grid.size(); ++gi) {
        std::vector<double> fold_aucs;
        for (const auto& fold : inner.folds) {
            std::vector<size_t> tr, te;
            for (size_t i = 0; i < groups.size(); ++i)
                (fold.test.count(groups[i]) ? te : tr).push_back(i);
            if (tr.empty() || te.empty()) continue;

            std::vector<int> ytr, yte;
            for (size_t i : tr) ytr.push_back(y[i]);
            for (size_t i : te) yte.push_back(y[i]);
            auto single_class = [](const std::vector<int>& v) {
                return std::all_of(v.begin(), v.end(), [&](int a) { return a == v.front(); });
            };
            if (single_class(ytr) || single_class(yte)) {
                if (audit)
                    audit->note("inner_fold_skipped",
                                {{"reason", "single class in inner split"}});
                continue;
            }

            Eigen::MatrixXd Xtr(tr.size(), X.X.cols()), Xte(te.size(), X.X.cols());
            for (size_t i = 0; i < tr.size(); ++i) Xtr.row(static_cast<int64_t>(i)) = X.X.row(static_cast<int64_t>(tr[i]));
            for (size_t i = 0; i < te.size(); ++i) Xte.row(static_cast<int64_t>(i)) = X.X.row(static_cast<int64_t>(te[i]));

            auto model = fit_one(spec.kind, spec.grid[gi], Xtr, ytr,
                                 balanced_sample_weights(ytr));
            Eigen::VectorXd scores = predict_one(model, Xte);
            std::vector<double> sv(scores.data(), scores.data() + scores.size());
            auto auc = metrics::roc_auc(sv, yte);
            if (auc) fold_aucs.push_back(*auc);
        }
        double mean_auc =
            fold_aucs.empty()
                ? -1.0
                : std::accumulate(fold_aucs.begin(), fold_aucs.end(), 0.0) /
                      static_cast<double>(fold_aucs.size());
        if (mean_auc > best_auc) {
            best_auc = mean_auc;
            best_idx = gi;
        }
    }
    if (best_auc < 0.0 && audit)
        audit->note("inner_cv_unscored", {{"fallback", "first grid point"}});

    FittedTabular fitted;
    fitted.kind = spec.kind;
    fitted.chosen_params = spec.grid[best_idx];
    fitted.inner_cv_auc = std::max(best_auc, 0.0);
    fitted.columns = X.columns;
    auto final_model = fit_one(spec.kind, fitted.chosen_params, X.X, y,
                               balanced_sample_weights(y));
    fitted.logreg = final_model.logreg;
    fitted.gbt = final_model.gbt;
    return fitted;
}

Eigen::VectorXd predict_scores(const FittedTabular& model, const FeatureMatrix& X) {
    if (X.columns != model.columns) {
        std::set<std::string> want(model.columns.begin(), model.columns.end());
        std::set<std::string> have(X.columns.begin(), X.columns.end());
        std::string missing, extra;
        for (const auto& c : want)
            if (!have.count(c)) missing += (missing.empty() ? "" : ", ") + c;
        for (const auto& c : have)
            if (!want.count(c)) extra += (extra.empty() ? "" : ", ") + c;
        if (missing.empty() && extra.empty())
            throw DataError("predict_scores: column order differs from the fitted manifest");
        throw DataError("predict_scores: column mismatch (missing: [" + missing + "], extra: [" +
                        extra + "])");
    }
    AnyModel m{model.logreg, model.gbt};
    return predict_one(m, X.X);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string FittedTabular::to_json() const {
    json j;
    j["kind"] = kind;
    j["chosen_params"] = chosen_params;
    j["inner_cv_auc"] = inner_cv_auc;
    j["columns"] = columns;
    if (logreg) {
        json lr;
        lr["intercept"] = logreg->intercept;
        lr["coef"] = std::vector<double>(logreg->coef.data(),
                                         logreg->coef.data() + logreg->coef.size());
        j["logreg"] = lr;
    }
    if (gbt) {
        json g;
        g["base_score"] = gbt->base_score;
        g["learning_rate"] = gbt->params.learning_rate;
        g["max_depth"] = gbt->params.max_depth;
        g["reg_lambda"] = gbt->params.reg_lambda;
        g["min_child_weight"] = gbt->params.min_child_weight;
        json trees = json::array();
        for (const auto& tree : gbt->trees) {
            json nodes = json::array();
            for (const auto& nd : tree.nodes)
                nodes.push_back({{"f", nd.feature},
                                 {"t", nd.threshold},
                                 {"l", nd.left},
                                 {"r", nd.right},
                                 {"v", nd.value}});
            trees.push_back(nodes);
        }
        g["trees"] = trees;
        j["gbt"] = g;
    }
    return j.dump();
}

FittedTabular FittedTabular::from_json(const std::string& text) {
    json j = json::parse(text);
    FittedTabular f;
    f.kind = j.at("kind").get<std::string>();
    f.chosen_params = j.at("chosen_params").get<std::map<std::string, double>>();
    f.inner_cv_auc = j.at("inner_cv_auc").get<double>();
    f.columns = j.at("columns").get<std::vector<std::string>>();
    if (j.contains("logreg")) {
        LogRegModel lr;
        lr.intercept = j["logreg"].at("intercept").get<double>();
        auto coef = j["logreg"].at("coef").get<std::vector<double>>();
        lr.coef = Eigen::Map<Eigen::VectorXd>(coef.data(), static_cast<int64_t>(coef.size()));
        f.logreg = lr;
    }
    if (j.contains("gbt")) {
        GbtModel g;
        g.base_score = j["gbt"].at("base_score").get<double>();
        g.params.learning_rate = j["gbt"].at("learning_rate").get<double>();
        g.params.max_depth = j["gbt"].at("max_depth").get<int>();
        g.params.reg_lambda = j["gbt"].at("reg_lambda").get<double>();
        g.params.min_child_weight = j["gbt"].at("min_child_weight").get<double>();
        for (const auto& jt : j["gbt"].at("trees")) {
            GbtTree tree;
            for (const auto& jn : jt) {
                GbtNode nd;
                nd.feature = jn.at("f").get<int>();
                nd.threshold = jn.at("t").get<double>();
                nd.left = jn.at("l").get<int>();
                nd.right = jn.at("r").get<int>();
                nd.value = jn.at("v").get<double>();
                tree.nodes.push_back(nd);
            }
            g.trees.push_back(std::move(tree));
        }
        f.gbt = g;
    }
    return f;
}

std::string FittedTabular::digest() const { return digest_string(to_json()); }

}  // namespace convpred::tabular
