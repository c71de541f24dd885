#include "convpred/evalcv.hpp"

#include <json.hpp>

#include <algorithm>

#include "convpred/common.hpp"
#include "convpred/nets.hpp"

namespace convpred::evalcv {

using nlohmann::json;

FoldPlan group_kfold(const std::vector<std::string>& subject_ids, int k, double val_fraction,
                     uint64_t seed) {
    if (k < 2) throw ConfigError("group_kfold: k must be >= 2");
    std::vector<std::string> subjects(subject_ids);
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (static_cast<int>(subjects.size()) < k)
        throw DataError("group_kfold: " + std::to_string(subjects.size()) +
                        " subjects cannot fill " + std::to_string(k) + " folds");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("group_kfold: val_fraction must be in [0,1)");

    Rng rng(seed, 0x464f4c44ULL);
    rng.shuffle(subjects);

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.folds.resize(static_cast<size_t>(k));
    for (size_t i = 0; i < subjects.size(); ++i)
        plan.folds[i % static_cast<size_t>(k)].test.insert(subjects[i]);

    for (int f = 0; f < k; ++f) {
        auto& fold = plan.folds[static_cast<size_t>(f)];
        std::vector<std::string> rest;
        for (const auto& s : subjects)
            if (!fold.test.count(s)) rest.push_back(s);
        Rng fold_rng(seed, 0x56414cULL + static_cast<uint64_t>(f));
        fold_rng.shuffle(rest);
        size_t n_val = static_cast<size_t>(val_fraction * static_cast<double>(rest.size()));
        for (size_t i = 0; i < rest.size(); ++i)
            (i < n_val ? fold.val : fold.train).insert(rest[i]);
    }
    return plan;
}

void FoldPlan::check_invariants(const std::vector<std::string>& universe) const {
    std::set<std::string> uni(universe.begin(), universe.end());
    std::set<std::string> seen;
    for (const auto& fold : folds) {
        for (const auto& s : fold.test) {
            if (!seen.insert(s).second)
                throw DataError("fold plan: subject '" + s + "' tested twice");
            if (!uni.count(s)) throw DataError("fold plan: unknown subject '" + s + "'");
        }
        for (const auto& s : fold.train)
            if (fold.val.count(s) || fold.test.count(s))
                throw DataError("fold plan: subject '" + s + "' on two sides of a fold");
        for (const auto& s : fold.val)
            if (fold.test.count(s))
                throw DataError("fold plan: subject '" + s + "' in both val and test");
    }
    if (seen != uni) throw DataError("fold plan: test sets do not cover the subject universe");
}

std::string FoldPlan::to_json() const {
    json j;
    j["k"] = k;
    j["seed"] = seed;
    json arr = json::array();
    for (const auto& fold : folds) {
        json jf;
        jf["train"] = std::vector<std::string>(fold.train.begin(), fold.train.end());
        jf["val"] = std::vector<std::string>(fold.val.begin(), fold.val.end());
        jf["test"] = std::vector<std::string>(fold.test.begin(), fold.test.end());
        arr.push_back(jf);
    }
    j["folds"] = arr;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

void validate_row(const ExperimentRow& row) {
    bool tabular_source = row.data_source == "clinical" || row.data_source == "embedding" ||
                          row.data_source == "clinical+embedding";
    bool imaging_source = row.data_source == "neuroimaging";
    if (!tabular_source && !imaging_source)
        throw ConfigError("unknown data source '" + row.data_source + "'");
    bool tabular_method = row.method == "logreg" || row.method == "gbt";
    bool cnn_method = row.method == "voxcnn" || row.method == "resnet3d";
    if (!tabular_method && !cnn_method)
        throw ConfigError("unknown method '" + row.method + "'");
    if (tabular_source && !tabular_method)
        throw ConfigError("method '" + row.method + "' cannot run on data source '" +
                          row.data_source + "'");
    if (imaging_source && !cnn_method)
        throw ConfigError("method '" + row.method + "' cannot run on data source '" +
                          row.data_source + "'");
}

std::vector<ExperimentRow> default_experiment_rows() {
    return {{"clinical", "logreg"},           {"clinical", "gbt"},
            {"neuroimaging", "voxcnn"},       {"neuroimaging", "resnet3d"},
            {"embedding", "logreg"},          {"embedding", "gbt"},
            {"clinical+embedding", "logreg"}, {"clinical+embedding", "gbt"}};
}

namespace {

struct FoldExamples {
    std::vector<size_t> train;  // indices into dataset->examples (train + val subjects)
    std::vector<size_t> val;
    std::vector<size_t> test;
};

tabular::RawTable raw_from_dataset(const cohort::ConversionDataset& ds) {
    tabular::RawTable raw;
    raw.columns = ds.clinical_columns;
    for (const auto& ex : ds.examples) {
        raw.keys.push_back({ex.subject_id, ex.month});
        raw.cells.push_back(ex.clinical);
    }
    return raw;
}

// rows of a feature matrix partitioned by fold membership of their subject
void split_rows(const tabular::FeatureMatrix& fm, const Fold& fold, std::vector<size_t>* fit_rows,
                std::vector<size_t>* test_rows) {
    for (size_t r = 0; r < fm.keys.size(); ++r) {
        const std::string& subject = fm.keys[r].first;
        if (fold.test.count(subject))
            test_rows->push_back(r);
        else if (fold.train.count(subject) || fold.val.count(subject))
            fit_rows->push_back(r);
    }
}

bool has_both_classes(const std::vector<int>& y) {
    bool c0 = false, c1 = false;
    for (int v : y) (v == 1 ? c1 : c0) = true;
    return c0 && c1;
}

// embedding features aligned to the requested keys; keys missing from the
// table are dropped with an audit note
tabular::FeatureMatrix embedding_matrix_for_keys(const embedding::EmbeddingTable& table,
                                                 const std::vector<tabular::Key>& keys,
                                                 AuditLog* audit) {
    std::map<tabular::Key, size_t> index;
    for (size_t i = 0; i < table.subject_ids.size(); ++i)
        index[{table.subject_ids[i], table.months[i]}] = i;
    tabular::FeatureMatrix out;
    for (int i = 0; i < table.dim; ++i) {
        out.columns.push_back("e" + std::to_string(i));
        out.provenance.push_back("embedding");
    }
    std::vector<size_t> rows;
    for (const auto& k : keys) {
        auto it = index.find(k);
        if (it == index.end()) {
            if (audit)
                audit->note("row_dropped_no_embedding",
                            {{"subject_id", k.first}, {"month", std::to_string(k.second)}});
            continue;
        }
        rows.push_back(it->second);
        out.keys.push_back(k);
    }
    out.X.resize(static_cast<int64_t>(rows.size()), table.dim);
    for (size_t i = 0; i < rows.size(); ++i)
        for (int c = 0; c < table.dim; ++c)
            out.X(static_cast<int64_t>(i), c) = table.values[rows[i]][static_cast<size_t>(c)];
    return out;
}

}  // namespace

ExperimentResult run_experiment(const std::vector<ExperimentRow>& rows,
                                const ExperimentInputs& inputs,
                                const ExperimentSettings& settings) {
    for (const auto& row : rows) validate_row(row);
    if (!inputs.dataset) throw ConfigError("run_experiment: dataset is required");
    const auto& examples = inputs.dataset->examples;
    if (examples.empty()) throw DataError("run_experiment: empty conversion dataset");

    bool needs_embedding = false, needs_volumes = false, needs_clinical = false;
    for (const auto& row : rows) {
        if (row.data_source.find("embedding") != std::string::npos) needs_embedding = true;
        if (row.data_source == "neuroimaging") needs_volumes = true;
        if (row.data_source.find("clinical") != std::string::npos) needs_clinical = true;
    }
    if (needs_volumes && !inputs.volumes)
        throw ConfigError("run_experiment: neuroimaging rows need preprocessed volumes");
    if (needs_embedding && settings.leakage_safe && (!inputs.embed_corpus || !inputs.volumes))
        throw ConfigError(
            "run_experiment: leakage-safe embedding rows need the imaging corpus and volumes");
    if (needs_embedding && !settings.leakage_safe && !inputs.embed_table)
        throw ConfigError(
            "run_experiment: embedding rows need an extracted table when leakage_safe is off");

    ExperimentResult result;

    std::vector<std::string> subjects;
    {
        std::set<std::string> s;
        for (const auto& ex : examples) s.insert(ex.subject_id);
        subjects.assign(s.begin(), s.end());
    }
    std::map<tabular::Key, int> label_by_key;
    std::vector<tabular::Key> example_keys;
    for (const auto& ex : examples) {
        tabular::Key k{ex.subject_id, ex.month};
        example_keys.push_back(k);
        label_by_key[k] = ex.label == cohort::ConversionLabel::Converged ? 1 : 0;
    }
    tabular::RawTable raw = needs_clinical ? raw_from_dataset(*inputs.dataset)
                                           : tabular::RawTable{};

    // per-row accumulation over (repeat, fold)
    std::map<std::string, std::vector<metrics::MetricRecord>> records;
    for (const auto& row : rows) records[row.key()] = {};

    for (int rep = 0; rep < settings.repeats; ++rep) {
        FoldPlan plan = group_kfold(subjects, settings.k, settings.val_fraction,
                                    settings.seed + static_cast<uint64_t>(rep));
        plan.check_invariants(subjects);
        result.plans.push_back(plan);

        for (int f = 0; f < settings.k; ++f) {
            const Fold& fold = plan.folds[static_cast<size_t>(f)];
            uint64_t fold_seed = mix_seed(settings.seed, static_cast<uint64_t>(rep),
                                          static_cast<uint64_t>(f));

            // shared per-fold embedding table
            embedding::EmbeddingTable fold_table;
            const embedding::EmbeddingTable* emb_table = nullptr;
            if (needs_embedding) {
                if (settings.leakage_safe) {
                    std::vector<embedding::CorpusSample> corpus;
                    for (const auto& cs : *inputs.embed_corpus)
                        if (!fold.test.count(cs.subject_id)) corpus.push_back(cs);
                    nets::NetConfig ecfg = settings.embed_cfg;
                    ecfg.seed = mix_seed(fold_seed, 0xe0);
                    auto emb_model = nets::build_embedding_net(ecfg);
                    trainer::TrainConfig etrain = settings.embed_train;
                    etrain.seed = mix_seed(fold_seed, 0xe1);
                    embedding::train_embedding(emb_model, corpus, etrain, settings.histloss,
                                               settings.embed_holdout_fraction);
                    // embed the conversion dataset (test subjects included:
                    // extraction is inference, training never saw them)
                    std::vector<embedding::CorpusSample> to_embed;
                    for (const auto& ex : examples) {
                        auto it = inputs.volumes->find({ex.subject_id, ex.month});
                        if (it == inputs.volumes->end()) continue;
                        embedding::CorpusSample cs;
                        cs.subject_id = ex.subject_id;
                        cs.month = ex.month;
                        cs.volume = it->second;
                        to_embed.push_back(cs);
                    }
                    fold_table = embedding::extract_embeddings(emb_model, to_embed,
                                                               settings.score_batch_size);
                    emb_table = &fold_table;
                } else {
                    emb_table = inputs.embed_table;
                }
            }

            // shared per-fold clinical features (fitted on train+val rows)
            tabular::FeatureMatrix clinical_fm;
            if (needs_clinical) {
                std::vector<char> fit_mask(raw.keys.size(), 0);
                for (size_t r = 0; r < raw.keys.size(); ++r) {
                    const std::string& subject = raw.keys[r].first;
                    if (fold.train.count(subject) || fold.val.count(subject)) fit_mask[r] = 1;
                }
                auto transform = tabular::ClinicalTransform::fit(raw, fit_mask, &result.audit);
                clinical_fm = transform.apply(raw, &result.audit);
            }

            for (const auto& row : rows) {
                bool is_cnn = row.data_source == "neuroimaging";
                metrics::MetricRecord rec;
                std::string digest;

                if (is_cnn) {
                    std::vector<trainer::TrainSample> train, val, test;
                    for (const auto& ex : examples) {
                        auto it = inputs.volumes->find({ex.subject_id, ex.month});
                        if (it == inputs.volumes->end()) {
                            result.audit.note("sample_dropped_no_volume",
                                              {{"subject_id", ex.subject_id},
                                               {"month", std::to_string(ex.month)}});
                            continue;
                        }
                        trainer::TrainSample s;
                        s.subject_id = ex.subject_id;
                        s.month = ex.month;
                        s.label = ex.label == cohort::ConversionLabel::Converged ? 1 : 0;
                        s.volume = it->second;
                        if (fold.test.count(ex.subject_id))
                            test.push_back(s);
                        else if (fold.val.count(ex.subject_id))
                            val.push_back(s);
                        else
                            train.push_back(s);
                    }
                    std::vector<int> ytrain;
                    for (const auto& s : train) ytrain.push_back(s.label);
                    if (test.empty() || !has_both_classes(ytrain)) {
                        result.audit.note("fold_skipped",
                                          {{"row", row.key()},
                                           {"repeat", std::to_string(rep)},
                                           {"fold", std::to_string(f)},
                                           {"reason", "degenerate outer split"}});
                        continue;
                    }

                    nets::NetConfig ncfg =
                        row.method == "voxcnn" ? settings.voxcnn_cfg : settings.resnet_cfg;
                    ncfg.arch = row.method;
                    ncfg.seed = mix_seed(fold_seed, row.method == "voxcnn" ? 0xc0 : 0xc1);
                    auto model = nets::build_model(row.method, ncfg);
                    trainer::TrainConfig tcfg = settings.cnn_train;
                    tcfg.batch_size = row.method == "voxcnn" ? settings.voxcnn_batch_size
                                                             : settings.resnet_batch_size;
                    tcfg.seed = mix_seed(fold_seed, 0xc2);
                    trainer::train_classifier(model, train, val, tcfg);
                    digest = model.net->weights_digest();

                    auto scores = trainer::score_samples(model, test, tcfg.batch_size);
                    std::vector<int> ytest;
                    for (const auto& s : test) ytest.push_back(s.label);
                    rec = metrics::compute_metrics(scores, ytest, settings.threshold);
                    for (size_t i = 0; i < test.size(); ++i)
                        result.scores.push_back({row.data_source, row.method,
                                                 test[i].subject_id, test[i].month, rep, f,
                                                 test[i].label, scores[i]});
                } else {
                    tabular::FeatureMatrix fm;
                    if (row.data_source == "clinical") {
                        fm = clinical_fm;
                    } else if (row.data_source == "embedding") {
                        fm = embedding_matrix_for_keys(*emb_table, example_keys, &result.audit);
                    } else {
                        fm = tabular::fuse_features(clinical_fm, *emb_table, &result.audit);
                    }

                    std::vector<size_t> fit_rows, test_rows;
                    split_rows(fm, fold, &fit_rows, &test_rows);
                    std::vector<int> yfit, ytest;
                    std::vector<std::string> groups;
                    for (size_t r : fit_rows) {
                        yfit.push_back(label_by_key.at(fm.keys[r]));
                        groups.push_back(fm.keys[r].first);
                    }
                    for (size_t r : test_rows) ytest.push_back(label_by_key.at(fm.keys[r]));
                    if (test_rows.empty() || !has_both_classes(yfit)) {
                        result.audit.note("fold_skipped",
                                          {{"row", row.key()},
                                           {"repeat", std::to_string(rep)},
                                           {"fold", std::to_string(f)},
                                           {"reason", "degenerate outer split"}});
                        continue;
                    }

                    auto Xfit = tabular::submatrix(fm, fit_rows);
                    auto Xtest = tabular::submatrix(fm, test_rows);
                    const auto& spec =
                        row.method == "logreg" ? settings.logreg_spec : settings.gbt_spec;
                    auto spec_seeded = spec;
                    spec_seeded.seed = mix_seed(fold_seed, 0x7b);
                    auto fitted =
                        tabular::fit_tabular(spec_seeded, Xfit, yfit, groups, &result.audit);
                    digest = fitted.digest();

                    Eigen::VectorXd s = tabular::predict_scores(fitted, Xtest);
                    std::vector<double> scores(s.data(), s.data() + s.size());
                    rec = metrics::compute_metrics(scores, ytest, settings.threshold);
                    for (size_t i = 0; i < test_rows.size(); ++i)
                        result.scores.push_back({row.data_source, row.method,
                                                 fm.keys[test_rows[i]].first,
                                                 fm.keys[test_rows[i]].second, rep, f,
                                                 ytest[i], scores[i]});
                }

                records[row.key()].push_back(rec);
                result.model_digests[row.key()].push_back(digest);
            }
        }
    }

    for (const auto& row : rows) {
        const auto& recs = records[row.key()];
        if (recs.empty())
            throw DataError("run_experiment: no scorable folds for row " + row.key());
        result.reports.push_back(metrics::aggregate(row.data_source, row.method, recs));
    }
    return result;
}

}  // namespace convpred::evalcv
