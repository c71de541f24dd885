#include "convpred/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include "convpred/common.hpp"
#include "convpred/nifti.hpp"

namespace convpred::pipeline {

using nlohmann::json;

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::filesystem::path work(const config::ExperimentConfig& cfg) { return cfg.work_dir(); }

struct VisitMeta {
    std::string subject_id;
    int month = 0;
    cohort::Diagnosis diagnosis = cohort::Diagnosis::MCI;
};

std::vector<VisitMeta> load_visit_meta(const std::filesystem::path& visits_csv) {
    CsvTable t = read_csv(visits_csv);
    int c_subj = t.require_column("subject_id");
    int c_month = t.require_column("month");
    int c_diag = t.require_column("diagnosis");
    std::vector<VisitMeta> out;
    for (const auto& row : t.rows) {
        VisitMeta m;
        m.subject_id = row[static_cast<size_t>(c_subj)];
        long long mm;
        if (!parse_int(row[static_cast<size_t>(c_month)], mm))
            throw DataError("bad month in visit table: " + row[static_cast<size_t>(c_month)]);
        m.month = static_cast<int>(mm);
        m.diagnosis = cohort::parse_diagnosis(row[static_cast<size_t>(c_diag)]);
        out.push_back(std::move(m));
    }
    return out;
}

// preprocessed volumes, loaded once; map nodes give stable addresses
struct VolumeStore {
    std::map<tabular::Key, volumes::Volume> store;

    std::map<tabular::Key, const volumes::Volume*> index() const {
        std::map<tabular::Key, const volumes::Volume*> out;
        for (const auto& [k, v] : store) out[k] = &v;
        return out;
    }
    std::array<int, 3> shape() const {
        if (store.empty()) throw DataError("no preprocessed volumes loaded");
        return store.begin()->second.meta.shape;
    }
};

VolumeStore load_prep_volumes(const config::ExperimentConfig& cfg) {
    auto manifest_path = prep_manifest_path(cfg);
    if (!std::filesystem::exists(manifest_path))
        throw DataError("preprocessed manifest not found (run `preprocess` first): " +
                        manifest_path.string());
    CsvTable t = read_csv(manifest_path);
    int c_subj = t.require_column("subject_id");
    int c_month = t.require_column("month");
    int c_out = t.require_column("output_path");
    int c_status = t.require_column("status");
    VolumeStore vs;
    auto base = manifest_path.parent_path();
    for (const auto& row : t.rows) {
        if (row[static_cast<size_t>(c_status)] != "ok") continue;
        long long m;
        parse_int(row[static_cast<size_t>(c_month)], m);
        std::filesystem::path p = row[static_cast<size_t>(c_out)];
        if (p.is_relative()) p = base / p;
        vs.store[{row[static_cast<size_t>(c_subj)], static_cast<int>(m)}] =
            nifti::read_volume(p);
    }
    if (vs.store.empty()) throw DataError("no preprocessed volumes with status ok");
    return vs;
}

// {0,0,0} input shapes resolve to the actual preprocessed shape
void resolve_input_shape(nets::NetConfig& ncfg, std::array<int, 3> actual) {
    if (ncfg.input_shape == std::array<int, 3>{0, 0, 0}) {
        ncfg.input_shape = actual;
        return;
    }
    if (ncfg.input_shape != actual)
        throw ConfigError("configured input shape (" + std::to_string(ncfg.input_shape[0]) + "," +
                          std::to_string(ncfg.input_shape[1]) + "," +
                          std::to_string(ncfg.input_shape[2]) + ") does not match volumes (" +
                          std::to_string(actual[0]) + "," + std::to_string(actual[1]) + "," +
                          std::to_string(actual[2]) + ")");
}

cohort::ConversionDataset load_dataset(const config::ExperimentConfig& cfg) {
    auto path = work(cfg) / "cohort" / "examples.json";
    if (!std::filesystem::exists(path))
        throw DataError("cohort dataset not found (run `build-cohort` first): " + path.string());
    return cohort::dataset_from_json(read_text_file(path));
}

std::vector<embedding::CorpusSample> build_corpus(
    const config::ExperimentConfig& cfg, const VolumeStore& vs,
    const std::map<tabular::Key, const volumes::Volume*>& index, AuditLog* audit) {
    auto visits = load_visit_meta(cfg.paths.visit_table);
    std::vector<embedding::CorpusSample> corpus;
    for (const auto& v : visits) {
        auto it = index.find({v.subject_id, v.month});
        if (it == index.end()) {
            if (audit)
                audit->note("corpus_visit_skipped", {{"subject_id", v.subject_id},
                                                     {"month", std::to_string(v.month)},
                                                     {"reason", "no preprocessed volume"}});
            continue;
        }
        embedding::CorpusSample cs;
        cs.subject_id = v.subject_id;
        cs.month = v.month;
        cs.class_label = static_cast<int>(v.diagnosis);
        cs.volume = it->second;
        corpus.push_back(std::move(cs));
    }
    (void)vs;
    return corpus;
}

std::string provenance_sidecar(const config::ExperimentConfig& cfg, uint64_t seed,
                               const std::string& extra_key = "", const json& extra = {}) {
    json j;
    j["seed"] = seed;
    j["schema_version"] = cfg.schema_version;
    if (std::filesystem::exists(prep_manifest_path(cfg)))
        j["prep_manifest_digest"] = digest_file(prep_manifest_path(cfg));
    if (const char* env = std::getenv("CONVPRED_GIT_HASH"); env && *env)
        j["git_hash"] = env;
    if (!extra_key.empty()) j[extra_key] = extra;
    return j.dump(2);
}

}  // namespace

std::filesystem::path prep_manifest_path(const config::ExperimentConfig& cfg) {
    return work(cfg) / "prep" / "manifest.csv";
}
std::filesystem::path embeddings_csv_path(const config::ExperimentConfig& cfg) {
    return work(cfg) / "embedding" / "embeddings.csv";
}
std::filesystem::path results_csv_path(const config::ExperimentConfig& cfg) {
    return work(cfg) / "results" / "results.csv";
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void run_synth(const synthgen::SynthConfig& synth_cfg, const std::filesystem::path& out_dir) {
    auto generated = synthgen::generate_cohort(synth_cfg);
    synthgen::write_workspace(generated, out_dir);

    // ready-to-run desk-scale config alongside the data
    config::ExperimentConfig cfg;
    cfg.paths.visit_table = "visits.csv";
    cfg.paths.volume_manifest = "manifest.csv";
    cfg.paths.work_dir = ".";
    cfg.synth = synth_cfg;

    cfg.voxcnn.arch = "voxcnn";
    cfg.voxcnn.input_shape = {0, 0, 0};
    cfg.voxcnn.voxcnn.blocks = 2;
    cfg.voxcnn.voxcnn.convs_per_block = 1;
    cfg.voxcnn.voxcnn.base_channels = 4;
    cfg.voxcnn.voxcnn.pool_schedule = {1, 2};
    cfg.voxcnn.voxcnn.fc_widths = {16, 8};

    cfg.resnet3d.arch = "resnet3d";
    cfg.resnet3d.input_shape = {0, 0, 0};
    cfg.resnet3d.resnet.n_res_blocks = 2;
    cfg.resnet3d.resnet.channel_plan = {8, 8};
    cfg.resnet3d.resnet.stem_channels = {8};
    cfg.resnet3d.resnet.final_pool = 2;
    cfg.resnet3d.resnet.fc_hidden = 16;

    cfg.embedding_net = cfg.resnet3d;
    cfg.embedding_net.embedding_dim = 64;

    cfg.cnn_train.epochs = 2;
    cfg.cnn_train.lr_drop_epochs = {};
    cfg.voxcnn_batch_size = 16;
    cfg.resnet_batch_size = 16;
    cfg.embed_train.epochs = 3;
    cfg.embed_train.lr_drop_epochs = {};
    cfg.embed_train.batch_size = 16;
    cfg.embed_train.lr0 = 5e-3;
    cfg.cv.k = 5;
    cfg.viz.perplexity = 12.0;

    write_text_file(out_dir / "config.json", config::config_to_json(cfg));
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

void run_preprocess(const config::ExperimentConfig& cfg) {
    CsvTable manifest = read_csv(cfg.paths.volume_manifest);
    int c_subj = manifest.require_column("subject_id");
    int c_month = manifest.require_column("month");
    int c_in = manifest.require_column("input_path");
    auto base = std::filesystem::path(cfg.paths.volume_manifest).parent_path();

    AuditLog audit;
    struct Item {
        std::string subject;
        int month;
        volumes::Volume ras;
    };
    std::vector<Item> items;
    std::vector<volumes::BoundingBox> boxes;
    for (const auto& row : manifest.rows) {
        Item item;
        item.subject = row[static_cast<size_t>(c_subj)];
        long long m;
        if (!parse_int(row[static_cast<size_t>(c_month)], m))
            throw DataError("bad month in manifest: " + row[static_cast<size_t>(c_month)]);
        item.month = static_cast<int>(m);
        std::filesystem::path in_path = row[static_cast<size_t>(c_in)];
        if (in_path.is_relative()) in_path = base / in_path;
        item.ras = volumes::reorient_to_ras(nifti::read_volume(in_path));
        boxes.push_back(volumes::brain_bbox(item.ras, static_cast<float>(cfg.preprocess.threshold)));
        items.push_back(std::move(item));
    }
    if (items.empty()) throw DataError("empty volume manifest");
    auto box = volumes::global_bbox(boxes);

    volumes::PreprocessOptions opts;
    opts.threshold = static_cast<float>(cfg.preprocess.threshold);
    opts.smooth_sigma = cfg.preprocess.smooth_sigma;
    opts.normalize = cfg.preprocess.normalize;

    auto prep_dir = work(cfg) / "prep";
    ensure_dir(prep_dir / "volumes");
    CsvTable out_manifest;
    out_manifest.header = {"subject_id", "month", "input_path", "output_path", "status"};
    std::array<int, 3> out_shape{0, 0, 0};
    for (size_t i = 0; i < items.size(); ++i) {
        auto prep = volumes::preprocess_volume(items[i].ras, box, opts, &audit);
        if (i == 0) {
            out_shape = prep.meta.shape;
            if (cfg.preprocess.expected_shape && prep.meta.shape != *cfg.preprocess.expected_shape)
                throw DataError("preprocessed shape (" + std::to_string(prep.meta.shape[0]) + "," +
                                std::to_string(prep.meta.shape[1]) + "," +
                                std::to_string(prep.meta.shape[2]) +
                                ") does not match preprocess.expected_shape");
        }
        std::string rel = "volumes/" + items[i].subject + "_m" + std::to_string(items[i].month) +
                          ".nii.gz";
        nifti::write_volume(prep_dir / rel, prep);
        out_manifest.rows.push_back({items[i].subject, std::to_string(items[i].month),
                                     manifest.rows[i][static_cast<size_t>(c_in)], rel, "ok"});
    }
    write_csv(prep_dir / "manifest.csv", out_manifest);

    json summary;
    summary["n_volumes"] = items.size();
    summary["global_box"] = {{"lo", box.lo}, {"hi", box.hi}};
    summary["output_shape"] = out_shape;
    summary["threshold"] = cfg.preprocess.threshold;
    summary["smooth_sigma"] = cfg.preprocess.smooth_sigma;
    summary["normalized"] = cfg.preprocess.normalize;
    write_text_file(prep_dir / "summary.json", summary.dump(2));
    audit.write_ndjson(prep_dir / "audit.ndjson");
}

// ---------------------------------------------------------------------------
// build-cohort
// ---------------------------------------------------------------------------

cohort::CohortStats run_build_cohort(const config::ExperimentConfig& cfg) {
    CsvTable visits = read_csv(cfg.paths.visit_table);
    auto ds = cohort::build_conversion_dataset(visits, cfg.cohort);
    auto dir = work(cfg) / "cohort";
    ensure_dir(dir);
    write_text_file(dir / "examples.json", cohort::dataset_to_json(ds));
    write_text_file(dir / "stats.json", cohort::stats_to_json(ds.stats));
    ds.audit.write_ndjson(dir / "audit.ndjson");
    return ds.stats;
}

// ---------------------------------------------------------------------------
// train-embedding / extract-embeddings
// ---------------------------------------------------------------------------

void run_train_embedding(const config::ExperimentConfig& cfg) {
    auto vs = load_prep_volumes(cfg);
    auto index = vs.index();
    AuditLog audit;
    auto corpus = build_corpus(cfg, vs, index, &audit);

    nets::NetConfig ncfg = cfg.embedding_net;
    resolve_input_shape(ncfg, vs.shape());
    auto model = nets::build_embedding_net(ncfg);
    auto hist = embedding::train_embedding(model, corpus, cfg.embed_train, cfg.histloss,
                                           cfg.embed_holdout_fraction);

    auto dir = work(cfg) / "embedding";
    ensure_dir(dir);
    json extra;
    extra["n_bins"] = cfg.histloss.n_bins;
    extra["best_epoch"] = hist.best_epoch;
    extra["holdout_subjects"] = hist.holdout_subjects;
    extra["corpus_size"] = corpus.size();
    nets::save_checkpoint(model, dir / "checkpoint.ckpt",
                          provenance_sidecar(cfg, cfg.embed_train.seed, "embedding", extra));
    write_text_file(dir / "history.csv", hist.to_csv());
    audit.write_ndjson(dir / "audit.ndjson");
}

void run_extract_embeddings(const config::ExperimentConfig& cfg) {
    auto ckpt = work(cfg) / "embedding" / "checkpoint.ckpt";
    if (!std::filesystem::exists(ckpt))
        throw DataError("embedding checkpoint not found (run `train-embedding` first): " +
                        ckpt.string());
    auto model = nets::load_checkpoint(ckpt);
    auto vs = load_prep_volumes(cfg);
    auto index = vs.index();
    auto corpus = build_corpus(cfg, vs, index, nullptr);
    auto table = embedding::extract_embeddings(model, corpus, 32);
    write_text_file(embeddings_csv_path(cfg), table.to_csv());
}

// ---------------------------------------------------------------------------
// train-cnn
// ---------------------------------------------------------------------------

void run_train_cnn(const config::ExperimentConfig& cfg, const std::string& arch, int fold_index) {
    if (arch != "voxcnn" && arch != "resnet3d")
        throw ConfigError("train-cnn: arch must be voxcnn or resnet3d");
    auto ds = load_dataset(cfg);
    auto vs = load_prep_volumes(cfg);
    auto index = vs.index();

    std::set<std::string> subject_set;
    for (const auto& ex : ds.examples) subject_set.insert(ex.subject_id);
    std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
    auto plan = evalcv::group_kfold(subjects, cfg.cv.k, cfg.cv.val_fraction, cfg.cv.seed);
    if (fold_index < 0 || fold_index >= cfg.cv.k)
        throw ConfigError("train-cnn: fold index out of range");
    const auto& fold = plan.folds[static_cast<size_t>(fold_index)];

    std::vector<trainer::TrainSample> train, val;
    for (const auto& ex : ds.examples) {
        auto it = index.find({ex.subject_id, ex.month});
        if (it == index.end()) continue;
        trainer::TrainSample s;
        s.subject_id = ex.subject_id;
        s.month = ex.month;
        s.label = ex.label == cohort::ConversionLabel::Converged ? 1 : 0;
        s.volume = it->second;
        if (fold.test.count(ex.subject_id)) continue;  // held out entirely
        (fold.val.count(ex.subject_id) ? val : train).push_back(s);
    }

    nets::NetConfig ncfg = arch == "voxcnn" ? cfg.voxcnn : cfg.resnet3d;
    resolve_input_shape(ncfg, vs.shape());
    auto model = nets::build_model(arch, ncfg);
    trainer::TrainConfig tcfg = cfg.cnn_train;
    tcfg.batch_size = arch == "voxcnn" ? cfg.voxcnn_batch_size : cfg.resnet_batch_size;
    auto hist = trainer::train_classifier(model, train, val, tcfg);

    auto dir = work(cfg) / "cnn";
    ensure_dir(dir);
    std::string stem = arch + "_fold" + std::to_string(fold_index);
    json extra;
    extra["fold"] = fold_index;
    extra["best_epoch"] = hist.best_epoch;
    extra["train_samples"] = train.size();
    extra["val_samples"] = val.size();
    nets::save_checkpoint(model, dir / (stem + ".ckpt"),
                          provenance_sidecar(cfg, tcfg.seed, "training", extra));
    write_text_file(dir / (stem + "_history.csv"), hist.to_csv());
}

// ---------------------------------------------------------------------------
// train-tabular
// ---------------------------------------------------------------------------

void run_train_tabular(const config::ExperimentConfig& cfg, const std::string& data_source,
                       const std::string& kind) {
    evalcv::validate_row({data_source, kind});
    if (data_source == "neuroimaging")
        throw ConfigError("train-tabular: data source must be tabular");
    auto ds = load_dataset(cfg);
    if (ds.examples.empty()) throw DataError("train-tabular: empty conversion dataset");

    AuditLog audit;
    tabular::RawTable raw;
    raw.columns = ds.clinical_columns;
    std::map<tabular::Key, int> label_by_key;
    for (const auto& ex : ds.examples) {
        raw.keys.push_back({ex.subject_id, ex.month});
        raw.cells.push_back(ex.clinical);
        label_by_key[{ex.subject_id, ex.month}] =
            ex.label == cohort::ConversionLabel::Converged ? 1 : 0;
    }

    tabular::FeatureMatrix fm;
    std::string transform_json;
    if (data_source == "clinical" || data_source == "clinical+embedding") {
        std::vector<char> all(raw.keys.size(), 1);
        auto transform = tabular::ClinicalTransform::fit(raw, all, &audit);
        transform_json = transform.to_json();
        fm = transform.apply(raw, &audit);
    }
    if (data_source == "embedding" || data_source == "clinical+embedding") {
        auto path = embeddings_csv_path(cfg);
        if (!std::filesystem::exists(path))
            throw DataError("embeddings not found (run `extract-embeddings` first): " +
                            path.string());
        auto table = embedding::EmbeddingTable::from_csv_text(read_text_file(path));
        if (data_source == "embedding") {
            tabular::FeatureMatrix all = tabular::matrix_from_embeddings(table);
            std::vector<size_t> keep;
            for (size_t r = 0; r < all.keys.size(); ++r)
                if (label_by_key.count(all.keys[r])) keep.push_back(r);
            fm = tabular::submatrix(all, keep);
        } else {
            fm = tabular::fuse_features(fm, table, &audit);
        }
    }

    std::vector<int> y;
    std::vector<std::string> groups;
    for (const auto& key : fm.keys) {
        y.push_back(label_by_key.at(key));
        groups.push_back(key.first);
    }
    auto spec = kind == "logreg" ? config::logreg_spec(cfg) : config::gbt_spec(cfg);
    auto fitted = tabular::fit_tabular(spec, fm, y, groups, &audit);

    auto dir = work(cfg) / "tabular";
    ensure_dir(dir);
    std::string stem = data_source + "_" + kind;
    std::replace(stem.begin(), stem.end(), '+', '_');
    write_text_file(dir / (stem + ".json"), fitted.to_json());
    if (!transform_json.empty())
        write_text_file(dir / (data_source == "clinical+embedding" ? "clinical_embedding_transform.json"
                                                                   : "clinical_transform.json"),
                        transform_json);
    json extra;
    extra["inner_cv_auc"] = fitted.inner_cv_auc;
    extra["chosen_params"] = fitted.chosen_params;
    extra["n_rows"] = fm.keys.size();
    extra["columns"] = fm.columns.size();
    write_text_file(dir / (stem + "_sidecar.json"),
                    provenance_sidecar(cfg, spec.seed, "tabular", extra));
    audit.write_ndjson(dir / (stem + "_audit.ndjson"));
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void run_evaluate(const config::ExperimentConfig& cfg) {
    auto ds = load_dataset(cfg);
    auto rows = cfg.rows.empty() ? evalcv::default_experiment_rows() : cfg.rows;

    auto vs = load_prep_volumes(cfg);
    auto index = vs.index();
    auto corpus = build_corpus(cfg, vs, index, nullptr);

    evalcv::ExperimentSettings settings = config::experiment_settings(cfg);
    resolve_input_shape(settings.voxcnn_cfg, vs.shape());
    resolve_input_shape(settings.resnet_cfg, vs.shape());
    resolve_input_shape(settings.embed_cfg, vs.shape());

    embedding::EmbeddingTable table;
    evalcv::ExperimentInputs inputs;
    inputs.dataset = &ds;
    inputs.volumes = &index;
    inputs.embed_corpus = &corpus;
    if (!settings.leakage_safe) {
        auto path = embeddings_csv_path(cfg);
        if (!std::filesystem::exists(path))
            throw DataError("paper_faithful mode needs extracted embeddings: " + path.string());
        table = embedding::EmbeddingTable::from_csv_text(read_text_file(path));
        inputs.embed_table = &table;
    }

    auto result = evalcv::run_experiment(rows, inputs, settings);

    auto dir = work(cfg) / "results";
    ensure_dir(dir);

    // results.csv: one row per experiment x metric
    CsvTable results;
    results.header = {"data", "method", "metric", "mean", "std", "n_folds", "per_fold"};
    for (const auto& rep : result.reports) {
        for (const auto& name : metrics::kMetricNames) {
            auto it = rep.aggregated.find(name);
            if (it == rep.aggregated.end()) continue;
            std::string per_fold;
            for (const auto& rec : rep.per_fold) {
                auto v = metrics::metric_by_name(rec, name);
                if (!per_fold.empty()) per_fold += ";";
                per_fold += v ? fmt_g(*v) : "undefined";
            }
            results.rows.push_back({rep.data_source, rep.method, name, fmt_g(it->second.mean),
                                    fmt_g(it->second.stddev), std::to_string(it->second.n),
                                    per_fold});
        }
    }
    write_csv(dir / "results.csv", results);

    // rendered text table, one row per data/method
    std::ostringstream table_txt;
    table_txt << "Data / Method                 ";
    for (const auto& name : metrics::kMetricNames) {
        table_txt << " | ";
        table_txt.width(12);
        table_txt << name;
    }
    table_txt << "\n" << std::string(30 + 15 * metrics::kMetricNames.size(), '-') << "\n";
    for (const auto& rep : result.reports) {
        std::string label = rep.data_source + " / " + rep.method;
        table_txt << label << std::string(label.size() < 30 ? 30 - label.size() : 1, ' ');
        for (const auto& name : metrics::kMetricNames) {
            table_txt << " | ";
            auto it = rep.aggregated.find(name);
            std::string cell = it == rep.aggregated.end()
                                   ? "undefined"
                                   : metrics::format_mean_std(it->second.mean, it->second.stddev);
            table_txt.width(12);
            table_txt << cell;
        }
        table_txt << "\n";
    }
    write_text_file(dir / "table.txt", table_txt.str());

    CsvTable scores;
    scores.header = {"data", "method", "repeat", "fold", "subject_id", "month", "label", "score"};
    for (const auto& s : result.scores)
        scores.rows.push_back({s.data_source, s.method, std::to_string(s.repeat_idx),
                               std::to_string(s.fold), s.subject_id, std::to_string(s.month),
                               std::to_string(s.label), fmt_g(s.score)});
    write_csv(dir / "scores.csv", scores);

    json plans = json::array();
    for (const auto& plan : result.plans) plans.push_back(json::parse(plan.to_json()));
    write_text_file(dir / "fold_plans.json", plans.dump(2));
    result.audit.write_ndjson(dir / "audit.ndjson");

    json digests;
    for (const auto& [row, ds_list] : result.model_digests) digests[row] = ds_list;
    write_text_file(dir / "model_digests.json", digests.dump(2));
}

// ---------------------------------------------------------------------------
// visualize
// ---------------------------------------------------------------------------

void run_visualize(const config::ExperimentConfig& cfg) {
    auto path = embeddings_csv_path(cfg);
    if (!std::filesystem::exists(path))
        throw DataError("embeddings not found (run `extract-embeddings` first): " + path.string());
    auto table = embedding::EmbeddingTable::from_csv_text(read_text_file(path));

    std::map<tabular::Key, cohort::Diagnosis> diag;
    for (const auto& v : load_visit_meta(cfg.paths.visit_table))
        diag[{v.subject_id, v.month}] = v.diagnosis;
    std::map<tabular::Key, int> conversion;
    if (std::filesystem::exists(work(cfg) / "cohort" / "examples.json")) {
        auto ds = load_dataset(cfg);
        for (const auto& ex : ds.examples)
            conversion[{ex.subject_id, ex.month}] =
                ex.label == cohort::ConversionLabel::Converged ? 1 : 0;
    }

    Eigen::MatrixXd points(static_cast<int64_t>(table.values.size()), table.dim);
    viz::VisualizationInputs in;
    for (size_t r = 0; r < table.values.size(); ++r) {
        for (int c = 0; c < table.dim; ++c)
            points(static_cast<int64_t>(r), c) = table.values[r][static_cast<size_t>(c)];
        tabular::Key key{table.subject_ids[r], table.months[r]};
        auto it = diag.find(key);
        in.diagnosis.push_back(it == diag.end() ? "MCI" : cohort::to_string(it->second));
        auto cit = conversion.find(key);
        in.conversion.push_back(cit == conversion.end() ? -1 : cit->second);
    }

    viz::TsneConfig tcfg;
    tcfg.perplexity = cfg.viz.perplexity;
    tcfg.seed = cfg.viz.seed;
    tcfg.n_iter = cfg.viz.n_iter;
    AuditLog audit;
    in.coords = viz::project_2d(points, tcfg, &audit);

    auto dir = work(cfg) / "figures";
    ensure_dir(dir);
    CsvTable coords;
    coords.header = {"subject_id", "month", "x", "y", "diagnosis", "conversion"};
    for (size_t r = 0; r < table.values.size(); ++r)
        coords.rows.push_back({table.subject_ids[r], std::to_string(table.months[r]),
                               fmt_g(in.coords(static_cast<int64_t>(r), 0)),
                               fmt_g(in.coords(static_cast<int64_t>(r), 1)), in.diagnosis[r],
                               std::to_string(in.conversion[r])});
    write_csv(dir / "tsne_coords.csv", coords);

    viz::render_figures(in, dir, cfg.viz.grid_n, cfg.viz.bandwidth_scale, &audit);
    audit.write_ndjson(dir / "audit.ndjson");
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

std::string run_report(const config::ExperimentConfig& cfg,
                       const std::filesystem::path& reference_path) {
    if (!std::filesystem::exists(reference_path))
        throw DataError("reference expectations file not found: " + reference_path.string());
    json ref = json::parse(read_text_file(reference_path));

    std::ostringstream out;
    out << "Conversion prediction report\n";
    out << "============================\n\n";

    auto stats_path = work(cfg) / "cohort" / "stats.json";
    if (std::filesystem::exists(stats_path)) {
        json stats = json::parse(read_text_file(stats_path));
        out << "Cohort (measured vs reference):\n";
        const json& rc = ref["cohort"];
        out << "  stable subjects:    " << stats.value("subjects_stable", 0) << " (reference "
            << rc.value("subjects_stable", 0) << ")\n";
        out << "  converged subjects: " << stats.value("subjects_converged", 0) << " (reference "
            << rc.value("subjects_converged", 0) << ")\n";
        out << "  stable samples:     " << stats.value("samples_stable", 0) << " (reference "
            << rc.value("samples_stable", 0) << ")\n";
        out << "  converged samples:  " << stats.value("samples_converged", 0) << " (reference "
            << rc.value("samples_converged", 0) << ")\n\n";
    }

    std::map<std::string, std::map<std::string, std::pair<std::string, std::string>>> measured;
    auto results_path = results_csv_path(cfg);
    if (std::filesystem::exists(results_path)) {
        CsvTable t = read_csv(results_path);
        for (const auto& row : t.rows) {
            double mean, sd;
            parse_double(row[3], mean);
            parse_double(row[4], sd);
            measured[row[0] + "/" + row[1]][row[2]] = {format_double(mean, 2),
                                                       format_double(sd, 2)};
        }
    }

    out << "Results (measured vs reference; reference values correspond to the\n"
           "full-scale cohort and are not expected from synthetic runs):\n\n";
    for (const auto& jrow : ref["rows"]) {
        std::string key = jrow.at("data").get<std::string>() + "/" +
                          jrow.at("method").get<std::string>();
        out << key << "\n";
        for (const auto& name : metrics::kMetricNames) {
            if (!jrow.contains(name)) continue;
            auto rv = jrow[name];
            out << "  " << name << ": reference " << format_double(rv.at("mean").get<double>(), 2)
                << " ± " << format_double(rv.at("std").get<double>(), 2);
            auto mit = measured.find(key);
            if (mit != measured.end() && mit->second.count(name)) {
                const auto& [m, s] = mit->second.at(name);
                out << ", measured " << m << " ± " << s;
            } else {
                out << ", measured n/a";
            }
            out << "\n";
        }
    }
    std::string text = out.str();
    write_text_file(work(cfg) / "results" / "report.txt", text);
    return text;
}

}  // namespace convpred::pipeline
