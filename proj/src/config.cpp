#include "convpred/config.hpp"

#include <json.hpp>

#include <cstdlib>

#include "convpred/common.hpp"

namespace convpred::config {

using nlohmann::json;

namespace {

json train_to_json(const trainer::TrainConfig& t) {
    return {{"lr0", t.lr0},
            {"lr_drop_epochs", t.lr_drop_epochs},
            {"lr_drop_factor", t.lr_drop_factor},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"seed", t.seed}};
}

trainer::TrainConfig train_from_json(const json& j, trainer::TrainConfig base) {
    base.lr0 = j.value("lr0", base.lr0);
    base.lr_drop_epochs = j.value("lr_drop_epochs", base.lr_drop_epochs);
    base.lr_drop_factor = j.value("lr_drop_factor", base.lr_drop_factor);
    base.momentum = j.value("momentum", base.momentum);
    base.weight_decay = j.value("weight_decay", base.weight_decay);
    base.epochs = j.value("epochs", base.epochs);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.seed = j.value("seed", base.seed);
    return base;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["paths"] = {{"visit_table", cfg.paths.visit_table},
                  {"volume_manifest", cfg.paths.volume_manifest},
                  {"work_dir", cfg.paths.work_dir}};
    j["cohort"] = {{"horizon_months", cfg.cohort.horizon_months},
                   {"treat_reversion_as_stable", cfg.cohort.treat_reversion_as_stable}};
    j["preprocess"] = {{"threshold", cfg.preprocess.threshold},
                       {"smooth_sigma", cfg.preprocess.smooth_sigma},
                       {"normalize", cfg.preprocess.normalize}};
    if (cfg.preprocess.expected_shape)
        j["preprocess"]["expected_shape"] = *cfg.preprocess.expected_shape;
    j["nets"] = {{"voxcnn", json::parse(nets::net_config_to_json(cfg.voxcnn))},
                 {"resnet3d", json::parse(nets::net_config_to_json(cfg.resnet3d))},
                 {"embedding", json::parse(nets::net_config_to_json(cfg.embedding_net))}};
    j["train"] = train_to_json(cfg.cnn_train);
    j["train"]["voxcnn_batch_size"] = cfg.voxcnn_batch_size;
    j["train"]["resnet_batch_size"] = cfg.resnet_batch_size;
    j["embedding_train"] = train_to_json(cfg.embed_train);
    j["embedding_train"]["holdout_fraction"] = cfg.embed_holdout_fraction;
    j["histloss"] = {{"n_bins", cfg.histloss.n_bins}};
    j["tabular"] = {{"logreg_c", cfg.tabular.logreg_c},
                    {"gbt_depth", cfg.tabular.gbt_depth},
                    {"gbt_trees", cfg.tabular.gbt_trees},
                    {"gbt_learning_rate", cfg.tabular.gbt_learning_rate},
                    {"inner_folds", cfg.tabular.inner_folds}};
    j["cv"] = {{"k", cfg.cv.k},
               {"val_fraction", cfg.cv.val_fraction},
               {"seed", cfg.cv.seed},
               {"repeats", cfg.cv.repeats}};
    j["viz"] = {{"perplexity", cfg.viz.perplexity},
                {"seed", cfg.viz.seed},
                {"n_iter", cfg.viz.n_iter},
                {"grid_n", cfg.viz.grid_n},
                {"bandwidth_scale", cfg.viz.bandwidth_scale}};
    j["mode"] = cfg.mode;
    if (!cfg.rows.empty()) {
        json rows = json::array();
        for (const auto& row : cfg.rows)
            rows.push_back({{"data", row.data_source}, {"method", row.method}});
        j["rows"] = rows;
    }
    j["synth"] = {{"seed", cfg.synth.seed},
                  {"n_subjects", cfg.synth.n_subjects},
                  {"converter_fraction", cfg.synth.converter_fraction},
                  {"nc_fraction", cfg.synth.nc_fraction},
                  {"ad_fraction", cfg.synth.ad_fraction},
                  {"visit_months", cfg.synth.visit_months},
                  {"volume_shape", cfg.synth.volume_shape},
                  {"n_clinical_features", cfg.synth.n_clinical_features},
                  {"clinical_separation", cfg.synth.clinical_separation},
                  {"missing_rate", cfg.synth.missing_rate},
                  {"ventricle_base", cfg.synth.ventricle_base},
                  {"ventricle_step", cfg.synth.ventricle_step},
                  {"noise_level", cfg.synth.noise_level},
                  {"orientations", cfg.synth.orientations}};
    return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig cfg;
    cfg.schema_version = j.value("schema_version", 1);
    if (cfg.schema_version != 1)
        throw ConfigError("unsupported config schema_version " +
                          std::to_string(cfg.schema_version));
    if (j.contains("paths")) {
        const json& p = j["paths"];
        cfg.paths.visit_table = p.value("visit_table", cfg.paths.visit_table);
        cfg.paths.volume_manifest = p.value("volume_manifest", cfg.paths.volume_manifest);
        cfg.paths.work_dir = p.value("work_dir", cfg.paths.work_dir);
    }
    if (j.contains("cohort")) {
        cfg.cohort.horizon_months = j["cohort"].value("horizon_months", 60);
        cfg.cohort.treat_reversion_as_stable =
            j["cohort"].value("treat_reversion_as_stable", true);
    }
    if (j.contains("preprocess")) {
        const json& p = j["preprocess"];
        cfg.preprocess.threshold = p.value("threshold", 0.0);
        cfg.preprocess.smooth_sigma = p.value("smooth_sigma", 0.0);
        cfg.preprocess.normalize = p.value("normalize", true);
        if (p.contains("expected_shape")) {
            auto v = p["expected_shape"].get<std::vector<int>>();
            if (v.size() != 3) throw ConfigError("expected_shape must have 3 dims");
            cfg.preprocess.expected_shape = {v[0], v[1], v[2]};
        }
    }
    cfg.voxcnn.arch = "voxcnn";
    cfg.resnet3d.arch = "resnet3d";
    cfg.embedding_net.arch = "resnet3d";
    if (j.contains("nets")) {
        const json& n = j["nets"];
        if (n.contains("voxcnn")) cfg.voxcnn = nets::net_config_from_json(n["voxcnn"].dump());
        if (n.contains("resnet3d"))
            cfg.resnet3d = nets::net_config_from_json(n["resnet3d"].dump());
        if (n.contains("embedding"))
            cfg.embedding_net = nets::net_config_from_json(n["embedding"].dump());
        cfg.voxcnn.arch = "voxcnn";
        cfg.resnet3d.arch = "resnet3d";
        cfg.embedding_net.arch = "resnet3d";
    }
    if (j.contains("train")) {
        cfg.cnn_train = train_from_json(j["train"], cfg.cnn_train);
        cfg.voxcnn_batch_size = j["train"].value("voxcnn_batch_size", cfg.voxcnn_batch_size);
        cfg.resnet_batch_size = j["train"].value("resnet_batch_size", cfg.resnet_batch_size);
    }
    if (j.contains("embedding_train")) {
        cfg.embed_train = train_from_json(j["embedding_train"], cfg.embed_train);
        cfg.embed_holdout_fraction =
            j["embedding_train"].value("holdout_fraction", cfg.embed_holdout_fraction);
    }
    if (j.contains("histloss")) cfg.histloss.n_bins = j["histloss"].value("n_bins", 100);
    if (j.contains("tabular")) {
        const json& t = j["tabular"];
        cfg.tabular.logreg_c = t.value("logreg_c", cfg.tabular.logreg_c);
        cfg.tabular.gbt_depth = t.value("gbt_depth", cfg.tabular.gbt_depth);
        cfg.tabular.gbt_trees = t.value("gbt_trees", cfg.tabular.gbt_trees);
        cfg.tabular.gbt_learning_rate =
            t.value("gbt_learning_rate", cfg.tabular.gbt_learning_rate);
        cfg.tabular.inner_folds = t.value("inner_folds", cfg.tabular.inner_folds);
    }
    if (j.contains("cv")) {
        const json& c = j["cv"];
        cfg.cv.k = c.value("k", cfg.cv.k);
        cfg.cv.val_fraction = c.value("val_fraction", cfg.cv.val_fraction);
        cfg.cv.seed = c.value("seed", cfg.cv.seed);
        cfg.cv.repeats = c.value("repeats", cfg.cv.repeats);
    }
    if (j.contains("viz")) {
        const json& v = j["viz"];
        cfg.viz.perplexity = v.value("perplexity", cfg.viz.perplexity);
        cfg.viz.seed = v.value("seed", cfg.viz.seed);
        cfg.viz.n_iter = v.value("n_iter", cfg.viz.n_iter);
        cfg.viz.grid_n = v.value("grid_n", cfg.viz.grid_n);
        cfg.viz.bandwidth_scale = v.value("bandwidth_scale", cfg.viz.bandwidth_scale);
    }
    cfg.mode = j.value("mode", cfg.mode);
    if (j.contains("rows"))
        for (const auto& r : j["rows"])
            cfg.rows.push_back({r.at("data").get<std::string>(),
                                r.at("method").get<std::string>()});
    if (j.contains("synth")) {
        const json& s = j["synth"];
        cfg.synth.seed = s.value("seed", cfg.synth.seed);
        cfg.synth.n_subjects = s.value("n_subjects", cfg.synth.n_subjects);
        cfg.synth.converter_fraction =
            s.value("converter_fraction", cfg.synth.converter_fraction);
        cfg.synth.nc_fraction = s.value("nc_fraction", cfg.synth.nc_fraction);
        cfg.synth.ad_fraction = s.value("ad_fraction", cfg.synth.ad_fraction);
        cfg.synth.visit_months = s.value("visit_months", cfg.synth.visit_months);
        if (s.contains("volume_shape")) {
            auto v = s["volume_shape"].get<std::vector<int>>();
            if (v.size() != 3) throw ConfigError("synth volume_shape must have 3 dims");
            cfg.synth.volume_shape = {v[0], v[1], v[2]};
        }
        cfg.synth.n_clinical_features =
            s.value("n_clinical_features", cfg.synth.n_clinical_features);
        cfg.synth.clinical_separation =
            s.value("clinical_separation", cfg.synth.clinical_separation);
        cfg.synth.missing_rate = s.value("missing_rate", cfg.synth.missing_rate);
        cfg.synth.ventricle_base = s.value("ventricle_base", cfg.synth.ventricle_base);
        cfg.synth.ventricle_step = s.value("ventricle_step", cfg.synth.ventricle_step);
        cfg.synth.noise_level = s.value("noise_level", cfg.synth.noise_level);
        cfg.synth.orientations = s.value("orientations", cfg.synth.orientations);
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<uint64_t> seed_override) {
    if (!std::filesystem::exists(path))
        throw ConfigError("config file not found: " + path.string());
    ExperimentConfig cfg = config_from_json(read_text_file(path));

    // relative paths are anchored at the config file's directory
    auto base = std::filesystem::absolute(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative())
            p = (base / p).lexically_normal().string();
    };
    resolve(cfg.paths.visit_table);
    resolve(cfg.paths.volume_manifest);
    resolve(cfg.paths.work_dir);

    if (const char* env = std::getenv("CONVPRED_WORK_DIR"); env && *env)
        cfg.paths.work_dir = env;

    if (seed_override) {
        cfg.cv.seed = *seed_override;
        cfg.cnn_train.seed = mix_seed(*seed_override, 0x01);
        cfg.embed_train.seed = mix_seed(*seed_override, 0x02);
        cfg.voxcnn.seed = mix_seed(*seed_override, 0x03);
        cfg.resnet3d.seed = mix_seed(*seed_override, 0x04);
        cfg.embedding_net.seed = mix_seed(*seed_override, 0x05);
        cfg.viz.seed = mix_seed(*seed_override, 0x06);
        cfg.synth.seed = *seed_override;
    }
    return cfg;
}

void validate_config(const ExperimentConfig& cfg, bool check_paths) {
    if (cfg.cohort.horizon_months <= 0)
        throw ConfigError("cohort.horizon_months must be positive");
    if (cfg.preprocess.threshold < 0.0) throw ConfigError("preprocess.threshold must be >= 0");
    trainer::validate_train_config(cfg.cnn_train);
    trainer::validate_train_config(cfg.embed_train);
    if (cfg.histloss.n_bins < 2) throw ConfigError("histloss.n_bins must be >= 2");
    if (cfg.cv.k < 2) throw ConfigError("cv.k must be >= 2");
    if (cfg.cv.repeats < 1) throw ConfigError("cv.repeats must be >= 1");
    if (cfg.mode != "leakage_safe" && cfg.mode != "paper_faithful")
        throw ConfigError("mode must be leakage_safe or paper_faithful");
    if (cfg.tabular.logreg_c.empty() || cfg.tabular.gbt_depth.empty() ||
        cfg.tabular.gbt_trees.empty() || cfg.tabular.gbt_learning_rate.empty())
        throw ConfigError("tabular grids must not be empty");
    for (const auto& row : cfg.rows) evalcv::validate_row(row);
    if (check_paths) {
        if (!std::filesystem::exists(cfg.paths.visit_table))
            throw ConfigError("visit table not found: " + cfg.paths.visit_table);
        if (!std::filesystem::exists(cfg.paths.volume_manifest))
            throw ConfigError("volume manifest not found: " + cfg.paths.volume_manifest);
    }
}

tabular::TabularModelSpec logreg_spec(const ExperimentConfig& cfg) {
    tabular::TabularModelSpec spec;
    spec.kind = "logreg";
    for (double c : cfg.tabular.logreg_c) spec.grid.push_back({{"C", c}});
    spec.inner_folds = cfg.tabular.inner_folds;
    spec.seed = cfg.cv.seed;
    return spec;
}

tabular::TabularModelSpec gbt_spec(const ExperimentConfig& cfg) {
    tabular::TabularModelSpec spec;
    spec.kind = "gbt";
    for (int depth : cfg.tabular.gbt_depth)
        for (int trees : cfg.tabular.gbt_trees)
            for (double lr : cfg.tabular.gbt_learning_rate)
                spec.grid.push_back({{"depth", static_cast<double>(depth)},
                                     {"trees", static_cast<double>(trees)},
                                     {"learning_rate", lr}});
    spec.inner_folds = cfg.tabular.inner_folds;
    spec.seed = cfg.cv.seed;
    return spec;
}

evalcv::ExperimentSettings experiment_settings(const ExperimentConfig& cfg) {
    evalcv::ExperimentSettings s;
    s.k = cfg.cv.k;
    s.val_fraction = cfg.cv.val_fraction;
    s.seed = cfg.cv.seed;
    s.repeats = cfg.cv.repeats;
    s.leakage_safe = cfg.mode == "leakage_safe";
    s.voxcnn_cfg = cfg.voxcnn;
    s.resnet_cfg = cfg.resnet3d;
    s.embed_cfg = cfg.embedding_net;
    s.cnn_train = cfg.cnn_train;
    s.voxcnn_batch_size = cfg.voxcnn_batch_size;
    s.resnet_batch_size = cfg.resnet_batch_size;
    s.embed_train = cfg.embed_train;
    s.histloss = cfg.histloss;
    s.embed_holdout_fraction = cfg.embed_holdout_fraction;
    s.logreg_spec = logreg_spec(cfg);
    s.gbt_spec = gbt_spec(cfg);
    return s;
}

}  // namespace convpred::config
